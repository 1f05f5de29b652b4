#include "eppo/rl/context.hpp"

namespace eppo::rl {

nn::StepInput make_token(const cmdp::TaskSpec& task, const cmdp::Transition* prev, cmdp::GridPos state, double ctg,
                         bool episode_start, double rtg) {
    nn::StepInput t;
    t.state = task.cell_index(state);
    if (prev != nullptr) {
        t.prev_action = static_cast<int>(prev->action);
        t.prev_arrival = task.cell_index(prev->next_state);
        t.prev_reward = prev->reward;
        t.prev_cost = prev->cost;
    }
    t.ctg = ctg;
    t.rtg = rtg;
    t.episode_start = episode_start;
    return t;
}

std::vector<nn::StepInput> history_tokens(const cmdp::TaskSpec& task, const std::vector<cmdp::Episode>& episodes) {
    std::vector<nn::StepInput> out;
    const cmdp::Transition* prev = nullptr;
    for (const auto& ep : episodes) {
        for (std::size_t i = 0; i < ep.size(); ++i) {
            const auto& tr = ep.transitions[i];
            out.push_back(make_token(task, prev, tr.state, tr.ctg, i == 0));
            prev = &tr;
        }
    }
    return out;
}

ContextRunner::ContextRunner(const nn::SequenceModel& model)
    : session_(model), max_len_(model.spec().max_seq_len) {}

void ContextRunner::clear() {
    session_.clear();
    episodes_.clear();
    open_ = false;
    dropped_ = 0;
}

int ContextRunner::context_length() const { return session_.length(); }

void ContextRunner::end_episode() { open_ = false; }

nn::StepOutput ContextRunner::next(const nn::StepInput& token) {
    if (!open_) {
        episodes_.emplace_back();
        open_ = true;
    }
    if (session_.length() >= max_len_) {
        if (static_cast<int>(episodes_.back().size()) >= max_len_) {
            throw nn::TruncationError("a single episode exceeds the context of " + std::to_string(max_len_) +
                                      " tokens");
        }
        int kept = session_.length();
        while (kept >= max_len_ && episodes_.size() > 1) {
            kept -= static_cast<int>(episodes_.front().size());
            episodes_.pop_front();
            ++dropped_;
        }
        session_.clear();
        for (const auto& ep : episodes_) {
            for (const auto& tok : ep) {
                session_.push(tok);
            }
        }
    }
    episodes_.back().push_back(token);
    return session_.push(token);
}

}  // namespace eppo::rl
