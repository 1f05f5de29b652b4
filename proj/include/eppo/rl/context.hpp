#pragma once

#include <deque>
#include <vector>

#include "eppo/cmdp.hpp"
#include "eppo/nn/model.hpp"

namespace eppo::rl {

/// Token for acting at `state` given the transition that preceded it in the
/// context (null at the very start). `episode_start` marks the first step
/// of an episode.
nn::StepInput make_token(const cmdp::TaskSpec& task, const cmdp::Transition* prev, cmdp::GridPos state, double ctg,
                         bool episode_start, double rtg = 0.0);

/// One token per transition, in order, across all episodes.
std::vector<nn::StepInput> history_tokens(const cmdp::TaskSpec& task, const std::vector<cmdp::Episode>& episodes);

/// Feeds a growing multi-episode context to a frozen model one token at a
/// time. When the context is full the oldest complete episodes are dropped
/// and the cache is rebuilt; an episode is never split.
class ContextRunner {
public:
    explicit ContextRunner(const nn::SequenceModel& model);

    /// Pushes the token for the next step and returns the model outputs.
    /// Throws TruncationError when the current episode alone overflows.
    nn::StepOutput next(const nn::StepInput& token);
    /// Marks the end of the current episode.
    void end_episode();
    void clear();
    int context_length() const;
    std::size_t dropped_episodes() const { return dropped_; }

private:
    nn::InferenceSession session_;
    int max_len_;
    // Token lists per episode still in the window; the last one is current.
    std::deque<std::vector<nn::StepInput>> episodes_;
    bool open_ = false;
    std::size_t dropped_ = 0;
};

}  // namespace eppo::rl
