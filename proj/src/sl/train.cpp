#include "eppo/sl/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace eppo::sl {

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p);
    if (!os) {
        throw DataError("cannot write " + p.string());
    }
    os << text;
}

std::string losses_csv(const std::vector<double>& losses) {
    std::ostringstream os;
    os.precision(17);
    os << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
        os << i + 1 << ',' << losses[i] << '\n';
    }
    return os.str();
}

}  // namespace

Window subsample_context(const SLTrajectory& trajectory, std::size_t max_len, Rng& rng) {
    if (max_len < 1) {
        throw ParameterError("subsample_context: max_len must be >= 1");
    }
    const std::size_t n = trajectory.episodes.size();
    if (n == 0 || trajectory.episodes.front().empty()) {
        throw DataError("subsample_context: trajectory is shorter than one episode");
    }
    const std::size_t total = trajectory.n_steps();
    if (total <= max_len) {
        return {&trajectory, 0, total, Phase::early};
    }
    std::vector<std::vector<std::size_t>> by_phase(3);
    for (std::size_t k = 0; k < n; ++k) {
        by_phase[static_cast<std::size_t>(phase_of(k, n))].push_back(k);
    }
    std::vector<std::size_t> phases;
    for (std::size_t p = 0; p < 3; ++p) {
        if (!by_phase[p].empty()) {
            phases.push_back(p);
        }
    }
    const std::size_t p = phases[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(phases.size()) - 1))];
    const auto& eps = by_phase[p];
    const std::size_t start = eps[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(eps.size()) - 1))];
    std::size_t avail = 0;
    for (std::size_t k = start; k < n; ++k) {
        avail += trajectory.episodes[k].size();
    }
    return {&trajectory, start, std::min(avail, max_len), static_cast<Phase>(p)};
}

std::vector<nn::StepInput> window_tokens(const Window& w) {
    const SLTrajectory& tr = *w.trajectory;
    if (tr.to_go.size() != tr.episodes.size()) {
        throw DataError("window over a trajectory without return/cost-to-go annotations");
    }
    std::vector<nn::StepInput> out;
    out.reserve(w.n_tokens);
    const cmdp::Transition* prev = nullptr;
    for (std::size_t k = w.first_episode; k < tr.episodes.size() && out.size() < w.n_tokens; ++k) {
        const auto& ep = tr.episodes[k];
        if (tr.to_go[k].size() != ep.size()) {
            throw DataError("annotation count does not match episode " + std::to_string(k));
        }
        for (std::size_t t = 0; t < ep.size() && out.size() < w.n_tokens; ++t) {
            const auto& x = ep.transitions[t];
            nn::StepInput tok;
            tok.state = tr.task.cell_index(x.state);
            if (prev != nullptr) {
                tok.prev_action = static_cast<int>(prev->action);
                tok.prev_arrival = tr.task.cell_index(prev->next_state);
                tok.prev_reward = prev->reward;
                tok.prev_cost = prev->cost;
            }
            tok.rtg = tr.to_go[k][t].rtg;
            tok.ctg = tr.to_go[k][t].ctg;
            tok.episode_start = t == 0;
            out.push_back(tok);
            prev = &x;
        }
    }
    return out;
}

SLBatch make_sl_batch(const std::vector<Window>& windows) {
    if (windows.empty()) {
        throw PreconditionError("make_sl_batch: no windows");
    }
    SLBatch b;
    for (const Window& w : windows) {
        b.batch.append_sequence(window_tokens(w));
        std::size_t taken = 0;
        const SLTrajectory& tr = *w.trajectory;
        for (std::size_t k = w.first_episode; k < tr.episodes.size() && taken < w.n_tokens; ++k) {
            for (const auto& x : tr.episodes[k].transitions) {
                if (taken == w.n_tokens) {
                    break;
                }
                b.actions.push_back(static_cast<int>(x.action));
                ++taken;
            }
        }
    }
    return b;
}

nn::Var sl_loss_discrete(nn::Graph& g, const nn::SequenceModel& model, const SLBatch& batch, bool training,
                         Rng* dropout_rng) {
    if (!model.spec().rtg_channel) {
        throw ParameterError("sl_loss_discrete: model has no return-to-go input");
    }
    const nn::Outputs out = model.forward(g, batch.batch, training, dropout_rng);
    nn::Var loss = nn::cross_entropy(g, out.logits, batch.actions);
    if (!std::isfinite(loss->value(0, 0))) {
        throw NumericError("sl_loss_discrete: non-finite loss");
    }
    return loss;
}

nn::Var sl_loss_continuous(nn::Graph& g, const nn::Var& predicted_mean, const nn::Mat& actions) {
    if (actions.rows() == 0 || predicted_mean->value.rows() != actions.rows() ||
        predicted_mean->value.cols() != actions.cols()) {
        throw DataError("sl_loss_continuous: action annotations do not match the predictions");
    }
    const nn::Var diff = nn::sub(g, predicted_mean, g.constant(actions));
    return nn::scale(g, nn::sum_all(g, nn::mul(g, diff, diff)), 1.0 / static_cast<double>(actions.rows()));
}

nn::ModelSpec SLConfig::default_model() {
    nn::ModelSpec m;
    m.embedding_dim = 64;
    m.hidden_dim = 512;
    m.n_layers = 8;
    m.n_heads = 8;
    m.max_seq_len = 100;
    m.dropout_attn = 0.5;
    m.dropout_resid = 0.1;
    m.dropout_emb = 0.3;
    m.n_states = 81;
    m.n_actions = cmdp::kNumActions;
    m.rtg_channel = true;
    m.critic_heads = false;
    return m;
}

void SLConfig::validate() const {
    model.validate();
    if (!model.rtg_channel) {
        throw ParameterError("SLConfig: the model needs the return-to-go input");
    }
    if (batch_size < 1 || n_updates < 0 || checkpoint_every < 0) {
        throw ParameterError("SLConfig: need batch_size >= 1, n_updates >= 0, checkpoint_every >= 0");
    }
}

json SLConfig::to_json() const {
    return {{"model", model.to_json()},
            {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}, {"clip", adam.clip}}},
            {"batch_size", batch_size},
            {"n_updates", n_updates},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every},
            {"out_dir", out_dir}};
}

SLConfig SLConfig::from_json(const json& j) {
    SLConfig c;
    try {
        read(j, "batch_size", c.batch_size);
        read(j, "n_updates", c.n_updates);
        read(j, "seed", c.seed);
        read(j, "checkpoint_every", c.checkpoint_every);
        read(j, "out_dir", c.out_dir);
        if (j.contains("adam")) {
            const json& a = j.at("adam");
            read(a, "lr", c.adam.lr);
            read(a, "beta1", c.adam.beta1);
            read(a, "beta2", c.adam.beta2);
            read(a, "eps", c.adam.eps);
            read(a, "clip", c.adam.clip);
        }
        if (j.contains("model")) {
            json merged = c.model.to_json();
            merged.update(j.at("model"));
            c.model = nn::ModelSpec::from_json(merged);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("SLConfig: ") + e.what());
    }
    c.validate();
    return c;
}

SLResult train_sl(const SLConfig& cfg, const SLDataset& data, const SLHook& hook) {
    cfg.validate();
    if (cfg.n_updates > 0 && data.trajectories.empty()) {
        throw PreconditionError("train_sl: empty dataset");
    }
    for (const auto& tr : data.trajectories) {
        tr.validate();
        if (tr.task.n_cells() != cfg.model.n_states) {
            throw ParameterError("train_sl: dataset grid does not match the model vocabulary");
        }
    }
    nn::SequenceModel model(cfg.model, derive_seed(cfg.seed, 0));
    nn::Adam opt(model.parameters(), cfg.adam);
    Rng sample_rng(derive_seed(cfg.seed, 1));
    Rng dropout_rng(derive_seed(cfg.seed, 2));
    std::filesystem::path out;
    if (!cfg.out_dir.empty()) {
        out = cfg.out_dir;
        std::filesystem::create_directories(out);
        write_text(out / "config.json", cfg.to_json().dump(2));
    }
    int step = 0;
    auto snapshot = [&] {
        nn::Checkpoint ck;
        ck.header = {{"format", "eppo-sl"}, {"model", cfg.model.to_json()}, {"config", cfg.to_json()},
                     {"step", step},        {"adam_steps", opt.steps()}};
        nn::export_model(model, "", ck);
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            ck.tensors.push_back({"adam.m/" + params[i].name, opt.first_moments()[i]});
            ck.tensors.push_back({"adam.v/" + params[i].name, opt.second_moments()[i]});
        }
        ck.rng_state = json::array({nn::serialize_rng(sample_rng), nn::serialize_rng(dropout_rng)}).dump();
        return ck;
    };
    const auto max_len = static_cast<std::size_t>(cfg.model.max_seq_len);
    const int n_traj = static_cast<int>(data.trajectories.size());
    SLResult res;
    for (int s = 1; s <= cfg.n_updates; ++s) {
        std::vector<Window> windows;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& tr = data.trajectories[static_cast<std::size_t>(uniform_int(sample_rng, 0, n_traj - 1))];
            windows.push_back(subsample_context(tr, max_len, sample_rng));
        }
        const SLBatch batch = make_sl_batch(windows);
        double loss_value = 0.0;
        try {
            nn::Graph g;
            model.zero_grad();
            nn::Var loss = sl_loss_discrete(g, model, batch, true, &dropout_rng);
            g.backward(loss);
            std::vector<nn::Mat> saved;
            for (const auto& p : model.parameters()) {
                saved.push_back(p.var->value);
            }
            const auto m = opt.first_moments();
            const auto v = opt.second_moments();
            const long t = opt.steps();
            opt.step();
            bool finite = true;
            for (const auto& p : model.parameters()) {
                finite = finite && p.var->value.allFinite();
            }
            if (!finite) {
                auto& params = model.parameters();
                for (std::size_t i = 0; i < params.size(); ++i) {
                    params[i].var->value = saved[i];
                }
                opt.first_moments() = m;
                opt.second_moments() = v;
                opt.set_steps(t);
                throw NumericError("update produced non-finite parameters");
            }
            loss_value = loss->value(0, 0);
        } catch (const NumericError& e) {
            res.aborted = true;
            res.abort_reason = "step " + std::to_string(s) + ": " + e.what();
            break;
        }
        step = s;
        res.losses.push_back(loss_value);
        if (!out.empty() && cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) {
            nn::write_checkpoint((out / ("ckpt_" + std::to_string(s) + ".bin")).string(), snapshot());
            write_text(out / "losses.csv", losses_csv(res.losses));
        }
        if (hook && !hook(s, loss_value)) {
            break;
        }
    }
    res.checkpoint = snapshot();
    if (!out.empty()) {
        nn::write_checkpoint((out / (res.aborted ? "last_good.bin" : "final.bin")).string(), res.checkpoint);
        write_text(out / "losses.csv", losses_csv(res.losses));
    }
    return res;
}

nn::SequenceModel model_from_checkpoint(const nn::Checkpoint& ckpt) {
    if (!ckpt.header.contains("model")) {
        throw DataError("checkpoint header lacks a model spec");
    }
    nn::SequenceModel m(nn::ModelSpec::from_json(ckpt.header["model"]), 0);
    nn::import_model(m, ckpt.has("online/actor.w") ? "online/" : "", ckpt);
    return m;
}

}  // namespace eppo::sl
