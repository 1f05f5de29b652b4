#include "eppo/rl/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eppo/rl/context.hpp"

namespace eppo::rl {

namespace {

std::string threshold_name(Threshold t) { return t == Threshold::ctg ? "ctg" : "fixed"; }

Threshold threshold_from(const std::string& s) {
    if (s == "fixed") {
        return Threshold::fixed;
    }
    if (s == "ctg") {
        return Threshold::ctg;
    }
    throw ParameterError("unknown threshold mode '" + s + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

}  // namespace

nn::ModelSpec TrainConfig::default_model() {
    nn::ModelSpec m;
    m.embedding_dim = 64;
    m.hidden_dim = 64;
    m.n_layers = 4;
    m.n_heads = 8;
    m.max_seq_len = 1500;
    m.dropout_attn = 0.0;
    m.dropout_resid = 0.0;
    m.dropout_emb = 0.05;
    m.n_states = 81;
    m.n_actions = cmdp::kNumActions;
    return m;
}

void TrainConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw ParameterError("gamma must lie in (0, 1]");
    }
    if (delta < 0.0 || T_max < 0 || batch_size < 1 || t_max < 1 || K_min < 1 || K_min > K_max) {
        throw ParameterError("TrainConfig: need delta >= 0, T_max >= 0, batch >= 1, t_max >= 1, 1 <= K_min <= K_max");
    }
    if (ctg_min > ctg_max || ctg_min < 0.0) {
        throw ParameterError("TrainConfig: need 0 <= ctg_min <= ctg_max");
    }
    if (!(eta > 0.0) || !(lambda_cap > 0.0) || !(tau > 0.0 && tau <= 1.0) || entropy_coef < 0.0) {
        throw ParameterError("TrainConfig: eta, lambda_cap, tau must be positive (tau <= 1)");
    }
    model.validate();
    if (model.n_states != grid_size * grid_size || model.n_actions != cmdp::kNumActions) {
        throw ParameterError("TrainConfig: model vocabulary does not match the grid");
    }
    if (static_cast<long>(K_max) * t_max > model.max_seq_len) {
        throw ParameterError("TrainConfig: K_max * t_max exceeds the model context");
    }
    if (static_cast<std::size_t>(K_max) * static_cast<std::size_t>(t_max) > buffer_capacity) {
        throw ParameterError("TrainConfig: buffer cannot hold one history");
    }
    if (n_obstacles < 0 || n_obstacles + 2 > grid_size * grid_size) {
        throw ParameterError("TrainConfig: obstacle count does not fit the grid");
    }
}

json TrainConfig::to_json() const {
    return json{{"gamma", gamma},
                {"delta", delta},
                {"T_max", T_max},
                {"batch_size", batch_size},
                {"t_max", t_max},
                {"K_min", K_min},
                {"K_max", K_max},
                {"ctg_min", ctg_min},
                {"ctg_max", ctg_max},
                {"eta", eta},
                {"lambda_cap", lambda_cap},
                {"tau", tau},
                {"buffer_capacity", buffer_capacity},
                {"seed", seed},
                {"grid_size", grid_size},
                {"alpha", alpha},
                {"n_obstacles", n_obstacles},
                {"threshold", threshold_name(threshold)},
                {"entropy_coef", entropy_coef},
                {"adam",
                 {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}, {"clip", adam.clip}}},
                {"model", model.to_json()},
                {"checkpoint_every", checkpoint_every},
                {"out_dir", out_dir}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    try {
        read(j, "gamma", c.gamma);
        read(j, "delta", c.delta);
        read(j, "T_max", c.T_max);
        read(j, "batch_size", c.batch_size);
        read(j, "t_max", c.t_max);
        read(j, "K_min", c.K_min);
        read(j, "K_max", c.K_max);
        read(j, "ctg_min", c.ctg_min);
        read(j, "ctg_max", c.ctg_max);
        read(j, "eta", c.eta);
        read(j, "lambda_cap", c.lambda_cap);
        read(j, "tau", c.tau);
        read(j, "buffer_capacity", c.buffer_capacity);
        read(j, "seed", c.seed);
        read(j, "grid_size", c.grid_size);
        read(j, "alpha", c.alpha);
        read(j, "n_obstacles", c.n_obstacles);
        read(j, "entropy_coef", c.entropy_coef);
        read(j, "checkpoint_every", c.checkpoint_every);
        read(j, "out_dir", c.out_dir);
        if (j.contains("threshold")) {
            c.threshold = threshold_from(j.at("threshold").get<std::string>());
        }
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
        throw DataError(std::string("TrainConfig: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t HistoryRecord::n_transitions() const {
    std::size_t n = 0;
    for (const auto& e : episodes) {
        n += e.size();
    }
    return n;
}

double HistoryRecord::max_gap(double threshold) const {
    if (episodes.empty()) {
        throw DataError("history has no episodes");
    }
    double g = -std::numeric_limits<double>::infinity();
    for (const auto& e : episodes) {
        g = std::max(g, cmdp::episode_totals(e).cost - threshold);
    }
    return g;
}

double HistoryRecord::mean_return() const {
    double s = 0.0;
    for (const auto& e : episodes) {
        s += cmdp::episode_totals(e).ret;
    }
    return episodes.empty() ? 0.0 : s / static_cast<double>(episodes.size());
}

double HistoryRecord::mean_cost() const {
    double s = 0.0;
    for (const auto& e : episodes) {
        s += cmdp::episode_totals(e).cost;
    }
    return episodes.empty() ? 0.0 : s / static_cast<double>(episodes.size());
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) {
        throw ParameterError("ReplayBuffer: capacity must be positive");
    }
}

void ReplayBuffer::push(HistoryRecord h) {
    const std::size_t n = h.n_transitions();
    if (n > capacity_) {
        throw ParameterError("ReplayBuffer: history of " + std::to_string(n) + " transitions exceeds capacity");
    }
    while (transitions_ + n > capacity_) {
        transitions_ -= histories_.front().n_transitions();
        histories_.pop_front();
    }
    transitions_ += n;
    histories_.push_back(std::move(h));
}

std::vector<const HistoryRecord*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    if (histories_.empty()) {
        throw PreconditionError("ReplayBuffer: sample from an empty buffer");
    }
    std::uniform_int_distribution<std::size_t> pick(0, histories_.size() - 1);
    std::vector<const HistoryRecord*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(&histories_[pick(rng)]);
    }
    return out;
}

HistoryRecord run_history(const cmdp::TaskSpec& task, double ctg, int K, const nn::SequenceModel& actor, Rng& rng) {
    HistoryRecord h{task, 0, ctg, {}};
    cmdp::SafeDarkRoom env(task);
    ContextRunner runner(actor);
    std::optional<cmdp::Transition> prev;
    for (int k = 0; k < K; ++k) {
        cmdp::GridPos pos = env.reset();
        double ctg_k = ctg;
        cmdp::Episode ep;
        bool first = true;
        while (!env.done()) {
            const nn::StepInput tok = make_token(task, prev ? &*prev : nullptr, pos, ctg_k, first);
            const Eigen::VectorXd p = nn::softmax(runner.next(tok).logits);
            std::discrete_distribution<int> dist(p.data(), p.data() + p.size());
            const cmdp::Action a = cmdp::action_from_index(dist(rng));
            const cmdp::StepResult r = env.step(a);
            cmdp::Transition tr{pos, a, r.reward, r.cost, r.observation, r.done, ctg_k};
            ep.transitions.push_back(tr);
            prev = tr;
            ctg_k -= r.cost;
            pos = r.observation;
            first = false;
        }
        runner.end_episode();
        h.episodes.push_back(std::move(ep));
    }
    return h;
}

HistoryRecord collect_history(const taskgen::SpawnDistribution& dist, const nn::SequenceModel& actor,
                              const TrainConfig& cfg, Rng& rng) {
    cmdp::TaskSpec task = taskgen::sample_task(dist, cfg.n_obstacles, cfg.t_max, rng);
    const int K = uniform_int(rng, cfg.K_min, cfg.K_max);
    const double ctg = cfg.ctg_min == cfg.ctg_max ? cfg.ctg_min : uniform_real(rng, cfg.ctg_min, cfg.ctg_max);
    const auto task_id = static_cast<std::int64_t>(rng() >> 1);
    HistoryRecord h = run_history(task, ctg, K, actor, rng);
    h.task_id = task_id;
    for (auto& e : h.episodes) {
        e.task_id = task_id;
    }
    return h;
}

double threshold_for(const HistoryRecord& h, const TrainConfig& cfg) {
    return cfg.threshold == Threshold::ctg ? h.ctg : cfg.delta;
}

TrainingBatch make_batch(const std::vector<const HistoryRecord*>& histories, const TrainConfig& cfg) {
    if (histories.empty()) {
        throw PreconditionError("make_batch: no histories");
    }
    TrainingBatch tb;
    for (const HistoryRecord* h : histories) {
        tb.batch.append_sequence(history_tokens(h->task, h->episodes));
        const double thr = threshold_for(*h, cfg);
        for (const auto& ep : h->episodes) {
            const double v = cmdp::episode_totals(ep).cost > thr ? 1.0 : 0.0;
            for (const auto& tr : ep.transitions) {
                tb.actions.push_back(static_cast<int>(tr.action));
                tb.rewards.push_back(tr.reward);
                tb.costs.push_back(tr.cost);
                tb.done.push_back(tr.done);
                tb.violation.push_back(v);
            }
        }
        tb.gaps.push_back(h->max_gap(thr));
    }
    return tb;
}

CriticLosses critic_losses(nn::Graph& g, const TrainingBatch& tb, const nn::Outputs& online,
                           const nn::Outputs& target, double gamma, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(tb.actions.size());
    if (n == 0) {
        throw PreconditionError("critic_losses: empty batch");
    }
    if (!online.q || !target.q || online.q->value.rows() != n) {
        throw ParameterError("critic_losses: outputs do not match the batch");
    }
    const nn::Mat& tl = target.logits->value;
    CriticLosses out;
    out.y_v.resize(n);
    out.y_c.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        double bv = 0.0;
        double bc = 0.0;
        if (!tb.done[ui]) {
            if (i + 1 >= n) {
                throw DataError("critic_losses: non-terminal transition at the end of a history");
            }
            const Eigen::VectorXd p = nn::softmax(tl.row(i + 1).transpose());
            std::discrete_distribution<int> d(p.data(), p.data() + p.size());
            const int a2 = d(rng);
            bv = target.q->value(i + 1, a2);
            bc = target.qc->value(i + 1, a2);
        }
        out.y_v(i) = tb.rewards[ui] + gamma * bv;
        out.y_c(i) = tb.costs[ui] + gamma * bc;
    }
    out.loss_v = nn::mse(g, nn::pick(g, online.q, tb.actions), out.y_v);
    out.loss_c = nn::mse(g, nn::pick(g, online.qc, tb.actions), out.y_c);
    if (!std::isfinite(out.loss_v->value(0, 0)) || !std::isfinite(out.loss_c->value(0, 0))) {
        throw NumericError("critic_losses: non-finite loss");
    }
    return out;
}

nn::Var actor_loss(nn::Graph& g, const TrainingBatch& tb, const nn::Outputs& online, double lambda,
                   double entropy_coef) {
    if (lambda < 0.0) {
        throw ParameterError("actor_loss: lambda must be >= 0");
    }
    const auto n = static_cast<Eigen::Index>(tb.actions.size());
    if (n == 0 || !online.q || online.logits->value.rows() != n) {
        throw ParameterError("actor_loss: outputs do not match the batch");
    }
    nn::Mat m = -online.q->value;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = lambda * tb.violation[static_cast<std::size_t>(i)];
        if (w != 0.0) {
            m.row(i) += w * online.qc->value.row(i);
        }
    }
    nn::Var probs = nn::softmax_rows(g, online.logits);
    nn::Var loss = nn::scale(g, nn::sum_all(g, nn::mul(g, probs, g.constant(std::move(m)))), 1.0 / n);
    if (entropy_coef > 0.0) {
        nn::Var neg_ent = nn::sum_all(g, nn::mul(g, probs, nn::log_softmax_rows(g, online.logits)));
        loss = nn::add(g, loss, nn::scale(g, neg_ent, entropy_coef / n));
    }
    if (!std::isfinite(loss->value(0, 0))) {
        throw NumericError("actor_loss: non-finite loss");
    }
    return loss;
}

double lambda_update(const std::vector<double>& gaps, double lambda, double eta, double cap) {
    if (gaps.empty()) {
        throw PreconditionError("lambda_update: no histories");
    }
    if (lambda < 0.0 || lambda > cap) {
        throw ParameterError("lambda_update: lambda outside [0, cap]");
    }
    double mean = 0.0;
    for (double x : gaps) {
        mean += x;
    }
    mean /= static_cast<double>(gaps.size());
    return std::clamp(lambda + eta * mean, 0.0, cap);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "step,mean_return,mean_cost,lambda,loss_v,loss_c,loss_p\n";
    for (const auto& r : rows) {
        os << r.step << ',' << r.mean_return << ',' << r.mean_cost << ',' << r.lambda << ',' << r.loss_v << ','
           << r.loss_c << ',' << r.loss_p << '\n';
    }
    return os.str();
}

namespace {

struct TrainerState {
    nn::SequenceModel online;
    nn::SequenceModel target;
    nn::Adam opt;
    double lambda = 0.0;
    int step = 0;
    std::vector<Rng> rngs;

    explicit TrainerState(const TrainConfig& cfg)
        : online(cfg.model, derive_seed(cfg.seed, 0)),
          target(cfg.model, derive_seed(cfg.seed, 0)),
          opt(online.parameters(), cfg.adam) {
        target.copy_from(online);
        target.set_trainable(false);
        for (std::uint64_t s = 1; s <= 4; ++s) {
            rngs.emplace_back(derive_seed(cfg.seed, s));
        }
    }

    struct Saved {
        std::vector<nn::Mat> params;
        std::vector<nn::Mat> m;
        std::vector<nn::Mat> v;
        long t = 0;
    };

    Saved save_optimizer_state() {
        Saved s{{}, opt.first_moments(), opt.second_moments(), opt.steps()};
        for (const auto& p : online.parameters()) {
            s.params.push_back(p.var->value);
        }
        return s;
    }

    void restore_optimizer_state(const Saved& s) {
        auto& params = online.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i].var->value = s.params[i];
        }
        opt.first_moments() = s.m;
        opt.second_moments() = s.v;
        opt.set_steps(s.t);
    }

    bool parameters_finite() const {
        for (const auto& p : online.parameters()) {
            if (!p.var->value.allFinite()) {
                return false;
            }
        }
        return true;
    }

    nn::Checkpoint snapshot(const TrainConfig& cfg) {
        nn::Checkpoint ck;
        ck.header = {{"format", "eppo-train"},
                     {"model", cfg.model.to_json()},
                     {"config", cfg.to_json()},
                     {"step", step},
                     {"lambda", lambda},
                     {"adam_steps", opt.steps()}};
        nn::export_model(online, "online/", ck);
        nn::export_model(target, "target/", ck);
        const auto& params = online.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            ck.tensors.push_back({"adam.m/" + params[i].name, opt.first_moments()[i]});
            ck.tensors.push_back({"adam.v/" + params[i].name, opt.second_moments()[i]});
        }
        json states = json::array();
        for (const auto& r : rngs) {
            states.push_back(nn::serialize_rng(r));
        }
        ck.rng_state = states.dump();
        return ck;
    }
};

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p);
    if (!os) {
        throw DataError("cannot write " + p.string());
    }
    os << text;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const StepHook& hook) {
    cfg.validate();
    TrainerState st(cfg);
    Rng& collect_rng = st.rngs[0];
    Rng& sample_rng = st.rngs[1];
    Rng& dropout_rng = st.rngs[2];
    Rng& td_rng = st.rngs[3];
    const auto dist = taskgen::build_distribution(cfg.grid_size, cfg.alpha, taskgen::Orientation::center);
    ReplayBuffer buffer(cfg.buffer_capacity);
    std::filesystem::path out;
    if (!cfg.out_dir.empty()) {
        out = cfg.out_dir;
        std::filesystem::create_directories(out);
        write_text(out / "config.json", cfg.to_json().dump(2));
    }
    TrainResult res;
    for (int step = 1; step <= cfg.T_max; ++step) {
        buffer.push(collect_history(dist, st.online, cfg, collect_rng));
        const HistoryRecord& fresh = buffer.histories().back();
        const TrainingBatch tb = make_batch(buffer.sample(static_cast<std::size_t>(cfg.batch_size), sample_rng), cfg);
        MetricsRow row;
        row.step = step;
        row.mean_return = fresh.mean_return();
        row.mean_cost = fresh.mean_cost();
        try {
            nn::Graph g;
            st.online.zero_grad();
            const nn::Outputs on = st.online.forward(g, tb.batch, true, &dropout_rng);
            const nn::Outputs tg = st.target.forward(g, tb.batch, false, nullptr);
            CriticLosses cl = critic_losses(g, tb, on, tg, cfg.gamma, td_rng);
            nn::Var lp = actor_loss(g, tb, on, st.lambda, cfg.entropy_coef);
            nn::Var total = nn::add(g, nn::add(g, cl.loss_v, cl.loss_c), lp);
            g.backward(total);
            const auto saved = st.save_optimizer_state();
            st.opt.step();
            if (!st.parameters_finite()) {
                st.restore_optimizer_state(saved);
                throw NumericError("update produced non-finite parameters");
            }
            row.loss_v = cl.loss_v->value(0, 0);
            row.loss_c = cl.loss_c->value(0, 0);
            row.loss_p = lp->value(0, 0);
        } catch (const NumericError& e) {
            res.aborted = true;
            res.abort_reason = "step " + std::to_string(step) + ": " + e.what();
            break;
        }
        st.target.polyak_from(st.online, cfg.tau);
        st.lambda = lambda_update(tb.gaps, st.lambda, cfg.eta, cfg.lambda_cap);
        st.step = step;
        row.lambda = st.lambda;
        res.metrics.push_back(row);
        if (!out.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            nn::write_checkpoint((out / ("ckpt_" + std::to_string(step) + ".bin")).string(), st.snapshot(cfg));
            write_text(out / "metrics.csv", metrics_csv(res.metrics));
        }
        if (hook && !hook(row)) {
            break;
        }
    }
    res.checkpoint = st.snapshot(cfg);
    if (!out.empty()) {
        nn::write_checkpoint((out / (res.aborted ? "last_good.bin" : "final.bin")).string(), res.checkpoint);
        write_text(out / "metrics.csv", metrics_csv(res.metrics));
    }
    return res;
}

nn::SequenceModel actor_from_checkpoint(const nn::Checkpoint& ckpt) {
    if (!ckpt.header.contains("model")) {
        throw DataError("checkpoint header lacks a model spec");
    }
    nn::SequenceModel m(nn::ModelSpec::from_json(ckpt.header["model"]), 0);
    nn::import_model(m, ckpt.has("online/actor.w") ? "online/" : "", ckpt);
    return m;
}

}  // namespace eppo::rl
