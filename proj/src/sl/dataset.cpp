#include "eppo/sl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "eppo/oracle.hpp"

namespace eppo::sl {

namespace {

constexpr double kAnnotationTol = 1e-9;

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

double mean_return(const std::vector<cmdp::Episode>& eps, std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
        s += cmdp::episode_totals(eps[k]).ret;
    }
    return s / static_cast<double>(hi - lo);
}

cmdp::Episode run_episode(cmdp::SafeDarkRoom& env, const std::function<cmdp::Action(cmdp::GridPos, int)>& choose,
                          const std::function<void(const cmdp::Transition&)>& observe, std::int64_t task_id) {
    cmdp::Episode ep;
    ep.task_id = task_id;
    cmdp::GridPos pos = env.reset();
    int t = 0;
    while (!env.done()) {
        const cmdp::Action a = choose(pos, t);
        const cmdp::StepResult r = env.step(a);
        cmdp::Transition tr{pos, a, r.reward, r.cost, r.observation, r.done, 0.0};
        if (observe) {
            observe(tr);
        }
        ep.transitions.push_back(tr);
        pos = r.observation;
        ++t;
    }
    return ep;
}

// Runs one generator per cost limit on its own thread; `one_task` produces a
// full history for a freshly sampled task.
SLDataset generate(const GenerationConfig& cfg, std::uint64_t seed,
                   const std::function<SLTrajectory(const cmdp::TaskSpec&, double, std::size_t, Rng&)>& one_task) {
    cfg.validate();
    const auto dist = taskgen::build_distribution(cfg.grid_size, cfg.alpha, taskgen::Orientation::center);
    std::vector<std::vector<SLTrajectory>> per_limit(cfg.cost_limits.size());
    std::vector<std::exception_ptr> errors(cfg.cost_limits.size());
    auto worker = [&](std::size_t i) {
        try {
            Rng rng(derive_seed(seed, i));
            std::size_t steps = 0;
            while (steps < cfg.steps_per_limit) {
                const cmdp::TaskSpec task = taskgen::sample_task(dist, cfg.n_obstacles, cfg.time_limit, rng);
                const auto task_id = static_cast<std::int64_t>(rng() >> 1);
                SLTrajectory tr = one_task(task, cfg.cost_limits[i], cfg.steps_per_limit - steps, rng);
                tr.task_id = task_id;
                tr.cost_limit = cfg.cost_limits[i];
                for (auto& e : tr.episodes) {
                    e.task_id = task_id;
                }
                tr.annotate();
                steps += tr.n_steps();
                per_limit[i].push_back(std::move(tr));
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < cfg.cost_limits.size(); ++i) {
        threads.emplace_back(worker, i);
    }
    for (auto& t : threads) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    SLDataset ds;
    for (auto& v : per_limit) {
        for (auto& t : v) {
            ds.trajectories.push_back(std::move(t));
        }
    }
    return ds;
}

std::string traj_name(std::size_t i) {
    std::ostringstream os;
    os << "traj_" << std::setw(5) << std::setfill('0') << i << ".ndjson";
    return os.str();
}

}  // namespace

Phase phase_of(std::size_t episode, std::size_t n_episodes) {
    if (n_episodes == 0 || episode >= n_episodes) {
        throw ParameterError("phase_of: episode index out of range");
    }
    return static_cast<Phase>(std::min<std::size_t>(2, 3 * episode / n_episodes));
}

std::size_t SLTrajectory::n_steps() const {
    std::size_t n = 0;
    for (const auto& e : episodes) {
        n += e.size();
    }
    return n;
}

void SLTrajectory::annotate() {
    to_go.clear();
    for (auto& e : episodes) {
        to_go.push_back(cmdp::to_go_all(e));
        for (std::size_t t = 0; t < e.size(); ++t) {
            e.transitions[t].ctg = to_go.back()[t].ctg;
        }
    }
}

void SLTrajectory::validate() const {
    if (episodes.empty()) {
        throw DataError("trajectory has no episodes");
    }
    if (to_go.size() != episodes.size()) {
        throw DataError("trajectory is missing return/cost-to-go annotations");
    }
    for (std::size_t k = 0; k < episodes.size(); ++k) {
        const auto& e = episodes[k];
        if (e.empty()) {
            throw DataError("trajectory contains an empty episode");
        }
        if (to_go[k].size() != e.size()) {
            throw DataError("annotation count does not match episode " + std::to_string(k));
        }
        double rtg = 0.0;
        double ctg = 0.0;
        for (std::size_t t = e.size(); t-- > 0;) {
            rtg += e.transitions[t].reward;
            ctg += e.transitions[t].cost;
            if (std::abs(to_go[k][t].rtg - rtg) > kAnnotationTol || std::abs(to_go[k][t].ctg - ctg) > kAnnotationTol) {
                throw DataError("annotations do not telescope at episode " + std::to_string(k) + ", step " +
                                std::to_string(t));
            }
        }
    }
}

std::size_t SLDataset::n_steps() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) {
        n += t.n_steps();
    }
    return n;
}

double learning_signal(const SLDataset& ds) {
    double sum = 0.0;
    int used = 0;
    for (const auto& tr : ds.trajectories) {
        const std::size_t n = tr.episodes.size();
        if (n < 2) {
            continue;
        }
        const auto head = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n))));
        sum += mean_return(tr.episodes, head, n) - mean_return(tr.episodes, 0, head);
        ++used;
    }
    if (used == 0) {
        throw DataError("learning_signal: no trajectory has two or more episodes");
    }
    return sum / used;
}

json QLearnerConfig::to_json() const {
    return {{"cost_limit", cost_limit}, {"lr", lr},           {"gamma", gamma},         {"q_init", q_init},
            {"eps_start", eps_start},   {"eps_end", eps_end}, {"eps_decay", eps_decay}, {"lambda_lr", lambda_lr},
            {"lambda_max", lambda_max}};
}

QLearnerConfig QLearnerConfig::from_json(const json& j) {
    QLearnerConfig c;
    read(j, "cost_limit", c.cost_limit);
    read(j, "lr", c.lr);
    read(j, "gamma", c.gamma);
    read(j, "q_init", c.q_init);
    read(j, "eps_start", c.eps_start);
    read(j, "eps_end", c.eps_end);
    read(j, "eps_decay", c.eps_decay);
    read(j, "lambda_lr", c.lambda_lr);
    read(j, "lambda_max", c.lambda_max);
    return c;
}

LagrangianQLearner::LagrangianQLearner(QLearnerConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0.0 && cfg.lr <= 1.0) || !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) || cfg.eps_start < 0.0 ||
        cfg.eps_start > 1.0 || cfg.eps_end < 0.0 || cfg.eps_end > 1.0 || cfg.eps_decay < 0.0 || cfg.eps_decay > 1.0 ||
        cfg.lambda_lr < 0.0 || cfg.lambda_max < 0.0 || cfg.cost_limit < 0.0) {
        throw ParameterError("LagrangianQLearner: invalid config");
    }
}

void LagrangianQLearner::init(const cmdp::TaskSpec& task) {
    grid_ = task.grid_size();
    q_.assign(static_cast<std::size_t>(task.n_cells() * cmdp::kNumActions), cfg_.q_init);
    qc_.assign(q_.size(), 0.0);
    lambda_ = 0.0;
    eps_ = cfg_.eps_start;
}

int LagrangianQLearner::greedy(int cell) const {
    int best = 0;
    double bv = q(cell, 0) - lambda_ * qc(cell, 0);
    for (int a = 1; a < cmdp::kNumActions; ++a) {
        const double v = q(cell, a) - lambda_ * qc(cell, a);
        if (v > bv) {
            bv = v;
            best = a;
        }
    }
    return best;
}

cmdp::Action LagrangianQLearner::act(cmdp::GridPos state, Rng& rng) {
    if (q_.empty()) {
        throw PreconditionError("LagrangianQLearner: act before init");
    }
    if (eps_ > 0.0 && uniform01(rng) < eps_) {
        return cmdp::action_from_index(uniform_int(rng, 0, cmdp::kNumActions - 1));
    }
    return cmdp::action_from_index(greedy(state.row * grid_ + state.col));
}

void LagrangianQLearner::observe(const cmdp::Transition& t) {
    const int s = t.state.row * grid_ + t.state.col;
    const int s2 = t.next_state.row * grid_ + t.next_state.col;
    const int a = static_cast<int>(t.action);
    // Time-outs are not terminal for a state-only value.
    const bool terminal = t.done && t.reward > 0.0;
    double yr = t.reward;
    double yc = t.cost;
    if (!terminal) {
        const int a2 = greedy(s2);
        yr += cfg_.gamma * q(s2, a2);
        yc += cfg_.gamma * qc(s2, a2);
    }
    q_[idx(s, a)] += cfg_.lr * (yr - q(s, a));
    qc_[idx(s, a)] += cfg_.lr * (yc - qc(s, a));
}

void LagrangianQLearner::end_episode(const cmdp::Episode& e) {
    const double cost = cmdp::episode_totals(e).cost;
    lambda_ = std::clamp(lambda_ + cfg_.lambda_lr * (cost - cfg_.cost_limit), 0.0, cfg_.lambda_max);
    eps_ = std::max(cfg_.eps_end, eps_ * cfg_.eps_decay);
}

void GenerationConfig::validate() const {
    if (grid_size < 2 || time_limit < 1 || episodes_per_task < 1 || n_obstacles < 0 ||
        n_obstacles + 2 > grid_size * grid_size) {
        throw ParameterError("GenerationConfig: invalid grid, obstacle count, time limit or episode count");
    }
    for (double c : cost_limits) {
        if (!(c >= 0.0)) {
            throw ParameterError("GenerationConfig: cost limits must be >= 0");
        }
    }
}

json GenerationConfig::to_json() const {
    return {{"grid_size", grid_size},
            {"alpha", alpha},
            {"n_obstacles", n_obstacles},
            {"time_limit", time_limit},
            {"episodes_per_task", episodes_per_task},
            {"cost_limits", cost_limits},
            {"steps_per_limit", steps_per_limit},
            {"learner", learner.to_json()}};
}

GenerationConfig GenerationConfig::from_json(const json& j) {
    GenerationConfig c;
    try {
        read(j, "grid_size", c.grid_size);
        read(j, "alpha", c.alpha);
        read(j, "n_obstacles", c.n_obstacles);
        read(j, "time_limit", c.time_limit);
        read(j, "episodes_per_task", c.episodes_per_task);
        read(j, "cost_limits", c.cost_limits);
        read(j, "steps_per_limit", c.steps_per_limit);
        if (j.contains("learner")) {
            c.learner = QLearnerConfig::from_json(j.at("learner"));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("GenerationConfig: ") + e.what());
    }
    c.validate();
    return c;
}

SLDataset generate_dataset(const LearnerFactory& make_learner, const GenerationConfig& cfg, std::uint64_t seed) {
    auto one = [&](const cmdp::TaskSpec& task, double limit, std::size_t budget, Rng& rng) {
        SLTrajectory tr;
        tr.task = task;
        std::unique_ptr<SourceLearner> learner = make_learner(limit);
        learner->init(task);
        cmdp::SafeDarkRoom env(task);
        std::size_t steps = 0;
        for (int k = 0; k < cfg.episodes_per_task && steps < budget; ++k) {
            cmdp::Episode ep = run_episode(
                env, [&](cmdp::GridPos s, int) { return learner->act(s, rng); },
                [&](const cmdp::Transition& t) { learner->observe(t); }, 0);
            learner->end_episode(ep);
            steps += ep.size();
            tr.episodes.push_back(std::move(ep));
        }
        return tr;
    };
    SLDataset ds = generate(cfg, seed, one);
    ds.source = {{"kind", "learner"}, {"seed", seed}, {"config", cfg.to_json()}};
    return ds;
}

SLDataset generate_dataset(const GenerationConfig& cfg, std::uint64_t seed) {
    const QLearnerConfig base = cfg.learner;
    return generate_dataset(
        [base](double limit) {
            QLearnerConfig c = base;
            c.cost_limit = limit;
            return std::make_unique<LagrangianQLearner>(c);
        },
        cfg, seed);
}

EpsilonSchedule linear_epsilon() {
    return [](int k, int n) { return n <= 1 ? 0.0 : 1.0 - static_cast<double>(k) / (n - 1); };
}

TaskPolicy optimal_policy(const cmdp::TaskSpec& task, double cost_limit) {
    const oracle::TabularCMDP m = oracle::from_task(task);
    const oracle::LagrangianSolution sol = oracle::solve_lagrangian(m, cost_limit);
    // Rewards are at most one per episode, so this weight ranks cost first.
    const oracle::TabularPolicy pi = sol.feasible ? sol.markov : oracle::solve_penalized_dp(m, 1e3).policy;
    return [pi, task](int t, cmdp::GridPos s) {
        std::vector<double> p(cmdp::kNumActions);
        const int tt = std::min(t, pi.horizon() - 1);
        for (int a = 0; a < cmdp::kNumActions; ++a) {
            p[static_cast<std::size_t>(a)] = pi(tt, task.cell_index(s), a);
        }
        return p;
    };
}

SLTrajectory perturbed_history(const cmdp::TaskSpec& task, const TaskPolicy& policy, const EpsilonSchedule& schedule,
                               int n_episodes, Rng& rng) {
    SLTrajectory tr;
    tr.task = task;
    cmdp::SafeDarkRoom env(task);
    for (int k = 0; k < n_episodes; ++k) {
        const double eps = schedule(k, n_episodes);
        if (!(eps >= 0.0 && eps <= 1.0)) {
            throw ParameterError("epsilon schedule left [0, 1]");
        }
        auto choose = [&](cmdp::GridPos s, int t) {
            if (eps > 0.0 && uniform01(rng) < eps) {
                return cmdp::action_from_index(uniform_int(rng, 0, cmdp::kNumActions - 1));
            }
            const std::vector<double> p = policy(t, s);
            std::discrete_distribution<int> d(p.begin(), p.end());
            return cmdp::action_from_index(d(rng));
        };
        tr.episodes.push_back(run_episode(env, choose, {}, 0));
    }
    tr.annotate();
    return tr;
}

SLDataset ad_eps_dataset(const GenerationConfig& cfg, const EpsilonSchedule& schedule, std::uint64_t seed) {
    auto one = [&](const cmdp::TaskSpec& task, double limit, std::size_t budget, Rng& rng) {
        SLTrajectory tr = perturbed_history(task, optimal_policy(task, limit), schedule, cfg.episodes_per_task, rng);
        std::size_t steps = 0;
        std::size_t keep = 0;
        while (keep < tr.episodes.size() && steps < budget) {
            steps += tr.episodes[keep++].size();
        }
        tr.episodes.resize(keep);
        return tr;
    };
    SLDataset ds = generate(cfg, seed, one);
    ds.source = {{"kind", "ad_eps"}, {"seed", seed}, {"config", cfg.to_json()}};
    return ds;
}

void write_dataset(const SLDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json entries = json::array();
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const SLTrajectory& tr = ds.trajectories[i];
        tr.validate();
        const std::string name = traj_name(i);
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) {
            throw DataError("cannot write " + (dir / name).string());
        }
        double ret = 0.0;
        double cost = 0.0;
        for (std::size_t k = 0; k < tr.episodes.size(); ++k) {
            const auto& e = tr.episodes[k];
            const auto tot = cmdp::episode_totals(e);
            ret += tot.ret;
            cost += tot.cost;
            for (std::size_t t = 0; t < e.size(); ++t) {
                json rec = cmdp::transition_to_json(e.transitions[t]);
                rec["episode"] = k;
                rec["t"] = t;
                rec["rtg"] = tr.to_go[k][t].rtg;
                rec["ctg"] = tr.to_go[k][t].ctg;
                os << rec.dump() << '\n';
            }
        }
        const auto n = static_cast<double>(tr.episodes.size());
        entries.push_back({{"file", name},
                           {"task", tr.task.to_json()},
                           {"task_id", tr.task_id},
                           {"cost_limit", tr.cost_limit},
                           {"n_episodes", tr.episodes.size()},
                           {"n_steps", tr.n_steps()},
                           {"mean_return", ret / n},
                           {"mean_cost", cost / n}});
    }
    const json manifest{{"format", "eppo-sl-dataset"}, {"version", 1}, {"source", ds.source}, {"trajectories", entries}};
    std::ofstream ms(dir / "manifest.json", std::ios::binary);
    if (!ms) {
        throw DataError("cannot write manifest in " + dir.string());
    }
    ms << manifest.dump(2) << '\n';
}

SLDataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream ms(dir / "manifest.json");
    if (!ms) {
        throw DataError("no manifest.json in " + dir.string());
    }
    SLDataset ds;
    try {
        const json manifest = json::parse(ms);
        if (manifest.value("format", "") != "eppo-sl-dataset") {
            throw DataError("not a dataset manifest: " + dir.string());
        }
        ds.source = manifest.value("source", json::object());
        for (const json& entry : manifest.at("trajectories")) {
            SLTrajectory tr;
            tr.task = cmdp::TaskSpec::from_json(entry.at("task"));
            tr.task_id = entry.at("task_id").get<std::int64_t>();
            tr.cost_limit = entry.at("cost_limit").get<double>();
            const auto file = dir / entry.at("file").get<std::string>();
            std::ifstream is(file);
            if (!is) {
                throw DataError("missing trajectory file " + file.string());
            }
            std::string line;
            std::int64_t current = -1;
            while (std::getline(is, line)) {
                if (line.empty()) {
                    continue;
                }
                const json rec = json::parse(line);
                if (!rec.contains("rtg") || !rec.contains("ctg")) {
                    throw DataError("transition without return/cost-to-go in " + file.string());
                }
                const auto k = rec.at("episode").get<std::int64_t>();
                if (k != current) {
                    tr.episodes.emplace_back();
                    tr.episodes.back().task_id = tr.task_id;
                    tr.to_go.emplace_back();
                    current = k;
                }
                tr.episodes.back().transitions.push_back(cmdp::transition_from_json(rec));
                tr.to_go.back().push_back({rec.at("rtg").get<double>(), rec.at("ctg").get<double>()});
            }
            tr.validate();
            ds.trajectories.push_back(std::move(tr));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed dataset in " + dir.string() + ": " + e.what());
    }
    return ds;
}

}  // namespace eppo::sl
