#include "eppo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "eppo/rl/context.hpp"
#include "eppo/rl/trainer.hpp"

namespace eppo::harness {

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

std::string kind_name(CtgPolicy::Kind k) {
    switch (k) {
        case CtgPolicy::Kind::fixed:
            return "fixed";
        case CtgPolicy::Kind::uniform:
            return "uniform";
        case CtgPolicy::Kind::sweep:
            return "sweep";
    }
    return "uniform";
}

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"se", s.se}, {"n", s.n}}; }

// Runs fn(i) for i in [0, n) on `threads` workers.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    int workers = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = next++; i < n; i = next++) {
                    fn(i);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

// Action source for one rollout: nullptr model means uniform random.
std::vector<EvalRecord> rollout(const nn::SequenceModel* model, const cmdp::TaskSpec& task, double ctg, double rtg,
                                int K, bool greedy, Rng& rng) {
    std::vector<EvalRecord> out;
    cmdp::SafeDarkRoom env(task);
    std::optional<rl::ContextRunner> runner;
    if (model != nullptr) {
        runner.emplace(*model);
    }
    std::optional<cmdp::Transition> prev;
    for (int k = 0; k < K; ++k) {
        cmdp::GridPos pos = env.reset();
        double ctg_k = ctg;
        EvalRecord rec;
        rec.ctg = ctg;
        rec.k = k;
        bool first = true;
        while (!env.done()) {
            int a = 0;
            if (runner) {
                const nn::StepInput tok = rl::make_token(task, prev ? &*prev : nullptr, pos, ctg_k, first, rtg);
                const Eigen::VectorXd logits = runner->next(tok).logits;
                if (greedy) {
                    Eigen::Index idx = 0;
                    logits.maxCoeff(&idx);
                    a = static_cast<int>(idx);
                } else {
                    const Eigen::VectorXd p = nn::softmax(logits);
                    std::discrete_distribution<int> d(p.data(), p.data() + p.size());
                    a = d(rng);
                }
            } else {
                a = uniform_int(rng, 0, cmdp::kNumActions - 1);
            }
            const cmdp::Action act = cmdp::action_from_index(a);
            const cmdp::StepResult r = env.step(act);
            prev = cmdp::Transition{pos, act, r.reward, r.cost, r.observation, r.done, ctg_k};
            rec.ret += r.reward;
            rec.cost += r.cost;
            rec.steps += 1;
            rec.goal_reached = rec.goal_reached || r.observation == task.goal();
            ctg_k -= r.cost;
            pos = r.observation;
            first = false;
        }
        if (runner) {
            runner->end_episode();
        }
        out.push_back(rec);
    }
    return out;
}

std::vector<EvalRecord> run_all(const nn::SequenceModel* model, const EvalProtocol& p,
                                const std::vector<cmdp::TaskSpec>& tasks, const std::vector<double>& ctgs) {
    const int n_jobs = static_cast<int>(tasks.size() * ctgs.size());
    std::vector<std::vector<EvalRecord>> per_job(static_cast<std::size_t>(n_jobs));
    const bool uses_rtg = model != nullptr && model->spec().rtg_channel;
    parallel_for(n_jobs, p.threads, [&](int job) {
        const int ti = job / static_cast<int>(ctgs.size());
        const int ci = job % static_cast<int>(ctgs.size());
        Rng rng(derive_seed(p.seed, static_cast<std::uint64_t>(job) + 1));
        const double ctg = ctgs[static_cast<std::size_t>(ci)];
        const double rtg = uses_rtg ? p.rtg.target(ctg) : 0.0;
        auto recs = rollout(model, tasks[static_cast<std::size_t>(ti)], ctg, rtg, p.K_eval, p.greedy, rng);
        for (auto& r : recs) {
            r.task_index = ti;
            r.ctg_index = ci;
        }
        per_job[static_cast<std::size_t>(job)] = std::move(recs);
    });
    std::vector<EvalRecord> out;
    for (auto& v : per_job) {
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

// Per task, the mean over its CTG rollouts of value(records of one rollout).
template <class Fn>
std::vector<double> task_values(const std::vector<EvalRecord>& records, Fn&& value) {
    std::map<int, std::map<int, std::vector<const EvalRecord*>>> grouped;
    for (const auto& r : records) {
        grouped[r.task_index][r.ctg_index].push_back(&r);
    }
    std::vector<double> out;
    for (auto& [task, by_ctg] : grouped) {
        double s = 0.0;
        int n = 0;
        for (auto& [c, recs] : by_ctg) {
            const auto v = value(recs);
            if (v) {
                s += *v;
                ++n;
            }
        }
        if (n > 0) {
            out.push_back(s / n);
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '&':
                out += "&amp;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

}  // namespace

CtgPolicy CtgPolicy::fixed(double v) {
    CtgPolicy p;
    p.kind = Kind::fixed;
    p.values = {v};
    return p;
}

CtgPolicy CtgPolicy::uniform(double lo, double hi, int count) {
    CtgPolicy p;
    p.kind = Kind::uniform;
    p.lo = lo;
    p.hi = hi;
    p.count = count;
    return p;
}

CtgPolicy CtgPolicy::sweep(std::vector<double> values) {
    CtgPolicy p;
    p.kind = Kind::sweep;
    p.values = std::move(values);
    return p;
}

std::vector<double> CtgPolicy::resolve(Rng& rng) const {
    switch (kind) {
        case Kind::fixed:
            if (values.size() != 1) {
                throw ParameterError("fixed CTG policy needs exactly one value");
            }
            return values;
        case Kind::sweep:
            if (values.empty() || !std::is_sorted(values.begin(), values.end())) {
                throw ParameterError("CTG sweep must be non-empty and ascending");
            }
            return values;
        case Kind::uniform: {
            if (count < 1 || !(lo <= hi)) {
                throw ParameterError("uniform CTG policy needs count >= 1 and lo <= hi");
            }
            std::vector<double> out;
            for (int i = 0; i < count; ++i) {
                out.push_back(uniform_real(rng, lo, hi));
            }
            return out;
        }
    }
    return values;
}

json CtgPolicy::to_json() const {
    return {{"kind", kind_name(kind)}, {"values", values}, {"lo", lo}, {"hi", hi}, {"count", count}};
}

CtgPolicy CtgPolicy::from_json(const json& j) {
    CtgPolicy p;
    std::string k = kind_name(p.kind);
    read(j, "kind", k);
    if (k == "fixed") {
        p.kind = Kind::fixed;
    } else if (k == "uniform") {
        p.kind = Kind::uniform;
    } else if (k == "sweep") {
        p.kind = Kind::sweep;
    } else {
        throw ParameterError("unknown CTG policy '" + k + "'");
    }
    read(j, "values", p.values);
    read(j, "lo", p.lo);
    read(j, "hi", p.hi);
    read(j, "count", p.count);
    return p;
}

double RtgRule::target(double ctg) const { return kind == Kind::fixed ? value : std::max(0.5, ctg / 10.0); }

json RtgRule::to_json() const { return {{"kind", kind == Kind::fixed ? "fixed" : "scaled"}, {"value", value}}; }

RtgRule RtgRule::from_json(const json& j) {
    RtgRule r;
    std::string k = "fixed";
    read(j, "kind", k);
    if (k == "fixed") {
        r.kind = Kind::fixed;
    } else if (k == "scaled") {
        r.kind = Kind::scaled;
    } else {
        throw ParameterError("unknown RTG rule '" + k + "'");
    }
    read(j, "value", r.value);
    return r;
}

void EvalProtocol::validate() const {
    if (n_tasks < 1 || K_eval < 1 || time_limit < 1 || threads < 0) {
        throw ParameterError("EvalProtocol: need n_tasks >= 1, K_eval >= 1, time_limit >= 1, threads >= 0");
    }
    if (n_obstacles < 0 || n_obstacles + 2 > grid_size * grid_size) {
        throw ParameterError("EvalProtocol: obstacle count does not fit the grid");
    }
    Rng probe(0);
    ctg.resolve(probe);
}

json EvalProtocol::to_json() const {
    return {{"n_tasks", n_tasks},     {"K_eval", K_eval},       {"ctg", ctg.to_json()},
            {"rtg", rtg.to_json()},   {"grid_size", grid_size}, {"alpha", alpha},
            {"n_obstacles", n_obstacles}, {"time_limit", time_limit}, {"seed", seed},
            {"greedy", greedy},       {"threads", threads}};
}

EvalProtocol EvalProtocol::from_json(const json& j) {
    EvalProtocol p;
    try {
        read(j, "n_tasks", p.n_tasks);
        read(j, "K_eval", p.K_eval);
        read(j, "grid_size", p.grid_size);
        read(j, "alpha", p.alpha);
        read(j, "n_obstacles", p.n_obstacles);
        read(j, "time_limit", p.time_limit);
        read(j, "seed", p.seed);
        read(j, "greedy", p.greedy);
        read(j, "threads", p.threads);
        if (j.contains("ctg")) {
            p.ctg = CtgPolicy::from_json(j.at("ctg"));
        }
        if (j.contains("rtg")) {
            p.rtg = RtgRule::from_json(j.at("rtg"));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("EvalProtocol: ") + e.what());
    }
    p.validate();
    return p;
}

taskgen::TaskSuite EvalProtocol::suite() const {
    return taskgen::generate_suite(grid_size, alpha, taskgen::Orientation::edge, n_tasks, n_obstacles, time_limit,
                                   seed);
}

EvalProtocol supervised_protocol(EvalProtocol base) {
    base.ctg = CtgPolicy::fixed(0.0);
    base.rtg = RtgRule{RtgRule::Kind::fixed, 1.0};
    return base;
}

EvalResult evaluate_icl(const nn::SequenceModel& model, const EvalProtocol& protocol) {
    return evaluate_icl(model, protocol, protocol.suite().tasks);
}

EvalResult evaluate_icl(const nn::SequenceModel& model, const EvalProtocol& protocol,
                        const std::vector<cmdp::TaskSpec>& tasks) {
    protocol.validate();
    if (tasks.empty()) {
        throw ParameterError("evaluate_icl: no tasks");
    }
    for (const auto& t : tasks) {
        if (t.n_cells() != model.spec().n_states) {
            throw ParameterError("evaluate_icl: task grid does not match the model vocabulary");
        }
    }
    EvalResult res;
    res.checksum_before = model.checksum();
    Rng ctg_rng(derive_seed(protocol.seed, 0));
    res.ctg_values = protocol.ctg.resolve(ctg_rng);
    res.records = run_all(&model, protocol, tasks, res.ctg_values);
    res.checksum_after = model.checksum();
    if (res.checksum_before != res.checksum_after) {
        throw FrozenParameterError("policy parameters changed during evaluation");
    }
    return res;
}

std::vector<EvalRecord> uniform_baseline(const EvalProtocol& protocol, const std::vector<cmdp::TaskSpec>& tasks) {
    protocol.validate();
    Rng ctg_rng(derive_seed(protocol.seed, 0));
    return run_all(nullptr, protocol, tasks, protocol.ctg.resolve(ctg_rng));
}

Stat mean_se(const std::vector<double>& xs) {
    if (xs.empty()) {
        throw DataError("mean_se: no values");
    }
    Stat s;
    s.n = static_cast<int>(xs.size());
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / s.n;
    if (s.n > 1) {
        double ss = 0.0;
        for (double x : xs) {
            ss += (x - s.mean) * (x - s.mean);
        }
        s.se = std::sqrt(ss / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    }
    return s;
}

json Summary::to_json() const {
    json eps = json::array();
    for (const auto& r : per_episode) {
        eps.push_back({{"k", r.k}, {"return", stat_json(r.ret)}, {"cost", stat_json(r.cost)}});
    }
    json ctg = json::array();
    for (const auto& r : per_ctg) {
        ctg.push_back({{"ctg", r.ctg}, {"total_return", stat_json(r.total_return)}, {"max_cost", stat_json(r.max_cost)}});
    }
    return {{"n_tasks", n_tasks}, {"per_episode", eps}, {"per_ctg", ctg}};
}

Summary aggregate(const std::vector<EvalRecord>& records) {
    if (records.empty()) {
        throw DataError("aggregate: no records");
    }
    Summary s;
    int max_k = 0;
    std::map<int, double> ctg_of;
    std::map<int, bool> tasks;
    for (const auto& r : records) {
        max_k = std::max(max_k, r.k);
        ctg_of[r.ctg_index] = r.ctg;
        tasks[r.task_index] = true;
    }
    s.n_tasks = static_cast<int>(tasks.size());
    for (int k = 0; k <= max_k; ++k) {
        auto pick = [k](double EvalRecord::*field) {
            return [k, field](const std::vector<const EvalRecord*>& recs) -> std::optional<double> {
                for (const auto* r : recs) {
                    if (r->k == k) {
                        return r->*field;
                    }
                }
                return std::nullopt;
            };
        };
        const auto rets = task_values(records, pick(&EvalRecord::ret));
        if (rets.empty()) {
            continue;
        }
        s.per_episode.push_back({k, mean_se(rets), mean_se(task_values(records, pick(&EvalRecord::cost)))});
    }
    for (const auto& [ci, ctg] : ctg_of) {
        std::vector<double> totals;
        std::vector<double> maxes;
        std::map<int, std::pair<double, double>> per_task;
        for (const auto& r : records) {
            if (r.ctg_index != ci) {
                continue;
            }
            auto [it, fresh] = per_task.try_emplace(r.task_index, 0.0, -std::numeric_limits<double>::infinity());
            it->second.first += r.ret;
            it->second.second = std::max(it->second.second, r.cost);
        }
        for (const auto& [t, v] : per_task) {
            totals.push_back(v.first);
            maxes.push_back(v.second);
        }
        s.per_ctg.push_back({ctg, mean_se(totals), mean_se(maxes)});
    }
    return s;
}

WindowStats window_stats(const std::vector<EvalRecord>& records, int first, int count) {
    auto window_mean = [first, count](double EvalRecord::*field) {
        return [first, count, field](const std::vector<const EvalRecord*>& recs) -> std::optional<double> {
            double s = 0.0;
            int n = 0;
            for (const auto* r : recs) {
                if (r->k >= first && r->k < first + count) {
                    s += r->*field;
                    ++n;
                }
            }
            return n > 0 ? std::optional<double>(s / n) : std::nullopt;
        };
    };
    const auto rets = task_values(records, window_mean(&EvalRecord::ret));
    if (rets.empty()) {
        throw DataError("window_stats: no records in the window");
    }
    return {mean_se(rets), mean_se(task_values(records, window_mean(&EvalRecord::cost)))};
}

WindowStats last_window(const std::vector<EvalRecord>& records, int count) {
    int max_k = -1;
    for (const auto& r : records) {
        max_k = std::max(max_k, r.k);
    }
    return window_stats(records, max_k + 1 - count, count);
}

std::vector<CtgRow> ctg_sweep(const nn::SequenceModel& model, const std::vector<double>& sweep, EvalProtocol protocol) {
    protocol.ctg = CtgPolicy::sweep(sweep);
    if (model.spec().rtg_channel) {
        protocol.rtg = RtgRule{RtgRule::Kind::scaled, 0.5};
    }
    const EvalResult res = evaluate_icl(model, protocol);
    return aggregate(res.records).per_ctg;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw DataError("spearman: need two equal-length samples of size >= 2");
    }
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
                ++j;
            }
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t m = i; m <= j; ++m) {
                r[idx[m]] = avg;
            }
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    // A constant sample carries no rank information.
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

std::string records_csv(const std::vector<EvalRecord>& records) {
    std::ostringstream os;
    os.precision(17);
    os << "task_id,ctg,k,return,cost,steps\n";
    for (const auto& r : records) {
        os << r.task_index << ',' << r.ctg << ',' << r.k << ',' << r.ret << ',' << r.cost << ',' << r.steps << '\n';
    }
    return os.str();
}

void write_artifacts(const EvalResult& result, const EvalProtocol& protocol, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const Summary s = aggregate(result.records);
    {
        std::ofstream os(dir / "records.csv");
        os << records_csv(result.records);
    }
    json summary = s.to_json();
    summary["protocol"] = protocol.to_json();
    summary["checksum_before"] = result.checksum_before;
    summary["checksum_after"] = result.checksum_after;
    summary["ctg_values"] = result.ctg_values;
    {
        std::ofstream os(dir / "summary.json");
        os << summary.dump(2) << '\n';
    }
    Series ret{"return", {}, {}, {}};
    Series cost{"cost", {}, {}, {}};
    for (const auto& r : s.per_episode) {
        ret.x.push_back(r.k + 1);
        ret.y.push_back(r.ret.mean);
        ret.band.push_back(r.ret.se);
        cost.x.push_back(r.k + 1);
        cost.y.push_back(r.cost.mean);
        cost.band.push_back(r.cost.se);
    }
    std::ofstream(dir / "return.svg") << line_chart_svg("Episode return", "episode", "return", {ret});
    std::ofstream(dir / "cost.svg") << line_chart_svg("Episode cost", "episode", "cost", {cost});
    if (s.per_ctg.size() > 1) {
        Series tr{"total return", {}, {}, {}};
        Series mc{"max cost", {}, {}, {}};
        for (const auto& r : s.per_ctg) {
            tr.x.push_back(r.ctg);
            tr.y.push_back(r.total_return.mean);
            tr.band.push_back(r.total_return.se);
            mc.x.push_back(r.ctg);
            mc.y.push_back(r.max_cost.mean);
            mc.band.push_back(r.max_cost.se);
        }
        std::ofstream(dir / "ctg_return.svg") << line_chart_svg("Total return by CTG", "CTG", "total return", {tr});
        std::ofstream(dir / "ctg_cost.svg") << line_chart_svg("Max episode cost by CTG", "CTG", "max cost", {mc});
    }
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
    constexpr double W = 640;
    constexpr double H = 400;
    constexpr double L = 70;
    constexpr double R = 20;
    constexpr double T = 40;
    constexpr double B = 50;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
    double x0 = std::numeric_limits<double>::infinity();
    double x1 = -x0;
    double y0 = x0;
    double y1 = -x0;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size() || (!s.band.empty() && s.band.size() != s.y.size())) {
            throw ParameterError("line_chart_svg: series '" + s.name + "' has mismatched lengths");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double b = s.band.empty() ? 0.0 : s.band[i];
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i] - b);
            y1 = std::max(y1, s.y[i] + b);
        }
    }
    if (!std::isfinite(x0)) {
        x0 = 0;
        x1 = 1;
        y0 = 0;
        y1 = 1;
    }
    if (x1 == x0) {
        x1 = x0 + 1;
    }
    if (y1 == y0) {
        y1 = y0 + 1;
    }
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt(xv)
           << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
        os << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
           << "\" stroke=\"#e0e0e0\"/>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << (T + H - B) / 2 << ")\">" << escape(y_label) << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const char* color = colors[si % 6];
        if (!s.band.empty() && !s.x.empty()) {
            os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                os << px(s.x[i]) << ',' << py(s.y[i] + s.band[i]) << ' ';
            }
            for (std::size_t i = s.x.size(); i-- > 0;) {
                os << px(s.x[i]) << ',' << py(s.y[i] - s.band[i]) << ' ';
            }
            os << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (si + 1) << "\" text-anchor=\"end\" fill=\"" << color
           << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::vector<std::pair<std::string, std::vector<double>>> read_csv_columns(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("cannot read " + path.string());
    }
    std::string line;
    if (!std::getline(is, line)) {
        throw DataError("empty CSV " + path.string());
    }
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    {
        std::istringstream hs(line);
        std::string name;
        while (std::getline(hs, name, ',')) {
            cols.push_back({name, {}});
        }
    }
    int row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ls, cell, ',')) {
            if (c >= cols.size()) {
                throw DataError(path.string() + ": too many fields on row " + std::to_string(row));
            }
            try {
                std::size_t used = 0;
                cols[c].second.push_back(std::stod(cell, &used));
                if (used != cell.size()) {
                    throw std::invalid_argument(cell);
                }
            } catch (const std::exception&) {
                throw DataError(path.string() + ": non-numeric field '" + cell + "' on row " + std::to_string(row));
            }
            ++c;
        }
        if (c != cols.size()) {
            throw DataError(path.string() + ": too few fields on row " + std::to_string(row));
        }
    }
    return cols;
}

nn::SequenceModel load_policy(const nn::Checkpoint& ckpt) { return rl::actor_from_checkpoint(ckpt); }

}  // namespace eppo::harness
