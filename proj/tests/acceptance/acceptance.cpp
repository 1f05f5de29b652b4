// Acceptance checks 1-9. One line per criterion; exit status 1 if any fails.
#include <CLI11.hpp>

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "eppo/harness.hpp"
#include "eppo/nn/gradcheck.hpp"
#include "eppo/rl/trainer.hpp"
#include "eppo/sl/dataset.hpp"
#include "eppo/sl/train.hpp"
#include "eppo/verify.hpp"

namespace fs = std::filesystem;
using namespace eppo;
using json = nlohmann::json;

namespace {

// Criterion 1
constexpr double kFixedPointTol = 1e-3;
constexpr int kFuzzedInstances = 20;
constexpr double kFixedPointSeconds = 120.0;
// Criterion 2
constexpr int kStationarityPairs = 1000;
constexpr double kStationaritySeconds = 1.0;
// Criterion 3
constexpr double kDivergenceSeconds = 1.0;
// Criterion 4
constexpr int kGradTrials = 50;
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 300.0;
// Criterion 5
constexpr int kSeeds = 3;
constexpr int kSeedsToPass = 2;
constexpr int kEvalTasks = 16;
constexpr int kEvalEpisodes = 20;
constexpr int kEvalCtgCount = 10;
constexpr double kCtgLo = 1.0;
constexpr double kCtgHi = 6.0;
constexpr int kWindow = 5;
constexpr double kMinReturnGain = 0.2;
constexpr double kCostSlack = 1.0;
constexpr double kBaselineSE = 2.0;
constexpr int kMaxUpdates = 5000;
// Criterion 6
const std::vector<double> kSweep{1, 2, 3, 4, 5, 6};
// Criterion 7
constexpr int kConvergenceIters = 2000;
constexpr int kConvergenceK = 4;
// Criterion 8
const double kMaxCrossEntropy = 0.7 * std::log(5.0);
constexpr int kLossTail = 50;

struct Line {
    int id;
    std::string title;
    bool passed;
    std::string detail;
};

struct Context {
    fs::path fixtures;
    fs::path out;
    bool reuse = false;
    std::uint64_t seed = 7;
    // Every evaluation run of the session, for the frozen-parameter check.
    int evals = 0;
    int frozen_violations = 0;
    std::string frozen_log;
};

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

json load_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw DataError("cannot open " + p.string());
    }
    return json::parse(in);
}

// Evaluation wrappers that record the checksum contract for criterion 9.
harness::EvalResult checked_eval(Context& ctx, const nn::SequenceModel& m, const harness::EvalProtocol& p) {
    const std::uint64_t before = m.checksum();
    ++ctx.evals;
    try {
        auto r = harness::evaluate_icl(m, p);
        if (r.checksum_before != before || r.checksum_after != before || m.checksum() != before) {
            ++ctx.frozen_violations;
        }
        return r;
    } catch (const harness::FrozenParameterError& e) {
        ++ctx.frozen_violations;
        ctx.frozen_log += e.what();
        throw;
    }
}

std::vector<harness::CtgRow> checked_sweep(Context& ctx, const nn::SequenceModel& m, const harness::EvalProtocol& p) {
    const std::uint64_t before = m.checksum();
    ++ctx.evals;
    try {
        auto rows = harness::ctg_sweep(m, kSweep, p);
        if (m.checksum() != before) {
            ++ctx.frozen_violations;
        }
        return rows;
    } catch (const harness::FrozenParameterError& e) {
        ++ctx.frozen_violations;
        ctx.frozen_log += e.what();
        throw;
    }
}

Line theory_line(int id, const std::string& title, const verify::Check& c, double max_seconds,
                 const std::string& summary) {
    const bool fast = c.seconds < max_seconds;
    return {id, title, c.passed && fast, summary + fmt(", %.2fs (limit %.0fs)", c.seconds, max_seconds)};
}

std::vector<verify::Instance> theory_instances(const Context& ctx) {
    auto inst = verify::fixture_instances(ctx.fixtures / "cmdp");
    for (auto& f : verify::fuzzed_instances(kFuzzedInstances, ctx.seed)) {
        inst.push_back(std::move(f));
    }
    return inst;
}

Line criterion1(Context& ctx) {
    const auto inst = theory_instances(ctx);
    const auto c = verify::fixed_point_suite(inst, kFixedPointTol);
    int ok = 0;
    long iters = 0;
    for (const auto& row : c.detail) {
        ok += row.at("passed").get<bool>();
        iters = std::max(iters, row.at("iterations").get<long>());
    }
    return theory_line(1, "fixed-point equivalence", c, kFixedPointSeconds,
                       fmt("%d/%zu instances certified, max %ld iterations", ok, inst.size(), iters));
}

Line criterion2(Context& ctx) {
    const auto c = verify::stationarity_suite(kStationarityPairs, ctx.seed);
    return theory_line(2, "projection stationarity", c, kStationaritySeconds,
                       fmt("%d pairs, %d violations", c.detail.at("pairs").get<int>(),
                           c.detail.at("violations").get<int>()));
}

Line criterion3(Context&) {
    const auto c = verify::divergence_suite();
    const auto& last = c.detail.at("grid9").back();
    return theory_line(3, "center/edge divergence", c, kDivergenceSeconds,
                       fmt("tv(10) %.6f, kl(10) %.1f, two-cell errors %.1e / %.1e", last.at("tv").get<double>(),
                           last.at("kl").get<double>(), c.detail.at("two_cell_tv_error").get<double>(),
                           c.detail.at("two_cell_kl_error").get<double>()));
}

// Full actor and critic losses through a small random model on collected
// histories, checked against central differences.
double loss_gradcheck(bool actor, std::uint64_t seed) {
    Rng rng(seed);
    rl::TrainConfig cfg;
    cfg.grid_size = 3;
    cfg.n_obstacles = 1;
    cfg.t_max = 3;
    cfg.K_min = 1;
    cfg.K_max = 2;
    cfg.ctg_min = 0.5;
    cfg.ctg_max = 2.0;
    cfg.delta = 1.0;
    cfg.model.embedding_dim = 4;
    cfg.model.hidden_dim = 6;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.max_seq_len = 8;
    cfg.model.n_states = 9;
    const nn::SequenceModel online(cfg.model, rng());
    const nn::SequenceModel target(cfg.model, rng());
    const auto dist = taskgen::build_distribution(3, 0.5, taskgen::Orientation::center);
    std::vector<rl::HistoryRecord> hs;
    for (int i = 0; i < 2; ++i) {
        hs.push_back(rl::collect_history(dist, online, cfg, rng));
    }
    const rl::TrainingBatch tb = rl::make_batch({&hs[0], &hs[1]}, cfg);
    const double lambda = uniform_real(rng, 0.0, 3.0);
    const std::uint64_t draw = rng();
    std::vector<nn::Var> params;
    for (const auto& p : online.parameters()) {
        params.push_back(p.var);
    }
    // The actor objective treats both critics as constants.
    nn::Mat q0, qc0;
    {
        nn::Graph g;
        const nn::Outputs on = online.forward(g, tb.batch, false, nullptr);
        q0 = on.q->value;
        qc0 = on.qc->value;
    }
    auto loss = [&](nn::Graph& g) {
        nn::Outputs on = online.forward(g, tb.batch, false, nullptr);
        if (actor) {
            on.q = g.constant(q0);
            on.qc = g.constant(qc0);
            return rl::actor_loss(g, tb, on, lambda, 0.01);
        }
        const nn::Outputs tg = target.forward(g, tb.batch, false, nullptr);
        Rng r(draw);
        const auto cl = rl::critic_losses(g, tb, on, tg, cfg.gamma, r);
        return nn::add(g, cl.loss_v, cl.loss_c);
    };
    return nn::gradient_check(params, loss);
}

Line criterion4(Context& ctx) {
    const Timer t;
    double worst = 0.0;
    std::string worst_name;
    int checked = 0;
    for (const auto& r : nn::op_gradcheck_suite(kGradTrials, ctx.seed)) {
        ++checked;
        if (r.worst > worst) {
            worst = r.worst;
            worst_name = r.op;
        }
    }
    for (bool actor : {true, false}) {
        double w = 0.0;
        for (int i = 0; i < kGradTrials; ++i) {
            w = std::max(w, loss_gradcheck(actor, derive_seed(ctx.seed, static_cast<std::uint64_t>(i * 2 + actor))));
        }
        ++checked;
        if (w > worst) {
            worst = w;
            worst_name = actor ? "actor_loss" : "critic_loss";
        }
    }
    const double s = t.seconds();
    return {4, "gradient correctness", worst <= kGradTol && s < kGradSeconds,
            fmt("%d checks x %d trials, worst relative error %.2e (%s), %.1fs", checked, kGradTrials, worst,
                worst_name.c_str(), s)};
}

harness::EvalProtocol desk_protocol(const rl::TrainConfig& cfg, std::uint64_t seed) {
    harness::EvalProtocol p;
    p.grid_size = cfg.grid_size;
    p.n_obstacles = cfg.n_obstacles;
    p.time_limit = cfg.t_max;
    p.alpha = cfg.alpha;
    p.n_tasks = kEvalTasks;
    p.K_eval = kEvalEpisodes;
    p.ctg = harness::CtgPolicy::uniform(kCtgLo, kCtgHi, kEvalCtgCount);
    p.seed = seed;
    return p;
}

bool dominates(const harness::Stat& better, const harness::Stat& worse, bool higher) {
    const double d = higher ? better.mean - worse.mean : worse.mean - better.mean;
    return d >= kBaselineSE * std::hypot(better.se, worse.se);
}

// Trains (or reloads) the desk-scale RL checkpoint for one seed.
nn::SequenceModel desk_policy(Context& ctx, const rl::TrainConfig& base, int seed) {
    rl::TrainConfig cfg = base;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.out_dir = (ctx.out / fmt("rl_seed%d", seed)).string();
    const fs::path final_path = fs::path(cfg.out_dir) / "final.bin";
    if (ctx.reuse && fs::exists(final_path)) {
        const json saved = load_json(fs::path(cfg.out_dir) / "config.json");
        if (saved == cfg.to_json()) {
            return harness::load_policy(nn::read_checkpoint(final_path.string()));
        }
    }
    const Timer t;
    const auto res = rl::train(cfg);
    if (res.aborted) {
        throw NumericError("seed " + std::to_string(seed) + " aborted: " + res.abort_reason);
    }
    std::printf("  [seed %d trained in %.0fs]\n", seed, t.seconds());
    std::fflush(stdout);
    return harness::load_policy(res.checkpoint);
}

struct DeskSeed {
    int seed = 0;
    std::optional<nn::SequenceModel> model;
    harness::EvalProtocol protocol;
};

std::vector<DeskSeed>& desk_models(Context& ctx) {
    static std::vector<DeskSeed> models;
    if (!models.empty()) {
        return models;
    }
    const auto cfg = rl::TrainConfig::from_json(load_json(ctx.fixtures / "acceptance" / "rl_desk.json"));
    if (cfg.T_max > kMaxUpdates) {
        throw ParameterError("desk config exceeds the update budget");
    }
    for (int s = 0; s < kSeeds; ++s) {
        models.push_back({s, desk_policy(ctx, cfg, s), desk_protocol(cfg, derive_seed(ctx.seed, 100))});
    }
    return models;
}

Line criterion5(Context& ctx) {
    int passing = 0;
    std::string detail;
    for (auto& d : desk_models(ctx)) {
        const auto r = checked_eval(ctx, *d.model, d.protocol);
        harness::write_artifacts(r, d.protocol, ctx.out / fmt("eval_seed%d", d.seed));
        const auto tasks = d.protocol.suite().tasks;
        const auto uniform = harness::uniform_baseline(d.protocol, tasks);
        const auto first = harness::window_stats(r.records, 0, kWindow);
        const auto last = harness::last_window(r.records, kWindow);
        const auto base = harness::last_window(uniform, kWindow);
        const double gain = last.ret.mean - first.ret.mean;
        const double limit = 2.0 + kCostSlack;
        const bool ok = gain >= kMinReturnGain && last.cost.mean <= limit && dominates(last.ret, base.ret, true) &&
                        dominates(last.cost, base.cost, false);
        passing += ok;
        detail += fmt("; seed %d %s: return %.3f->%.3f (gain %+.3f), cost %.3f->%.3f, uniform %.3f/%.3f", d.seed,
                      ok ? "pass" : "fail", first.ret.mean, last.ret.mean, gain, first.cost.mean, last.cost.mean,
                      base.ret.mean, base.cost.mean);
    }
    return {5, "desk in-context adaptation", passing >= kSeedsToPass,
            fmt("%d/%d seeds pass", passing, kSeeds) + detail};
}

Line criterion6(Context& ctx) {
    int passing = 0;
    std::string detail;
    for (auto& d : desk_models(ctx)) {
        const auto rows = checked_sweep(ctx, *d.model, d.protocol);
        std::vector<double> ctg, ret;
        for (const auto& r : rows) {
            ctg.push_back(r.ctg);
            ret.push_back(r.total_return.mean);
        }
        const double rho = harness::spearman(ctg, ret);
        const double lo = rows.front().max_cost.mean;
        const double hi = rows.back().max_cost.mean;
        const bool ok = rho > 0.0 && lo < hi;
        passing += ok;
        detail += fmt("; seed %d %s: spearman %.2f, max cost %.2f at CTG %g vs %.2f at CTG %g", d.seed,
                      ok ? "pass" : "fail", rho, lo, kSweep.front(), hi, kSweep.back());
    }
    return {6, "CTG responsiveness", passing >= kSeedsToPass, fmt("%d/%d seeds pass", passing, kSeeds) + detail};
}

Line criterion7(Context& ctx) {
    penalty::RunOptions opt;
    opt.K = kConvergenceK;
    opt.n_iters = kConvergenceIters;
    opt.keep_policies = false;
    const auto c = verify::multiplier_convergence(theory_instances(ctx), opt);
    return {7, "multiplier convergence vs per-episode primal-dual", c.passed,
            fmt("hinge settles on %d, per-episode linear on %d of %zu instances (eta %.2f)",
                c.detail.at("hinge_converged").get<int>(), c.detail.at("linear_converged").get<int>(),
                c.detail.at("instances").size(), opt.eta)};
}

struct SlRun {
    double loss_tail = 0.0;
    harness::WindowStats last;
};

SlRun sl_variant(Context& ctx, const json& j, bool ad_eps) {
    const auto gen = sl::GenerationConfig::from_json(j.at("generation"));
    auto cfg = sl::SLConfig::from_json(j.at("sl"));
    cfg.seed = derive_seed(ctx.seed, 200);
    const std::string name = ad_eps ? "sl_ad_eps" : "sl_genuine";
    cfg.out_dir = (ctx.out / name).string();
    const sl::SLDataset data = ad_eps ? sl::ad_eps_dataset(gen, sl::linear_epsilon(), cfg.seed)
                                      : sl::generate_dataset(gen, cfg.seed);
    nn::Checkpoint ckpt;
    std::vector<double> losses;
    const fs::path final_path = fs::path(cfg.out_dir) / "final.bin";
    if (ctx.reuse && fs::exists(final_path) && load_json(fs::path(cfg.out_dir) / "config.json") == cfg.to_json()) {
        ckpt = nn::read_checkpoint(final_path.string());
        const auto cols = harness::read_csv_columns(fs::path(cfg.out_dir) / "losses.csv");
        losses = cols.at(1).second;
    } else {
        const Timer t;
        auto res = sl::train_sl(cfg, data);
        if (res.aborted) {
            throw NumericError(name + " aborted: " + res.abort_reason);
        }
        std::printf("  [%s trained in %.0fs]\n", name.c_str(), t.seconds());
        std::fflush(stdout);
        ckpt = std::move(res.checkpoint);
        losses = res.losses;
    }
    SlRun out;
    const std::size_t n = std::min<std::size_t>(kLossTail, losses.size());
    for (std::size_t i = losses.size() - n; i < losses.size(); ++i) {
        out.loss_tail += losses[i] / static_cast<double>(n);
    }
    const auto model = harness::load_policy(ckpt);
    harness::EvalProtocol p;
    p.grid_size = gen.grid_size;
    p.n_obstacles = gen.n_obstacles;
    p.time_limit = gen.time_limit;
    p.alpha = gen.alpha;
    p.n_tasks = kEvalTasks;
    p.K_eval = kEvalEpisodes;
    p.seed = derive_seed(ctx.seed, 300);
    p = harness::supervised_protocol(p);
    const auto r = checked_eval(ctx, model, p);
    harness::write_artifacts(r, p, ctx.out / (name + "_eval"));
    out.last = harness::last_window(r.records, kWindow);
    return out;
}

Line criterion8(Context& ctx) {
    const json j = load_json(ctx.fixtures / "acceptance" / "sl_desk.json");
    const auto genuine = sl_variant(ctx, j, false);
    const auto ad_eps = sl_variant(ctx, j, true);
    const bool ok = genuine.loss_tail < kMaxCrossEntropy && ad_eps.last.ret.mean < genuine.last.ret.mean;
    return {8, "supervised baseline", ok,
            fmt("training CE %.3f (limit %.3f); last-%d OOD return genuine %.3f +- %.3f vs AD-EPS %.3f +- %.3f "
                "(AD-EPS CE %.3f)",
                genuine.loss_tail, kMaxCrossEntropy, kWindow, genuine.last.ret.mean, genuine.last.ret.se,
                ad_eps.last.ret.mean, ad_eps.last.ret.se, ad_eps.loss_tail)};
}

Line criterion9(Context& ctx) {
    // A standalone eval and sweep so the check never runs empty.
    rl::TrainConfig cfg = rl::TrainConfig::from_json(load_json(ctx.fixtures / "acceptance" / "rl_desk.json"));
    const nn::SequenceModel m(cfg.model, derive_seed(ctx.seed, 400));
    auto p = desk_protocol(cfg, derive_seed(ctx.seed, 401));
    p.n_tasks = 4;
    p.K_eval = 3;
    checked_eval(ctx, m, p);
    checked_sweep(ctx, m, p);
    return {9, "frozen parameters", ctx.frozen_violations == 0,
            fmt("%d eval/sweep runs, %d checksum mismatches", ctx.evals, ctx.frozen_violations) + ctx.frozen_log};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    Context ctx;
    std::string fixtures = EPPO_FIXTURE_DIR;
    std::string out = "acceptance_out";
    std::vector<int> only;
    app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',')->check(CLI::Range(1, 9));
    app.add_option("--fixtures", fixtures, "Fixture directory")->check(CLI::ExistingDirectory);
    app.add_option("--out", out, "Directory for checkpoints and evaluation artifacts");
    app.add_option("--seed", ctx.seed, "Seed for fuzzing and evaluation suites");
    app.add_flag("--reuse", ctx.reuse, "Reuse trained checkpoints in --out when their config matches");
    CLI11_PARSE(app, argc, argv);
    ctx.fixtures = fixtures;
    ctx.out = out;
    fs::create_directories(ctx.out);

    const std::map<int, std::function<Line(Context&)>> criteria{
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
        {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}};
    const std::set<int> selected(only.begin(), only.end());
    json report = json::array();
    bool all = true;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.count(id)) {
            continue;
        }
        const Timer t;
        Line line;
        try {
            line = fn(ctx);
        } catch (const std::exception& e) {
            line = {id, "error", false, e.what()};
        }
        std::printf("criterion %d %s: %s (%s) [%.0fs]\n", line.id, line.passed ? "PASS" : "FAIL", line.title.c_str(),
                    line.detail.c_str(), t.seconds());
        std::fflush(stdout);
        report.push_back({{"criterion", line.id}, {"passed", line.passed}, {"title", line.title},
                          {"detail", line.detail}, {"seconds", t.seconds()}});
        all = all && line.passed;
    }
    std::ofstream(ctx.out / "acceptance.json") << report.dump(2) << "\n";
    return all ? 0 : 1;
}
