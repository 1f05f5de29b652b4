#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "eppo/harness.hpp"
#include "eppo/rl/trainer.hpp"
#include "eppo/sl/dataset.hpp"
#include "eppo/sl/train.hpp"
#include "eppo/verify.hpp"

namespace fs = std::filesystem;
using namespace eppo;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kVerify = 2;
constexpr int kRuntime = 3;

// Options shared by all subcommands; set on the parent app.
struct Global {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out = ".";
};

class VerificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << text;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ParameterError("bad number '" + item + "' in list");
        }
    }
    return out;
}

int pretrain_rl(const Global& g) {
    auto cfg = rl::TrainConfig::from_json(load_json(g.config));
    if (g.seed_set) {
        cfg.seed = g.seed;
    }
    cfg.out_dir = g.out;
    const auto res = rl::train(cfg, [](const rl::MetricsRow& r) {
        if (r.step % 100 == 0) {
            std::printf("step %d return %.3f cost %.3f lambda %.3f\n", r.step, r.mean_return, r.mean_cost, r.lambda);
            std::fflush(stdout);
        }
        return true;
    });
    if (res.aborted) {
        std::fprintf(stderr, "training aborted: %s\n", res.abort_reason.c_str());
        return kRuntime;
    }
    std::printf("wrote %s\n", (fs::path(g.out) / "final.bin").c_str());
    return kOk;
}

// Config keys: "dataset" (directory) or "generation" (GenerationConfig),
// optional "ad_eps" (bool) for perturbed optimal histories, and "sl".
int pretrain_sl(const Global& g) {
    const json j = load_json(g.config);
    auto cfg = sl::SLConfig::from_json(j.value("sl", json::object()));
    if (g.seed_set) {
        cfg.seed = g.seed;
    }
    cfg.out_dir = g.out;
    sl::SLDataset data;
    if (j.contains("dataset")) {
        data = sl::read_dataset(j.at("dataset").get<std::string>());
    } else {
        const auto gen = sl::GenerationConfig::from_json(j.value("generation", json::object()));
        data = j.value("ad_eps", false) ? sl::ad_eps_dataset(gen, sl::linear_epsilon(), cfg.seed)
                                        : sl::generate_dataset(gen, cfg.seed);
        sl::write_dataset(data, fs::path(g.out) / "dataset");
    }
    const double signal = sl::learning_signal(data);
    std::printf("dataset: %zu trajectories, %zu steps, learning signal %.4f\n", data.trajectories.size(),
                data.n_steps(), signal);
    if (!(signal > 0.0)) {
        throw VerificationFailure("dataset shows no learning signal (late minus early return " +
                                  std::to_string(signal) + ")");
    }
    const auto res = sl::train_sl(cfg, data, [](int step, double loss) {
        if (step % 100 == 0) {
            std::printf("step %d loss %.4f\n", step, loss);
            std::fflush(stdout);
        }
        return true;
    });
    if (res.aborted) {
        std::fprintf(stderr, "training aborted: %s\n", res.abort_reason.c_str());
        return kRuntime;
    }
    std::printf("wrote %s\n", (fs::path(g.out) / "final.bin").c_str());
    return kOk;
}

struct GenArgs {
    int grid = 9;
    double alpha = 0.5;
    std::string orientation = "edge";
    int n_tasks = 16;
    int n_obstacles = -1;
    int time_limit = 30;
};

int gen_tasks(const Global& g, const GenArgs& a) {
    const auto o = taskgen::orientation_from_name(a.orientation);
    const int obstacles = a.n_obstacles < 0 ? taskgen::default_obstacle_count(a.grid) : a.n_obstacles;
    const auto suite = taskgen::generate_suite(a.grid, a.alpha, o, a.n_tasks, obstacles, a.time_limit, g.seed);
    const fs::path dir(g.out);
    write_text(dir / "suite.json", suite.to_json().dump(2) + "\n");
    write_text(dir / "center.csv",
               taskgen::distribution_csv(taskgen::build_distribution(a.grid, a.alpha, taskgen::Orientation::center)));
    write_text(dir / "edge.csv",
               taskgen::distribution_csv(taskgen::build_distribution(a.grid, a.alpha, taskgen::Orientation::edge)));
    std::printf("%d tasks, tv %.6f kl %.6f\n", a.n_tasks, suite.certificate.tv, suite.certificate.kl);
    return kOk;
}

harness::EvalProtocol protocol_for(const Global& g, const nn::SequenceModel& model) {
    const json j = g.config.empty() ? json::object() : load_json(g.config);
    auto p = harness::EvalProtocol::from_json(j);
    if (model.spec().rtg_channel && !j.contains("ctg") && !j.contains("rtg")) {
        p = harness::supervised_protocol(p);
    }
    if (g.seed_set) {
        p.seed = g.seed;
    }
    return p;
}

int eval(const Global& g, const std::string& checkpoint) {
    const auto model = harness::load_policy(nn::read_checkpoint(checkpoint));
    const auto p = protocol_for(g, model);
    const auto res = harness::evaluate_icl(model, p);
    harness::write_artifacts(res, p, g.out);
    const auto first = harness::window_stats(res.records, 0, std::min(5, p.K_eval));
    const auto last = harness::last_window(res.records, std::min(5, p.K_eval));
    std::printf("first episodes: return %.3f +- %.3f, cost %.3f +- %.3f\n", first.ret.mean, first.ret.se,
                first.cost.mean, first.cost.se);
    std::printf("last episodes:  return %.3f +- %.3f, cost %.3f +- %.3f\n", last.ret.mean, last.ret.se,
                last.cost.mean, last.cost.se);
    std::printf("checksum %016llx unchanged\n", static_cast<unsigned long long>(res.checksum_after));
    return kOk;
}

int sweep(const Global& g, const std::string& checkpoint, const std::string& values) {
    const auto model = harness::load_policy(nn::read_checkpoint(checkpoint));
    const auto p = protocol_for(g, model);
    const auto ctgs = parse_list(values);
    const auto rows = harness::ctg_sweep(model, ctgs, p);
    std::ostringstream csv;
    csv << "ctg,total_return,total_return_se,max_cost,max_cost_se\n";
    harness::Series ret{"total return", {}, {}, {}};
    harness::Series cost{"max cost", {}, {}, {}};
    std::vector<double> means;
    for (const auto& r : rows) {
        csv << r.ctg << ',' << r.total_return.mean << ',' << r.total_return.se << ',' << r.max_cost.mean << ','
            << r.max_cost.se << '\n';
        std::printf("ctg %g: total return %.3f +- %.3f, max cost %.3f +- %.3f\n", r.ctg, r.total_return.mean,
                    r.total_return.se, r.max_cost.mean, r.max_cost.se);
        ret.x.push_back(r.ctg);
        ret.y.push_back(r.total_return.mean);
        ret.band.push_back(r.total_return.se);
        cost.x.push_back(r.ctg);
        cost.y.push_back(r.max_cost.mean);
        cost.band.push_back(r.max_cost.se);
    }
    const fs::path dir(g.out);
    write_text(dir / "sweep.csv", csv.str());
    write_text(dir / "sweep_return.svg", harness::line_chart_svg("Total return by CTG", "CTG", "return", {ret}));
    write_text(dir / "sweep_cost.svg", harness::line_chart_svg("Max episode cost by CTG", "CTG", "cost", {cost}));
    if (rows.size() >= 2) {
        std::printf("spearman %.3f\n", harness::spearman(ret.x, ret.y));
    }
    return kOk;
}

int verify_theory(const Global& g, const std::string& fixtures) {
    const auto checks = verify::verify_theory(fixtures, g.seed);
    json report = json::array();
    bool ok = true;
    for (const auto& c : checks) {
        std::printf("%-24s %s (%.2fs)\n", c.name.c_str(), c.passed ? "pass" : "FAIL", c.seconds);
        report.push_back({{"name", c.name}, {"passed", c.passed}, {"seconds", c.seconds}, {"detail", c.detail}});
        ok = ok && c.passed;
    }
    write_text(fs::path(g.out) / "verify.json", report.dump(2) + "\n");
    return ok ? kOk : kVerify;
}

int plot(const Global& g, const std::string& csv, const std::string& x, const std::vector<std::string>& ys,
         const std::string& band, const std::string& title) {
    const auto cols = harness::read_csv_columns(csv);
    auto find = [&](const std::string& name) -> const std::vector<double>& {
        for (const auto& c : cols) {
            if (c.first == name) {
                return c.second;
            }
        }
        throw ParameterError("no column '" + name + "' in " + csv);
    };
    std::vector<harness::Series> series;
    for (const auto& y : ys) {
        harness::Series s{y, find(x), find(y), {}};
        if (!band.empty()) {
            s.band = find(band);
        }
        series.push_back(std::move(s));
    }
    const std::string name = title.empty() ? fs::path(csv).stem().string() : title;
    const fs::path out = fs::path(g.out) / (fs::path(csv).stem().string() + ".svg");
    write_text(out, harness::line_chart_svg(name, x, ys.size() == 1 ? ys[0] : "value", series));
    std::printf("wrote %s\n", out.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained in-context RL toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Global g;
    app.add_option("--config", g.config, "JSON config file");
    auto* seed_opt = app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--out", g.out, "Output directory");

    auto* rl_cmd = app.add_subcommand("pretrain-rl", "Reinforcement pretraining");
    auto* sl_cmd = app.add_subcommand("pretrain-sl", "Generate a dataset and run supervised pretraining");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-tasks", "Sample an evaluation suite with its divergence certificate");
    gen_cmd->add_option("--grid", gen.grid, "Grid size")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--alpha", gen.alpha, "Spawn concentration");
    gen_cmd->add_option("--orientation", gen.orientation, "center or edge")->check(CLI::IsMember({"center", "edge"}));
    gen_cmd->add_option("--n-tasks", gen.n_tasks, "Number of tasks")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--n-obstacles", gen.n_obstacles, "Obstacles per task (default scales with area)");
    gen_cmd->add_option("--time-limit", gen.time_limit, "Episode length")->check(CLI::PositiveNumber);

    std::string checkpoint;
    auto* eval_cmd = app.add_subcommand("eval", "Frozen-parameter in-context evaluation");
    eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);

    std::string values = "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15";
    auto* sweep_cmd = app.add_subcommand("sweep", "Total return and max cost across CTG values");
    sweep_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--values", values, "Ascending comma-separated CTG values");

    std::string fixtures = EPPO_FIXTURE_DIR "/cmdp";
    auto* verify_cmd = app.add_subcommand("verify-theory", "Exact checks on tabular instances");
    verify_cmd->add_option("--fixtures", fixtures, "Directory of CMDP fixtures")->check(CLI::ExistingDirectory);

    std::string csv, x_col = "k", band, title;
    std::vector<std::string> y_cols;
    auto* plot_cmd = app.add_subcommand("plot", "SVG line chart from a metrics CSV");
    plot_cmd->add_option("--csv", csv, "Input CSV with a header row")->required()->check(CLI::ExistingFile);
    plot_cmd->add_option("--x", x_col, "X column");
    plot_cmd->add_option("--y", y_cols, "Y columns")->required()->delimiter(',');
    plot_cmd->add_option("--band", band, "Column of band half-widths");
    plot_cmd->add_option("--title", title, "Chart title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (rl_cmd->parsed() || sl_cmd->parsed()) {
            if (g.config.empty()) {
                auto* cmd = rl_cmd->parsed() ? rl_cmd : sl_cmd;
                std::cerr << "--config is required for " << cmd->get_name() << "\n\n" << cmd->help();
                return kUsage;
            }
            return rl_cmd->parsed() ? pretrain_rl(g) : pretrain_sl(g);
        }
        if (gen_cmd->parsed()) {
            return gen_tasks(g, gen);
        }
        if (eval_cmd->parsed()) {
            return eval(g, checkpoint);
        }
        if (sweep_cmd->parsed()) {
            return sweep(g, checkpoint, values);
        }
        if (verify_cmd->parsed()) {
            return verify_theory(g, fixtures);
        }
        if (plot_cmd->parsed()) {
            return plot(g, csv, x_col, y_cols, band, title);
        }
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const VerificationFailure& e) {
        std::cerr << "verification failed: " << e.what() << "\n";
        return kVerify;
    } catch (const harness::FrozenParameterError& e) {
        std::cerr << "verification failed: " << e.what() << "\n";
        return kVerify;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}
