#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "eppo/sl/dataset.hpp"
#include "eppo/taskgen.hpp"

namespace fs = std::filesystem;
using namespace eppo;

namespace {

const fs::path kDir = fs::temp_directory_path() / "eppo_test_cli";

int run(const std::string& args) {
    const std::string cmd = std::string(EPPO_CLI) + " " + args + " > " + (kDir / "stdout.txt").string() + " 2> " +
                            (kDir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kRlConfig = R"({"grid_size": 5, "n_obstacles": 6, "t_max": 12, "K_min": 3, "K_max": 3, "T_max": 6,
  "batch_size": 2, "delta": 2.0, "ctg_min": 1, "ctg_max": 6,
  "model": {"embedding_dim": 16, "hidden_dim": 16, "n_layers": 1, "n_heads": 2, "max_seq_len": 48, "n_states": 25}})";

const char* kEvalConfig = R"({"grid_size": 5, "n_obstacles": 6, "time_limit": 12, "n_tasks": 3, "K_eval": 3,
  "ctg": {"kind": "uniform", "lo": 1, "hi": 6, "count": 2}})";

sl::GenerationConfig tiny_generation() {
    sl::GenerationConfig g;
    g.grid_size = 5;
    g.n_obstacles = 6;
    g.time_limit = 12;
    g.episodes_per_task = 20;
    g.cost_limits = {1.0};
    g.steps_per_limit = 1500;
    return g;
}

struct Fixture {
    Fixture() {
        fs::remove_all(kDir);
        fs::create_directories(kDir);
    }
    ~Fixture() { fs::remove_all(kDir); }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "usage errors exit 1") {
    CHECK(run("") == 1);
    CHECK(run("pretrain-rl") == 1);
    CHECK(slurp(kDir / "stderr.txt").find("--config") != std::string::npos);
    CHECK(run("pretrain-sl") == 1);
    CHECK(run("eval --no-such-flag") == 1);
    CHECK(run("gen-tasks --orientation sideways") == 1);
    CHECK(run("--help") == 0);
}

TEST_CASE_FIXTURE(Fixture, "gen-tasks writes a certified suite") {
    CHECK(run("gen-tasks --alpha 10 --grid 9 --seed 2 --out " + kDir.string()) == 0);
    std::ifstream in(kDir / "suite.json");
    const auto suite = taskgen::TaskSuite::from_json(nlohmann::json::parse(in));
    CHECK(suite.certificate.tv >= 0.999);
    CHECK(suite.tasks.size() == 16);
    CHECK(suite.grid_size == 9);
    CHECK(fs::exists(kDir / "center.csv"));
    CHECK(fs::exists(kDir / "edge.csv"));
}

TEST_CASE_FIXTURE(Fixture, "verify-theory passes on the shipped fixtures") {
    CHECK(run("verify-theory --seed 7 --out " + kDir.string()) == 0);
    const auto report = nlohmann::json::parse(slurp(kDir / "verify.json"));
    CHECK(report.size() == 4);
    for (const auto& c : report) {
        CHECK(c.at("passed") == true);
    }
    CHECK(run("verify-theory --fixtures /nonexistent") == 1);
}

TEST_CASE_FIXTURE(Fixture, "pretrain, evaluate, sweep and plot") {
    write(kDir / "rl.json", kRlConfig);
    write(kDir / "eval.json", kEvalConfig);
    const std::string rl = (kDir / "rl").string();
    REQUIRE(run("pretrain-rl --config " + (kDir / "rl.json").string() + " --seed 4 --out " + rl) == 0);
    CHECK(fs::exists(kDir / "rl" / "final.bin"));
    CHECK(fs::exists(kDir / "rl" / "metrics.csv"));

    const std::string ckpt = (kDir / "rl" / "final.bin").string();
    const std::string cfg = " --config " + (kDir / "eval.json").string();
    CHECK(run("eval --checkpoint " + ckpt + cfg + " --out " + (kDir / "eval").string()) == 0);
    CHECK(slurp(kDir / "stdout.txt").find("unchanged") != std::string::npos);
    const std::string records = slurp(kDir / "eval" / "records.csv");
    CHECK(records.rfind("task_id,ctg,k,return,cost,steps\n", 0) == 0);
    CHECK(std::count(records.begin(), records.end(), '\n') == 1 + 3 * 2 * 3);

    CHECK(run("sweep --checkpoint " + ckpt + cfg + " --values 1,3,6 --out " + (kDir / "sweep").string()) == 0);
    const std::string sweep = slurp(kDir / "sweep" / "sweep.csv");
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 4);
    CHECK(fs::exists(kDir / "sweep" / "sweep_return.svg"));
    CHECK(run("sweep --checkpoint " + ckpt + cfg + " --values 6,1") == 1);
    CHECK(run("eval --checkpoint " + (kDir / "missing.bin").string()) == 1);

    CHECK(run("plot --csv " + (kDir / "rl" / "metrics.csv").string() + " --x step --y mean_return,mean_cost --out " +
              kDir.string()) == 0);
    CHECK(slurp(kDir / "metrics.svg").rfind("<svg", 0) == 0);
    CHECK(run("plot --csv " + (kDir / "rl" / "metrics.csv").string() + " --y nothing") == 1);
}

TEST_CASE_FIXTURE(Fixture, "pretrain-sl trains on a learning dataset and rejects a flat one") {
    auto data = sl::generate_dataset(tiny_generation(), 3);
    REQUIRE(sl::learning_signal(data) > 0.0);
    const char* sl_model =
        R"("sl": {"batch_size": 2, "n_updates": 3, "model": {"embedding_dim": 8, "hidden_dim": 16, "n_layers": 1,
           "n_heads": 2, "max_seq_len": 40, "n_states": 25}})";
    write(kDir / "gen.json", std::string("{\"generation\": ") + tiny_generation().to_json().dump() + ", " + sl_model + "}");
    CHECK(run("pretrain-sl --config " + (kDir / "gen.json").string() + " --out " + (kDir / "sl").string()) == 0);
    CHECK(fs::exists(kDir / "sl" / "final.bin"));
    CHECK(fs::exists(kDir / "sl" / "dataset" / "manifest.json"));

    // Reversing each history turns improvement into decline.
    for (auto& tr : data.trajectories) {
        std::reverse(tr.episodes.begin(), tr.episodes.end());
        tr.annotate();
    }
    REQUIRE(sl::learning_signal(data) < 0.0);
    sl::write_dataset(data, kDir / "flat");
    write(kDir / "flat.json", "{\"dataset\": \"" + (kDir / "flat").string() + "\", " + sl_model + "}");
    CHECK(run("pretrain-sl --config " + (kDir / "flat.json").string() + " --out " + (kDir / "sl2").string()) == 2);
    CHECK(slurp(kDir / "stderr.txt").find("learning signal") != std::string::npos);
    CHECK_FALSE(fs::exists(kDir / "sl2" / "final.bin"));
}
