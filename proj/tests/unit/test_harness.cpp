#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "eppo/harness.hpp"
#include "eppo/rl/trainer.hpp"

using namespace eppo;
using namespace eppo::harness;

namespace {

EvalProtocol desk_protocol() {
    EvalProtocol p;
    p.grid_size = 5;
    p.n_obstacles = 6;
    p.time_limit = 12;
    p.K_eval = 6;
    p.n_tasks = 4;
    p.ctg = CtgPolicy::uniform(1.0, 6.0, 3);
    p.seed = 11;
    p.threads = 1;
    return p;
}

nn::ModelSpec desk_model() {
    nn::ModelSpec s = rl::TrainConfig::default_model();
    s.embedding_dim = 16;
    s.hidden_dim = 16;
    s.n_layers = 1;
    s.n_heads = 2;
    s.max_seq_len = 240;
    s.n_states = 25;
    return s;
}

EvalRecord rec(int task, int k, double ret, double cost, int ctg_index = 0, double ctg = 1.0) {
    EvalRecord r;
    r.task_index = task;
    r.k = k;
    r.ret = ret;
    r.cost = cost;
    r.ctg_index = ctg_index;
    r.ctg = ctg;
    return r;
}

}  // namespace

TEST_CASE("evaluation leaves parameters untouched and is deterministic") {
    const nn::SequenceModel m(desk_model(), 3);
    const std::uint64_t before = m.checksum();
    EvalProtocol p = desk_protocol();
    const EvalResult a = evaluate_icl(m, p);
    CHECK(a.checksum_before == before);
    CHECK(a.checksum_after == before);
    CHECK(m.checksum() == before);
    REQUIRE(a.records.size() == 4 * 3 * 6);
    CHECK(a.ctg_values.size() == 3);
    for (std::size_t i = 1; i < a.records.size(); ++i) {
        const auto& x = a.records[i - 1];
        const auto& y = a.records[i];
        CHECK(std::tie(x.task_index, x.ctg_index, x.k) < std::tie(y.task_index, y.ctg_index, y.k));
    }
    for (const auto& r : a.records) {
        CHECK((r.ret == 0.0 || r.ret == 1.0));
        CHECK(r.goal_reached == (r.ret == 1.0));
        CHECK(r.steps >= 1);
        CHECK(r.steps <= 12);
        CHECK(r.ctg >= 1.0);
        CHECK(r.ctg <= 6.0);
    }

    p.threads = 3;
    const EvalResult b = evaluate_icl(m, p);
    CHECK(records_csv(a.records) == records_csv(b.records));
    p.greedy = true;
    const EvalResult c = evaluate_icl(m, p);
    const EvalResult d = evaluate_icl(m, p);
    CHECK(records_csv(c.records) == records_csv(d.records));
}

TEST_CASE("single-episode evaluation") {
    const nn::SequenceModel m(desk_model(), 4);
    EvalProtocol p = desk_protocol();
    p.K_eval = 1;
    const EvalResult r = evaluate_icl(m, p);
    CHECK(r.records.size() == 4 * 3);
    for (const auto& x : r.records) {
        CHECK(x.k == 0);
    }
}

TEST_CASE("evaluation rejects mismatched inputs") {
    const nn::SequenceModel m(desk_model(), 4);
    EvalProtocol p = desk_protocol();
    p.grid_size = 9;
    p.n_obstacles = 10;
    CHECK_THROWS_AS(evaluate_icl(m, p), ParameterError);
    p = desk_protocol();
    p.K_eval = 0;
    CHECK_THROWS_AS(evaluate_icl(m, p), ParameterError);
    p = desk_protocol();
    p.ctg = CtgPolicy::sweep({3.0, 1.0});
    CHECK_THROWS_AS(evaluate_icl(m, p), ParameterError);
    p.ctg = CtgPolicy::sweep({});
    CHECK_THROWS_AS(evaluate_icl(m, p), ParameterError);
}

TEST_CASE("sampled random-weights policy matches the uniform policy") {
    EvalProtocol p = desk_protocol();
    p.n_tasks = 50;
    p.ctg = CtgPolicy::uniform(1.0, 6.0, 10);
    p.K_eval = 20;
    const auto tasks = p.suite().tasks;
    const nn::SequenceModel m(desk_model(), 21);
    const EvalResult model = evaluate_icl(m, p, tasks);
    const auto uniform = uniform_baseline(p, tasks);
    REQUIRE(uniform.size() == 10000);
    // Units are whole rollouts: episodes within one context are dependent.
    auto per_rollout = [](const std::vector<EvalRecord>& recs) {
        std::vector<double> out(recs.size() / 20, 0.0);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            out[i / 20] += recs[i].ret / 20.0;
        }
        return mean_se(out);
    };
    const Stat a = per_rollout(model.records);
    const Stat b = per_rollout(uniform);
    INFO("model " << a.mean << " +- " << a.se << ", uniform " << b.mean << " +- " << b.se);
    CHECK(std::abs(a.mean - b.mean) < 3.0 * std::hypot(a.se, b.se));
}

TEST_CASE("aggregation") {
    SUBCASE("two-point standard error") {
        const Summary s = aggregate({rec(0, 0, 0.0, 1.0), rec(1, 0, 1.0, 3.0)});
        REQUIRE(s.per_episode.size() == 1);
        CHECK(s.per_episode[0].ret.mean == doctest::Approx(0.5));
        CHECK(s.per_episode[0].ret.se == doctest::Approx(0.5));
        CHECK(s.per_episode[0].cost.mean == doctest::Approx(2.0));
        CHECK(s.per_episode[0].cost.se == doctest::Approx(1.0));
        CHECK(s.n_tasks == 2);
    }
    SUBCASE("single task has zero standard error") {
        const Summary s = aggregate({rec(0, 0, 1.0, 2.0), rec(0, 1, 0.0, 1.0)});
        for (const auto& r : s.per_episode) {
            CHECK(r.ret.se == 0.0);
            CHECK(r.cost.se == 0.0);
        }
        CHECK(s.per_ctg[0].total_return.mean == 1.0);
        CHECK(s.per_ctg[0].max_cost.mean == 2.0);
    }
    SUBCASE("three-task fixture") {
        // Task t, episode k: returns and costs; two CTG values for task 2.
        std::vector<EvalRecord> r{rec(0, 0, 0, 2), rec(0, 1, 1, 0), rec(0, 2, 1, 1),
                                  rec(1, 0, 0, 0), rec(1, 1, 0, 3), rec(1, 2, 1, 0),
                                  rec(2, 0, 1, 1), rec(2, 1, 1, 1), rec(2, 2, 1, 0),
                                  rec(2, 0, 0, 4, 1, 5.0), rec(2, 1, 1, 2, 1, 5.0), rec(2, 2, 1, 0, 1, 5.0)};
        const Summary s = aggregate(r);
        // Episode 0 returns by task: 0, 0, (1 + 0) / 2.
        CHECK(s.per_episode[0].ret.mean == doctest::Approx(0.5 / 3));
        CHECK(s.per_episode[0].ret.se == doctest::Approx(std::sqrt((2 * std::pow(0.5 / 3, 2) + std::pow(1.0 / 3, 2)) / 2) /
                                                        std::sqrt(3.0)));
        // Episode 1 costs: 0, 3, 1.5.
        CHECK(s.per_episode[1].cost.mean == doctest::Approx(1.5));
        CHECK(s.per_episode[1].cost.se == doctest::Approx(std::sqrt((2.25 + 2.25 + 0) / 2) / std::sqrt(3.0)));
        REQUIRE(s.per_ctg.size() == 2);
        // CTG index 0: totals 2, 1, 3 and max costs 2, 3, 1.
        CHECK(s.per_ctg[0].total_return.mean == doctest::Approx(2.0));
        CHECK(s.per_ctg[0].total_return.se == doctest::Approx(1.0 / std::sqrt(3.0)));
        CHECK(s.per_ctg[0].max_cost.mean == doctest::Approx(2.0));
        CHECK(s.per_ctg[1].ctg == 5.0);
        CHECK(s.per_ctg[1].total_return.n == 1);
        CHECK(s.per_ctg[1].max_cost.mean == 4.0);

        const WindowStats first = window_stats(r, 0, 2);
        // Task means over episodes 0-1: 0.5, 0, (1 + 0.5) / 2.
        CHECK(first.ret.mean == doctest::Approx((0.5 + 0.0 + 0.75) / 3));
        const WindowStats last = last_window(r, 1);
        CHECK(last.ret.mean == doctest::Approx(1.0));
        CHECK(last.cost.mean == doctest::Approx(1.0 / 3));

        std::mt19937 g(5);
        std::shuffle(r.begin(), r.end(), g);
        const Summary t = aggregate(r);
        CHECK(t.to_json() == s.to_json());
    }
    CHECK_THROWS_AS(aggregate({}), DataError);
    CHECK_THROWS_AS(mean_se({}), DataError);
    CHECK_THROWS_AS(window_stats({rec(0, 0, 0, 0)}, 3, 2), DataError);
}

TEST_CASE("CTG sweep") {
    const nn::SequenceModel m(desk_model(), 6);
    EvalProtocol p = desk_protocol();
    const auto rows = ctg_sweep(m, {1.0, 2.0, 4.0}, p);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].ctg == 1.0);
    CHECK(rows[2].ctg == 4.0);
    CHECK_THROWS_AS(ctg_sweep(m, {2.0, 1.0}, p), ParameterError);

    p.ctg = CtgPolicy::fixed(2.0);
    const Summary direct = aggregate(evaluate_icl(m, p).records);
    const auto single = ctg_sweep(m, {2.0}, p);
    REQUIRE(single.size() == 1);
    CHECK(single[0].total_return.mean == direct.per_ctg[0].total_return.mean);
    CHECK(single[0].max_cost.mean == direct.per_ctg[0].max_cost.mean);
}

TEST_CASE("return-to-go targets") {
    const RtgRule scaled{RtgRule::Kind::scaled, 0.0};
    CHECK(scaled.target(3.0) == 0.5);
    CHECK(scaled.target(12.0) == doctest::Approx(1.2));
    const EvalProtocol s = supervised_protocol(desk_protocol());
    CHECK(s.rtg.target(4.0) == 1.0);
    Rng rng(0);
    CHECK(s.ctg.resolve(rng) == std::vector<double>{0.0});

    nn::ModelSpec spec = desk_model();
    spec.rtg_channel = true;
    spec.critic_heads = false;
    const nn::SequenceModel m(spec, 2);
    EvalProtocol p = s;
    const auto a = evaluate_icl(m, p).records;
    p.rtg.value = 50.0;
    const auto b = evaluate_icl(m, p).records;
    CHECK(records_csv(a) != records_csv(b));
}

TEST_CASE("protocol json round trip") {
    EvalProtocol p = desk_protocol();
    p.ctg = CtgPolicy::sweep({1, 2, 3});
    p.rtg = RtgRule{RtgRule::Kind::scaled, 0.5};
    CHECK(EvalProtocol::from_json(p.to_json()).to_json() == p.to_json());
    CHECK_THROWS_AS(EvalProtocol::from_json(json{{"ctg", {{"kind", "random"}}}}), ParameterError);
    CHECK_THROWS_AS(EvalProtocol::from_json(json{{"K_eval", "many"}}), DataError);
}

TEST_CASE("rank correlation") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
    // Ties take average ranks: y ranks 1, 2.5, 2.5, 4.
    CHECK(spearman({1, 2, 3, 4}, {0, 5, 5, 9}) == doctest::Approx(4.5 / std::sqrt(5.0 * 4.5)));
    CHECK(spearman({1, 2, 3}, {7, 7, 7}) == 0.0);
    CHECK_THROWS_AS(spearman({1}, {1}), DataError);
    CHECK_THROWS_AS(spearman({1, 2}, {1}), DataError);
}

TEST_CASE("artifacts") {
    const nn::SequenceModel m(desk_model(), 8);
    const EvalProtocol p = desk_protocol();
    const EvalResult r = evaluate_icl(m, p);
    const auto dir = std::filesystem::temp_directory_path() / "eppo_test_harness";
    std::filesystem::remove_all(dir);
    write_artifacts(r, p, dir);
    for (const char* f : {"records.csv", "summary.json", "return.svg", "cost.svg", "ctg_return.svg", "ctg_cost.svg"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
    const auto cols = read_csv_columns(dir / "records.csv");
    REQUIRE(cols.size() == 6);
    CHECK(cols[0].first == "task_id");
    CHECK(cols[3].first == "return");
    CHECK(cols[2].second.size() == r.records.size());
    std::ifstream js(dir / "summary.json");
    const json summary = json::parse(js);
    CHECK(summary.at("checksum_before") == summary.at("checksum_after"));

    std::ofstream(dir / "bad.csv") << "a,b\n1,x\n";
    CHECK_THROWS_AS(read_csv_columns(dir / "bad.csv"), DataError);
    std::ofstream(dir / "short.csv") << "a,b\n1\n";
    CHECK_THROWS_AS(read_csv_columns(dir / "short.csv"), DataError);
    CHECK_THROWS_AS(read_csv_columns(dir / "none.csv"), DataError);
    std::filesystem::remove_all(dir);

    const std::string svg = line_chart_svg("t<1>", "x", "y", {{"a", {1, 2, 3}, {0.1, 0.5, 0.2}, {0.05, 0.1, 0.05}}});
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("<polygon") != std::string::npos);
    CHECK(svg.find("t&lt;1&gt;") != std::string::npos);
    CHECK_THROWS_AS(line_chart_svg("t", "x", "y", {{"a", {1, 2}, {1}, {}}}), ParameterError);
}

TEST_CASE("policy loading from training checkpoints") {
    rl::TrainConfig cfg;
    cfg.grid_size = 5;
    cfg.n_obstacles = 6;
    cfg.t_max = 12;
    cfg.K_min = cfg.K_max = 2;
    cfg.T_max = 0;
    cfg.model = desk_model();
    const auto res = rl::train(cfg);
    const nn::SequenceModel m = load_policy(res.checkpoint);
    CHECK(m.checksum() == nn::SequenceModel(cfg.model, derive_seed(cfg.seed, 0)).checksum());
}
