#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "eppo/verify.hpp"

using namespace eppo;
using namespace eppo::verify;

namespace {
const std::string kFixtures = std::string(EPPO_FIXTURE_DIR) + "/cmdp";
}

TEST_CASE("fixtures load in name order") {
    const auto f = fixture_instances(kFixtures);
    REQUIRE(f.size() == 3);
    CHECK(f[0].name == "one_state_mixing");
    CHECK(f[0].delta == 1.0);
    CHECK(f[2].name == "two_state_two_action");

    const auto dir = std::filesystem::temp_directory_path() / "eppo_test_verify";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "bad.json") << "{\"n_states\": 1}";
    CHECK_THROWS_AS(fixture_instances(dir), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("fuzzed instances") {
    const auto a = fuzzed_instances(20, 3);
    const auto b = fuzzed_instances(20, 3);
    REQUIRE(a.size() == 20);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].m.to_json() == b[i].m.to_json());
        CHECK(a[i].delta == b[i].delta);
        CHECK(a[i].m.n_states() <= 3);
        CHECK(a[i].m.n_actions() == 2);
        CHECK(a[i].m.horizon() <= 3);
        const auto lp = oracle::solve_constrained_lp(a[i].m, a[i].delta);
        CHECK(lp.feasible);
        CHECK(lp.lambda_star < penalty::kLambdaCap);
    }
    CHECK(fuzzed_instances(2, 4)[0].m.to_json() != a[0].m.to_json());
}

TEST_CASE("property suites pass") {
    const auto s = stationarity_suite(1000, 7);
    CHECK(s.passed);
    CHECK(s.detail.at("pairs") == 1000);
    CHECK(s.detail.at("violations") == 0);

    const auto d = divergence_suite();
    CHECK(d.passed);
    CHECK(d.detail.at("grid9").size() == 6);

    const auto f = fixed_point_suite(fixture_instances(kFixtures));
    CHECK(f.passed);
    CHECK(f.detail.size() == 3);
}

TEST_CASE("hinge multiplier settles where the linear one chatters") {
    penalty::RunOptions opt;
    opt.K = 4;
    opt.n_iters = 2000;
    auto inst = fixture_instances(kFixtures);
    inst.erase(inst.begin() + 1, inst.end());
    const auto c = multiplier_convergence(inst, opt);
    CHECK(c.passed);
    const auto& row = c.detail.at("instances")[0];
    CHECK(row.at("hinge_std").get<double>() < 1e-9);
    CHECK(row.at("linear_std").get<double>() > 1e-3);
}

TEST_CASE("full theory run") {
    const auto checks = verify_theory(kFixtures, 7);
    REQUIRE(checks.size() == 4);
    for (const auto& c : checks) {
        INFO(c.name << " " << c.detail.dump());
        CHECK(c.passed);
    }
    CHECK(checks[0].detail.size() == 23);
}
