#include <doctest.h>

#include <cmath>

#include "eppo/taskgen.hpp"

using namespace eppo;
using namespace eppo::taskgen;

namespace {

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s;
}

// Exact 9x9 values from a 50-digit summation done outside the library.
struct FrozenDivergence {
    double alpha;
    double tv;
    double kl;
};

constexpr FrozenDivergence kFrozen9x9[] = {
    {0.25, 0.95340217829618229316, 5.3414158471376384031},
    {0.5, 0.99919564827460837614, 13.614270028953723317},
    {1.0, 0.99999974571343290613, 30.247277005236354057},
    {2.0, 0.99999999999997819478, 63.186049304257501407},
    {5.0, 1.0, 161.09358804606952269},
    {10.0, 1.0, 321.38248110501859388},
};

}  // namespace

TEST_CASE("distributions are normalized") {
    for (int gs : {2, 3, 5, 8, 9}) {
        for (double a : {1e-9, 0.5, 1.0, 10.0, 50.0}) {
            for (auto o : {Orientation::center, Orientation::edge}) {
                const auto d = build_distribution(gs, a, o);
                CHECK(std::abs(sum(d.probs) - 1.0) <= 1e-12);
                for (double p : d.probs) {
                    CHECK(p >= 0.0);
                }
            }
        }
    }
}

TEST_CASE("small alpha approaches uniform") {
    const auto d = build_distribution(5, 1e-9, Orientation::center);
    for (double p : d.probs) {
        CHECK(p == doctest::Approx(1.0 / 25).epsilon(1e-7));
    }
}

TEST_CASE("center cell is the unique maximum of the center distribution") {
    const auto d = build_distribution(9, 0.5, Orientation::center);
    const double pc = d.prob({4, 4});
    for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 9; ++j) {
            if (i != 4 || j != 4) {
                CHECK(d.prob({i, j}) < pc);
            }
        }
    }
}

TEST_CASE("3x3 center-to-corner ratio") {
    const auto d = build_distribution(3, 1.0, Orientation::center);
    CHECK(d.prob({1, 1}) / d.prob({0, 0}) == doctest::Approx(std::exp(2.0)).epsilon(1e-14));
}

TEST_CASE("dihedral symmetry") {
    for (int gs : {4, 5, 9}) {
        const auto d = build_distribution(gs, 0.7, Orientation::edge);
        for (int i = 0; i < gs; ++i) {
            for (int j = 0; j < gs; ++j) {
                const double p = d.prob({i, j});
                const int r = gs - 1 - i;
                const int c = gs - 1 - j;
                CHECK(d.prob({j, i}) == doctest::Approx(p).epsilon(1e-14));
                CHECK(d.prob({r, j}) == doctest::Approx(p).epsilon(1e-14));
                CHECK(d.prob({i, c}) == doctest::Approx(p).epsilon(1e-14));
                CHECK(d.prob({c, r}) == doctest::Approx(p).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("parameter errors") {
    CHECK_THROWS_AS(build_distribution(5, 0.0, Orientation::center), ParameterError);
    CHECK_THROWS_AS(build_distribution(5, -1.0, Orientation::edge), ParameterError);
    CHECK_THROWS_AS(build_distribution(1, 1.0, Orientation::edge), ParameterError);
    const auto a = build_distribution(5, 1.0, Orientation::center);
    const auto b = build_distribution(6, 1.0, Orientation::center);
    CHECK_THROWS_AS(tv_distance(a, b), ParameterError);
    CHECK_THROWS_AS(kl_divergence(a, b), ParameterError);
    Rng rng(1);
    CHECK_THROWS_AS(sample_task(a, 24, 10, rng), ParameterError);
}

TEST_CASE("two-cell closed forms") {
    const double a = std::log(3.0);
    const auto p = build_distribution_from_d2({0.0, 1.0}, a, Orientation::center);
    const auto q = build_distribution_from_d2({0.0, 1.0}, a, Orientation::edge);
    CHECK(std::abs(p.probs[0] - 0.75) <= 1e-15);
    CHECK(std::abs(q.probs[0] - 0.25) <= 1e-15);
    CHECK(std::abs(tv_distance(p, q) - 0.5) <= 1e-12);
    CHECK(std::abs(kl_divergence(p, q) - 0.5 * std::log(3.0)) <= 1e-12);
    CHECK(tv_distance(p, p) == 0.0);
    CHECK(kl_divergence(q, q) == 0.0);
}

TEST_CASE("9x9 divergences match the frozen exact values") {
    double prev_tv = 0.0;
    double prev_kl = 0.0;
    for (const auto& f : kFrozen9x9) {
        const auto p = build_distribution(9, f.alpha, Orientation::center);
        const auto q = build_distribution(9, f.alpha, Orientation::edge);
        const double tv = tv_distance(p, q);
        const double kl = kl_divergence(p, q);
        CHECK(tv == doctest::Approx(f.tv).epsilon(1e-12));
        CHECK(kl == doctest::Approx(f.kl).epsilon(1e-10));
        CHECK(tv >= prev_tv);
        CHECK(kl >= prev_kl);
        prev_tv = tv;
        prev_kl = kl;
    }
    CHECK(prev_tv >= 0.999);
    CHECK(prev_kl >= 10.0);
}

TEST_CASE("KL strictly increases over a coarse alpha grid") {
    double prev = -1.0;
    for (double a : {0.5, 1.0, 2.0, 5.0}) {
        const double kl = kl_divergence(build_distribution(9, a, Orientation::center),
                                        build_distribution(9, a, Orientation::edge));
        CHECK(kl > prev);
        prev = kl;
    }
}

TEST_CASE("sample_task obeys the construction contract") {
    const auto d = build_distribution(9, 0.5, Orientation::center);
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto task = sample_task(d, 25, 30, rng);
        CHECK(task.obstacles().size() == 25);
        CHECK(task.start() == cmdp::GridPos{4, 4});
        CHECK_FALSE(task.is_obstacle(task.goal()));
        CHECK_FALSE(task.goal() == task.start());
    }
    Rng a(99);
    Rng b(99);
    CHECK(sample_task(d, 25, 30, a) == sample_task(d, 25, 30, b));
    CHECK(sample_task(d, 0, 30, a).obstacles().empty());
}

TEST_CASE("empirical draws match cell probabilities within 3 standard errors") {
    for (auto o : {Orientation::center, Orientation::edge}) {
        const auto d = build_distribution(5, 0.5, o);
        Rng rng(2024);
        const int n = 100000;
        std::vector<int> counts(d.n_cells(), 0);
        const std::vector<bool> none(d.n_cells(), false);
        for (int i = 0; i < n; ++i) {
            ++counts[static_cast<std::size_t>(draw_cell(d, none, rng))];
        }
        for (std::size_t c = 0; c < d.n_cells(); ++c) {
            const double p = d.probs[c];
            const double se = std::sqrt(p * (1 - p) / n);
            CHECK(std::abs(counts[c] / double(n) - p) <= 3 * se + 1e-12);
        }
    }
}

TEST_CASE("suite JSON carries the certificate") {
    const auto suite = generate_suite(9, 10.0, Orientation::edge, 4, 25, 30, 5);
    CHECK(suite.certificate.tv >= 0.999);
    CHECK(suite.certificate.kl >= 10.0);
    const auto back = TaskSuite::from_json(suite.to_json());
    CHECK(back.tasks == suite.tasks);
    CHECK(back.certificate.tv == suite.certificate.tv);
    CHECK(default_obstacle_count(9) == 25);
    CHECK(distribution_csv(build_distribution(3, 1.0, Orientation::edge)).find('\n') != std::string::npos);
}
