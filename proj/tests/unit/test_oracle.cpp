#include <doctest.h>

#include <cmath>
#include <fstream>

#include "eppo/oracle.hpp"

using namespace eppo;
using namespace eppo::oracle;

namespace {

json load_fixture(const std::string& name) {
    std::ifstream in(std::string(EPPO_FIXTURE_DIR) + "/cmdp/" + name);
    REQUIRE(in.good());
    return json::parse(in);
}

// Backward-induction evaluation, kept separate from the library's forward pass.
Evaluation backward_eval(const TabularCMDP& m, const TabularPolicy& pi) {
    const int ns = m.n_states();
    std::vector<double> v(ns, 0.0), vc(ns, 0.0);
    for (int t = m.horizon() - 1; t >= 0; --t) {
        std::vector<double> nv(ns, 0.0), nvc(ns, 0.0);
        for (int s = 0; s < ns; ++s) {
            for (int a = 0; a < m.n_actions(); ++a) {
                double q = m.r(s, a), qc = m.c(s, a);
                for (int s2 = 0; s2 < ns; ++s2) {
                    q += m.p(s, a, s2) * v[s2];
                    qc += m.p(s, a, s2) * vc[s2];
                }
                nv[s] += pi(t, s, a) * q;
                nvc[s] += pi(t, s, a) * qc;
            }
        }
        v = nv;
        vc = nvc;
    }
    Evaluation ev;
    for (int s = 0; s < ns; ++s) {
        ev.J += m.p0(s) * v[s];
        ev.Jc += m.p0(s) * vc[s];
    }
    return ev;
}

// Best value over mixtures of deterministic policies: the upper envelope of
// the (Jc, J) point cloud read at the budget.
double hull_optimum(const TabularCMDP& m, double delta) {
    std::vector<Evaluation> pts;
    for_each_deterministic(m, 1'000'000, [&](const std::vector<int>&, const Evaluation& ev) { pts.push_back(ev); });
    double best = -1e300;
    for (const auto& a : pts) {
        if (a.Jc <= delta + 1e-12) {
            best = std::max(best, a.J);
        }
        for (const auto& b : pts) {
            if (a.Jc < delta && b.Jc > delta) {
                const double w = (delta - a.Jc) / (b.Jc - a.Jc);
                best = std::max(best, (1 - w) * a.J + w * b.J);
            }
        }
    }
    return best;
}

TabularCMDP random_cmdp(Rng& rng, int ns, int na, int h) {
    std::vector<double> p, r, c, p0(ns);
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            std::vector<double> row(ns);
            double tot = 0;
            for (auto& x : row) {
                x = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
                tot += x;
            }
            if (tot == 0) {
                row[0] = tot = 1.0;
            }
            for (auto x : row) {
                p.push_back(x / tot);
            }
            r.push_back(uniform_real(rng, -1.0, 2.0));
            c.push_back(uniform01(rng) < 0.25 ? 0.0 : uniform_real(rng, 0.0, 2.0));
        }
    }
    double tot = 0;
    for (auto& x : p0) {
        x = uniform01(rng);
        tot += x;
    }
    for (auto& x : p0) {
        x /= tot;
    }
    return TabularCMDP(ns, na, h, p, r, c, p0);
}

void check_lp_invariants(const TabularCMDP& m, double delta, const ConstrainedSolution& sol) {
    const int ns = m.n_states(), na = m.n_actions();
    auto mu = [&](int t, int s, int a) { return sol.occupancy[(t * ns + s) * na + a]; };
    for (int s = 0; s < ns; ++s) {
        double out = 0;
        for (int a = 0; a < na; ++a) {
            out += mu(0, s, a);
        }
        CHECK(std::abs(out - m.p0(s)) <= 1e-8);
    }
    for (int t = 0; t + 1 < m.horizon(); ++t) {
        for (int s2 = 0; s2 < ns; ++s2) {
            double in = 0, out = 0;
            for (int s = 0; s < ns; ++s) {
                for (int a = 0; a < na; ++a) {
                    in += mu(t, s, a) * m.p(s, a, s2);
                }
            }
            for (int a = 0; a < na; ++a) {
                out += mu(t + 1, s2, a);
            }
            CHECK(std::abs(in - out) <= 1e-8);
        }
    }
    for (double x : sol.occupancy) {
        CHECK(x >= -1e-12);
    }
    CHECK(sol.Jc_star <= delta + 1e-8);
    CHECK(std::abs(sol.lambda_star * (sol.Jc_star - delta)) <= 1e-6);
    CHECK(sol.lambda_star >= 0.0);
    // Strong duality at the reported multiplier.
    CHECK(std::abs(dual_function(m, delta, sol.lambda_star) - sol.J_star) <= 1e-8);
    // The policy recovered from the occupancy achieves the LP values.
    const auto ev = evaluate_policy(m, sol.policy);
    CHECK(std::abs(ev.J - sol.J_star) <= 1e-8);
    CHECK(std::abs(ev.Jc - sol.Jc_star) <= 1e-8);
}

}  // namespace

TEST_CASE("fixtures load and round trip") {
    for (const char* name : {"one_state_mixing.json", "two_state_chain.json", "two_state_two_action.json"}) {
        const auto j = load_fixture(name);
        const auto m = TabularCMDP::from_json(j);
        const auto back = TabularCMDP::from_json(m.to_json());
        CHECK(back.to_json() == m.to_json());
    }
    auto bad = load_fixture("two_state_chain.json");
    bad["transition"][0][0] = json::array({0.5, 0.6});
    CHECK_THROWS_AS(TabularCMDP::from_json(bad), ParameterError);
    bad.erase("reward");
    CHECK_THROWS_AS(TabularCMDP::from_json(bad), DataError);
}

TEST_CASE("evaluate_policy on trivial instances") {
    const auto chain = TabularCMDP::from_json(load_fixture("two_state_chain.json"));
    const auto advance = TabularPolicy::deterministic(2, 2, 2, {0, 0, 0, 0});
    CHECK(evaluate_policy(chain, advance).J == 1.0);
    CHECK(evaluate_policy(chain, advance).Jc == 1.0);

    const TabularCMDP zero(2, 2, 3, {1, 0, 0, 1, 0.5, 0.5, 0, 1}, {0, 0, 0, 0}, {1, 0, 0, 1}, {0.5, 0.5});
    CHECK(evaluate_policy(zero, TabularPolicy::uniform(3, 2, 2)).J == 0.0);

    CHECK_THROWS_AS(evaluate_policy(chain, TabularPolicy::uniform(3, 2, 2)), ParameterError);
    TabularPolicy broken(2, 2, 2);
    broken(0, 0, 0) = 0.9;
    CHECK_THROWS_AS(broken.validate(), ParameterError);
}

TEST_CASE("evaluate_policy matches Monte Carlo within 3 sigma") {
    const auto m = TabularCMDP::from_json(load_fixture("two_state_two_action.json"));
    TabularPolicy pi(2, 2, 2, {0.3, 0.7, 0.6, 0.4, 0.5, 0.5, 0.8, 0.2});
    pi.validate();
    const auto ev = evaluate_policy(m, pi);

    Rng rng(7);
    const int n = 1'000'000;
    double sr = 0, sr2 = 0, sc = 0, sc2 = 0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int e = 0; e < n; ++e) {
        int s = u(rng) < m.p0(0) ? 0 : 1;
        double g = 0, gc = 0;
        for (int t = 0; t < m.horizon(); ++t) {
            const int a = u(rng) < pi(t, s, 0) ? 0 : 1;
            g += m.r(s, a);
            gc += m.c(s, a);
            s = u(rng) < m.p(s, a, 0) ? 0 : 1;
        }
        sr += g;
        sr2 += g * g;
        sc += gc;
        sc2 += gc * gc;
    }
    const double mr = sr / n, mc = sc / n;
    const double se_r = std::sqrt((sr2 / n - mr * mr) / n);
    const double se_c = std::sqrt((sc2 / n - mc * mc) / n);
    CHECK(std::abs(ev.J - mr) <= 3 * se_r);
    CHECK(std::abs(ev.Jc - mc) <= 3 * se_c);
}

TEST_CASE("occupancy-derived values equal backward evaluation") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_cmdp(rng, 1 + trial % 4, 2 + trial % 3, 1 + trial % 5);
        std::vector<double> probs;
        for (int k = 0; k < m.horizon() * m.n_states(); ++k) {
            double tot = 0;
            std::vector<double> row(m.n_actions());
            for (auto& x : row) {
                x = uniform01(rng) + 1e-3;
                tot += x;
            }
            for (auto x : row) {
                probs.push_back(x / tot);
            }
        }
        const TabularPolicy pi(m.horizon(), m.n_states(), m.n_actions(), probs);
        const auto mu = occupancy(m, pi);
        double j = 0;
        for (int t = 0; t < m.horizon(); ++t) {
            for (int s = 0; s < m.n_states(); ++s) {
                for (int a = 0; a < m.n_actions(); ++a) {
                    j += mu[(t * m.n_states() + s) * m.n_actions() + a] * m.r(s, a);
                }
            }
        }
        const auto ref = backward_eval(m, pi);
        CHECK(std::abs(j - ref.J) <= 1e-10);
        CHECK(std::abs(evaluate_policy(m, pi).Jc - ref.Jc) <= 1e-10);
        const auto back = policy_from_occupancy(m, mu);
        CHECK(std::abs(evaluate_policy(m, back).J - ref.J) <= 1e-10);
    }
}

TEST_CASE("simplex solves a textbook LP") {
    // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), value 36,
    // shadow prices (0, 1.5, 1).
    LinearProgram lp;
    lp.objective = {3, 5};
    lp.a_le = {{1, 0}, {0, 2}, {3, 2}};
    lp.b_le = {4, 12, 18};
    const auto sol = solve_lp(lp);
    REQUIRE(sol.status == LpStatus::optimal);
    CHECK(sol.objective == doctest::Approx(36.0).epsilon(1e-12));
    CHECK(sol.x[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sol.x[1] == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(sol.duals_le[0] == doctest::Approx(0.0));
    CHECK(sol.duals_le[1] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(sol.duals_le[2] == doctest::Approx(1.0).epsilon(1e-12));

    LinearProgram infeasible;
    infeasible.objective = {1};
    infeasible.a_eq = {{1}};
    infeasible.b_eq = {-1};
    CHECK(solve_lp(infeasible).status == LpStatus::infeasible);

    LinearProgram unbounded;
    unbounded.objective = {1, 0};
    unbounded.a_le = {{0, 1}};
    unbounded.b_le = {1};
    CHECK(solve_lp(unbounded).status == LpStatus::unbounded);
}

TEST_CASE("1-state instance mixes at the boundary") {
    const auto j = load_fixture("one_state_mixing.json");
    const auto m = TabularCMDP::from_json(j);
    const double delta = j.at("delta").get<double>();
    const auto lp = solve_constrained_lp(m, delta);
    REQUIRE(lp.feasible);
    CHECK(lp.J_star == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(lp.lambda_star == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(lp.policy(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    check_lp_invariants(m, delta, lp);

    const auto bf = brute_force_optimum(m, delta);
    REQUIRE(bf.feasible);
    CHECK(bf.J_det == 0.0);
    CHECK(bf.J_det < lp.J_star);

    const auto lag = solve_lagrangian(m, delta);
    CHECK(lag.J_star == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(lag.lambda_star == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(lag.weight_below == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("chain: zero budget forces avoidance, half budget halves the return") {
    const auto m = TabularCMDP::from_json(load_fixture("two_state_chain.json"));
    auto lp = solve_constrained_lp(m, 0.0);
    REQUIRE(lp.feasible);
    CHECK(std::abs(lp.J_star) <= 1e-12);
    check_lp_invariants(m, 0.0, lp);

    lp = solve_constrained_lp(m, 0.5);
    CHECK(lp.J_star == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(lp.lambda_star == doctest::Approx(1.0).epsilon(1e-9));
    check_lp_invariants(m, 0.5, lp);
}

TEST_CASE("slack budget reproduces the unconstrained optimum") {
    for (const char* name : {"one_state_mixing.json", "two_state_chain.json", "two_state_two_action.json"}) {
        const auto m = TabularCMDP::from_json(load_fixture(name));
        const double delta = m.horizon() * m.max_abs_cost();
        const auto lp = solve_constrained_lp(m, delta);
        const double dp = solve_penalized_dp(m, 0.0).value;
        CHECK(lp.J_star == doctest::Approx(dp).epsilon(1e-12));
        CHECK(lp.lambda_star == 0.0);
        CHECK(brute_force_optimum(m, delta).J_det == doctest::Approx(dp).epsilon(1e-12));
    }
}

TEST_CASE("2x2 fixture: LP equals deterministic hull") {
    const auto j = load_fixture("two_state_two_action.json");
    const auto m = TabularCMDP::from_json(j);
    CHECK(deterministic_policy_count(m) == 16);
    for (double delta : {0.0, 0.3, 0.6, 1.0, 1.7, 2.5, 5.0}) {
        const auto lp = solve_constrained_lp(m, delta);
        const double hull = hull_optimum(m, delta);
        if (hull < -1e299) {
            CHECK_FALSE(lp.feasible);
            continue;
        }
        REQUIRE(lp.feasible);
        CHECK(lp.J_star == doctest::Approx(hull).epsilon(1e-10));
        check_lp_invariants(m, delta, lp);
        CHECK(solve_lagrangian(m, delta).J_star == doctest::Approx(hull).epsilon(1e-9));
    }
}

TEST_CASE("infeasible budgets are reported, not thrown") {
    const TabularCMDP m(1, 2, 2, {1, 1}, {1, 0}, {1, 0.5}, {1});
    CHECK_FALSE(solve_constrained_lp(m, 0.5).feasible);
    CHECK_FALSE(brute_force_optimum(m, 0.5).feasible);
    CHECK_FALSE(solve_lagrangian(m, 0.5).feasible);
    CHECK(solve_constrained_lp(m, 1.0).feasible);
    CHECK_THROWS_AS(solve_constrained_lp(m, -1.0), ParameterError);
}

TEST_CASE("zero-cost instance: every policy is feasible") {
    const TabularCMDP m(2, 2, 2, {0.5, 0.5, 1, 0, 0, 1, 0.2, 0.8}, {1, 0, 0, 2}, {0, 0, 0, 0}, {1, 0});
    const auto bf = brute_force_optimum(m, 0.0);
    CHECK(bf.feasible);
    CHECK(bf.J_det == doctest::Approx(solve_penalized_dp(m, 0.0).value).epsilon(1e-12));
    int feasible = 0;
    for_each_deterministic(m, 100, [&](const std::vector<int>&, const Evaluation& ev) { feasible += ev.Jc <= 0.0; });
    CHECK(feasible == 16);
}

TEST_CASE("brute force guard") {
    Rng rng(3);
    const auto m = random_cmdp(rng, 3, 5, 3);  // 5^9 ~ 1.95e6 policies
    CHECK_THROWS_AS(brute_force_optimum(m, 1.0), SizeError);
    const auto ok = random_cmdp(rng, 2, 5, 4);  // 5^8 = 390625
    CHECK_NOTHROW(brute_force_optimum(ok, 1.0));
}

TEST_CASE("fuzz: LP dominates the deterministic optimum and matches the hull") {
    Rng rng(2025);
    for (int trial = 0; trial < 100; ++trial) {
        const int ns = 1 + trial % 3;
        const int na = 2 + trial % 2;
        const int h = 1 + (trial / 3) % 3;
        const auto m = random_cmdp(rng, ns, na, h);
        const double delta = uniform_real(rng, 0.0, h * 1.5);
        const auto lp = solve_constrained_lp(m, delta);
        const auto bf = brute_force_optimum(m, delta);
        CHECK(lp.feasible == bf.feasible);
        if (!lp.feasible) {
            continue;
        }
        CHECK(lp.J_star >= bf.J_det - 1e-9);
        CHECK(lp.J_star == doctest::Approx(hull_optimum(m, delta)).epsilon(1e-9));
        check_lp_invariants(m, delta, lp);
        const auto lag = solve_lagrangian(m, delta);
        CHECK(lag.J_star == doctest::Approx(lp.J_star).epsilon(1e-8));
        CHECK(lag.lambda_star == doctest::Approx(lp.lambda_star).epsilon(1e-6));
        const auto mk = evaluate_policy(m, lag.markov);
        CHECK(mk.J == doctest::Approx(lag.J_star).epsilon(1e-9));
    }
}

TEST_CASE("grid task as a tabular CMDP") {
    // 5x5, start (2,2); goal two steps up, a wall of obstacles on the short way.
    const cmdp::TaskSpec task(5, {0, 2}, {{1, 1}, {1, 2}, {1, 3}}, 8);
    const auto m = from_task(task);
    CHECK(m.n_states() == 26);
    // Shortest free path: left, up, up, right, right... costs nothing but
    // takes 4 steps; a straight dash through (1,2) costs 1.
    const auto free = solve_constrained_lp(m, 0.0);
    REQUIRE(free.feasible);
    CHECK(free.J_star == doctest::Approx(1.0).epsilon(1e-12));
    const auto tight = from_task(cmdp::TaskSpec(5, {0, 2}, {{1, 1}, {1, 2}, {1, 3}}, 3));
    CHECK(solve_constrained_lp(tight, 0.0).J_star == doctest::Approx(0.0).epsilon(1e-12));
    const auto half = solve_constrained_lp(tight, 0.5);
    CHECK(half.J_star == doctest::Approx(0.5).epsilon(1e-10));
    check_lp_invariants(tight, 0.5, half);
    CHECK(solve_lagrangian(tight, 0.5).J_star == doctest::Approx(0.5).epsilon(1e-9));

    // The tabular model reproduces environment rollouts of the same policy.
    cmdp::SafeDarkRoom env(task);
    env.reset();
    double ret = 0, cost = 0;
    for (auto a : {cmdp::Action::up, cmdp::Action::up}) {
        const auto r = env.step(a);
        ret += r.reward;
        cost += r.cost;
    }
    std::vector<int> choice(8 * 26, static_cast<int>(cmdp::Action::up));
    const auto ev = evaluate_policy(m, TabularPolicy::deterministic(8, 26, 5, choice));
    CHECK(ev.J == ret);
    CHECK(ev.Jc == cost);
}
