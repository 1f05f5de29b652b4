#include "eppo/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "eppo/taskgen.hpp"

namespace eppo::verify {

namespace {

using oracle::TabularCMDP;

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<double> simplex_row(Rng& rng, int n) {
    std::vector<double> row(static_cast<std::size_t>(n));
    double tot = 0.0;
    for (auto& x : row) {
        x = uniform_real(rng, 0.01, 1.0);
        tot += x;
    }
    for (auto& x : row) {
        x /= tot;
    }
    return row;
}

TabularCMDP random_cmdp(Rng& rng, int ns, int na, int h) {
    std::vector<double> p, r, c;
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            const auto row = simplex_row(rng, ns);
            p.insert(p.end(), row.begin(), row.end());
            r.push_back(uniform01(rng));
            c.push_back(uniform01(rng));
        }
    }
    return TabularCMDP(ns, na, h, p, r, c, simplex_row(rng, ns));
}

double cheapest_cost(const TabularCMDP& m) {
    auto j = m.to_json();
    for (auto& row : j["reward"]) {
        for (auto& x : row) {
            x = 0.0;
        }
    }
    return -oracle::solve_penalized_dp(TabularCMDP::from_json(j), 1.0).value;
}

double tail_std(const penalty::Trajectory& t, std::size_t n) {
    if (t.iterates.size() < n) {
        return INFINITY;
    }
    double mean = 0.0;
    for (std::size_t i = t.iterates.size() - n; i < t.iterates.size(); ++i) {
        mean += t.iterates[i].lambda / static_cast<double>(n);
    }
    double var = 0.0;
    for (std::size_t i = t.iterates.size() - n; i < t.iterates.size(); ++i) {
        var += std::pow(t.iterates[i].lambda - mean, 2) / static_cast<double>(n - 1);
    }
    return std::sqrt(var);
}

}  // namespace

std::vector<Instance> fixture_instances(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".json") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Instance> out;
    for (const auto& f : files) {
        std::ifstream in(f);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw DataError(f.string() + ": " + e.what());
        }
        if (!j.contains("delta")) {
            throw DataError(f.string() + ": missing delta");
        }
        out.push_back({f.stem().string(), TabularCMDP::from_json(j), j.at("delta").get<double>()});
    }
    return out;
}

std::vector<Instance> fuzzed_instances(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Instance> out;
    for (int i = 0; i < n; ++i) {
        const int ns = uniform_int(rng, 1, 3);
        const int h = uniform_int(rng, 1, 3);
        auto m = random_cmdp(rng, ns, 2, h);
        const double lo = cheapest_cost(m);
        const double hi = oracle::evaluate_policy(m, oracle::solve_penalized_dp(m, 0.0).policy).Jc;
        const double delta = lo + uniform_real(rng, 0.1, 0.9) * (hi - lo);
        // The multiplier lives in [0, cap]; no fixed point exists beyond it.
        if (oracle::solve_constrained_lp(m, delta).lambda_star >= penalty::kLambdaCap) {
            --i;
            continue;
        }
        out.push_back({"fuzz_" + std::to_string(i), std::move(m), delta});
    }
    return out;
}

Check fixed_point_suite(const std::vector<Instance>& instances, double tol) {
    const Timer timer;
    Check chk{"fixed_point", true, json::array(), 0.0};
    // Multiplier growth is eta * gap per step, so a large lambda* behind a
    // small gap needs many steps. The iteration resumes from its last
    // multiplier in chunks until certified or out of budget.
    constexpr int kChunk = 100'000;
    constexpr int kBudget = 2'000'000;
    penalty::RunOptions opt;
    opt.n_iters = kChunk;
    opt.keep_policies = false;
    for (const auto& inst : instances) {
        const auto lp = oracle::solve_constrained_lp(inst.m, inst.delta);
        opt.lambda0 = 0.0;
        int iters = 0;
        bool ok = false;
        penalty::FixedPointCertificate cert;
        while (!ok && iters < kBudget) {
            const auto traj = penalty::eppo_tabular(inst.m, inst.delta, opt);
            iters += static_cast<int>(traj.iterates.size());
            cert = penalty::is_fixed_point(inst.m, traj.final_policy, traj.final_lambda, inst.delta, tol);
            ok = lp.feasible && cert.Jc <= inst.delta + tol && std::abs(cert.J - lp.J_star) <= tol && cert.passed();
            opt.lambda0 = traj.final_lambda;
            if (traj.inner_failed) {
                break;
            }
        }
        chk.passed = chk.passed && ok;
        chk.detail.push_back({{"instance", inst.name},
                              {"passed", ok},
                              {"iterations", iters},
                              {"lambda_star", lp.lambda_star},
                              {"certificate", cert.to_json()}});
    }
    chk.seconds = timer.seconds();
    return chk;
}

Check stationarity_suite(int n_pairs, std::uint64_t seed) {
    const Timer timer;
    Rng rng(seed);
    int held = 0;
    int drawn = 0;
    int violations = 0;
    while (held < n_pairs) {
        double l = 0.0;
        double s = 0.0;
        switch (drawn++ % 4) {
            case 0: l = uniform_real(rng, 0.0, 10.0); break;
            case 1: s = -uniform_real(rng, 0.0, 10.0); break;
            case 2: break;
            default:
                l = uniform_real(rng, -5.0, 5.0);
                s = uniform_real(rng, -5.0, 5.0);
        }
        bool premise = true;
        for (double eta : {1e-3, 1e-4, 1e-5}) {
            premise = premise && l == penalty::hinge(l + eta * s);
        }
        if (!premise) {
            continue;
        }
        ++held;
        violations += !(l >= 0.0 && s <= 1e-9 && std::abs(l * s) <= 1e-9);
    }
    return {"stationarity", violations == 0,
            {{"pairs", held}, {"drawn", drawn}, {"violations", violations}}, timer.seconds()};
}

Check divergence_suite() {
    const Timer timer;
    Check chk{"divergence", true, json::object(), 0.0};
    double prev_tv = 0.0;
    double prev_kl = 0.0;
    json rows = json::array();
    for (double a : {0.25, 0.5, 1.0, 2.0, 5.0, 10.0}) {
        const auto p = taskgen::build_distribution(9, a, taskgen::Orientation::center);
        const auto q = taskgen::build_distribution(9, a, taskgen::Orientation::edge);
        const double tv = taskgen::tv_distance(p, q);
        const double kl = taskgen::kl_divergence(p, q);
        chk.passed = chk.passed && tv >= prev_tv && kl >= prev_kl;
        prev_tv = tv;
        prev_kl = kl;
        rows.push_back({{"alpha", a}, {"tv", tv}, {"kl", kl}});
    }
    chk.passed = chk.passed && prev_tv >= 0.999 && prev_kl >= 10.0;
    const double a = std::log(3.0);
    const auto p = taskgen::build_distribution_from_d2({0.0, 1.0}, a, taskgen::Orientation::center);
    const auto q = taskgen::build_distribution_from_d2({0.0, 1.0}, a, taskgen::Orientation::edge);
    const double tv_err = std::abs(taskgen::tv_distance(p, q) - 0.5);
    const double kl_err = std::abs(taskgen::kl_divergence(p, q) - 0.5 * std::log(3.0));
    chk.passed = chk.passed && tv_err <= 1e-12 && kl_err <= 1e-12;
    chk.detail = {{"grid9", rows}, {"two_cell_tv_error", tv_err}, {"two_cell_kl_error", kl_err}};
    chk.seconds = timer.seconds();
    return chk;
}

Check multiplier_convergence(const std::vector<Instance>& instances, const penalty::RunOptions& opt) {
    const Timer timer;
    int hinge = 0;
    int linear = 0;
    json rows = json::array();
    for (const auto& inst : instances) {
        const double a = tail_std(penalty::eppo_tabular(inst.m, inst.delta, opt), 10);
        const double b = tail_std(penalty::naive_primal_dual(inst.m, inst.delta, opt), 10);
        hinge += a < 0.05;
        linear += b < 0.05;
        rows.push_back({{"instance", inst.name}, {"hinge_std", a}, {"linear_std", b}});
    }
    return {"multiplier_convergence", hinge >= linear,
            {{"hinge_converged", hinge}, {"linear_converged", linear}, {"instances", rows}}, timer.seconds()};
}

std::vector<Check> verify_theory(const std::filesystem::path& fixture_dir, std::uint64_t seed) {
    auto instances = fixture_instances(fixture_dir);
    for (auto& f : fuzzed_instances(20, seed)) {
        instances.push_back(std::move(f));
    }
    penalty::RunOptions conv;
    conv.K = 4;
    conv.n_iters = 2000;
    conv.keep_policies = false;
    return {fixed_point_suite(instances), stationarity_suite(1000, seed), divergence_suite(),
            multiplier_convergence(instances, conv)};
}

}  // namespace eppo::verify
