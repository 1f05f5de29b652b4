#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eppo/penalty.hpp"

namespace eppo::verify {

using json = nlohmann::json;

struct Instance {
    std::string name;
    oracle::TabularCMDP m;
    double delta = 0.0;
};

/// Every *.json CMDP fixture in dir (with a "delta" field), sorted by name.
std::vector<Instance> fixture_instances(const std::filesystem::path& dir);

/// Random instances with 1-3 states, 2 actions and horizon 1-3. Each budget
/// lies strictly between the cheapest and the unconstrained-optimal cost,
/// and instances whose optimal multiplier reaches the cap are redrawn.
std::vector<Instance> fuzzed_instances(int n, std::uint64_t seed);

struct Check {
    std::string name;
    bool passed = false;
    json detail = json::object();
    double seconds = 0.0;
};

/// Runs the multiplier iteration (at most two million steps) until its
/// terminal iterate is a certified fixed point with Jc <= delta + tol and
/// |J - J*| <= tol. Passes when every instance gets there.
Check fixed_point_suite(const std::vector<Instance>& instances, double tol = 1e-3);

/// Random (lambda, s) pairs with lambda = [lambda + eta s]_+ for every eta
/// in {1e-3, 1e-4, 1e-5} must satisfy lambda >= 0, s <= 0, lambda s = 0.
Check stationarity_suite(int n_pairs, std::uint64_t seed);

/// Exact center/edge divergences on the 9x9 grid and the two-cell closed forms.
Check divergence_suite();

/// Counts instances whose multiplier settles (std of the last 10 iterates
/// below 0.05) under the hinge iteration and the per-episode linear one.
/// Passes when the hinge iteration settles at least as often.
Check multiplier_convergence(const std::vector<Instance>& instances, const penalty::RunOptions& opt);

/// All of the above on the fixtures plus 20 fuzzed instances.
std::vector<Check> verify_theory(const std::filesystem::path& fixture_dir, std::uint64_t seed);

}  // namespace eppo::verify
