#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eppo/oracle.hpp"

namespace eppo::penalty {

using oracle::Evaluation;
using oracle::json;
using oracle::TabularCMDP;
using oracle::TabularPolicy;

inline constexpr double kLambdaCap = 100.0;
inline constexpr double kDefaultEta = 0.05;

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

/// Jc(pi) - delta, exact.
double constraint_gap(const TabularCMDP& m, const TabularPolicy& pi, double delta);

/// K * J - lambda * K * [Jc - delta]_+ for K episodes of one shared CMDP.
/// Throws ParameterError when lambda < 0 or K < 1.
double surrogate_objective(const TabularCMDP& m, const TabularPolicy& pi, double lambda, double delta, int K);

/// Same quantity from precomputed values.
inline double surrogate_value(const Evaluation& ev, double lambda, double delta, int K) {
    return K * ev.J - lambda * K * hinge(ev.Jc - delta);
}

/// min(cap, [lambda + eta * max_gap]_+). Throws ParameterError when
/// lambda < 0 or eta <= 0.
double multiplier_update(double lambda, double eta, double max_gap, double cap = kLambdaCap);

/// Upper convex hull of the (Jc, J) points of every deterministic
/// time-indexed policy. Mixtures of deterministic policies reach every point
/// under the hull, so any objective nondecreasing in J and concave in
/// (Jc, J) is maximized at a hull vertex or where the hull crosses a budget.
class PolicyCloud {
public:
    struct Vertex {
        double J;
        double Jc;
        std::uint64_t index;
    };

    /// Throws SizeError when the policy count exceeds max_policies.
    static PolicyCloud enumerate(const TabularCMDP& m, std::uint64_t max_policies);

    std::uint64_t count() const { return count_; }
    const std::vector<Vertex>& hull() const { return hull_; }

    /// Deterministic policy number `index` in enumeration order.
    TabularPolicy policy(std::uint64_t index) const;

    /// A hull point: a vertex (weight 1 on `a`) or the mixture
    /// weight * a + (1 - weight) * b.
    struct Point {
        double J = 0.0;
        double Jc = 0.0;
        std::size_t a = 0;
        std::size_t b = 0;
        double weight = 1.0;
    };
    /// Hull points worth considering for a budget: every vertex plus the
    /// crossing of the hull with Jc = delta, when it exists.
    std::vector<Point> candidates(double delta) const;
    /// Markov policy with the occupancy of a hull point.
    TabularPolicy realize(const Point& p) const;

private:
    std::shared_ptr<const TabularCMDP> m_;
    std::uint64_t count_ = 0;
    std::vector<Vertex> hull_;
};

enum class InnerMethod { automatic, exact_search, gradient_ascent };

struct GradientOptions {
    int steps = 500;
    double step_size = 0.1;
    int restarts = 5;
    std::uint64_t seed = 0;
};

struct InnerResult {
    TabularPolicy policy{1, 1, 1};
    Evaluation eval;
    /// Per-episode objective value (the surrogate divided by K).
    double value = 0.0;
    bool converged = true;
};

/// argmax over policies of J - lambda [Jc - delta]_+ by hull search.
InnerResult exact_argmax(const PolicyCloud& cloud, const TabularCMDP& m, double lambda, double delta);

/// Same objective by softmax-parameterized exact-gradient ascent.
/// When `linear` is set the penalty is lambda * (Jc - delta) instead.
InnerResult gradient_argmax(const TabularCMDP& m, double lambda, double delta, bool linear,
                            const GradientOptions& opt);

struct Iterate {
    int iter = 0;
    double J = 0.0;
    double Jc = 0.0;
    /// Multiplier after the update (max over components for the naive solver).
    double lambda = 0.0;
    double L_sigma = 0.0;
    bool inner_converged = true;
};

struct RunOptions {
    double eta = kDefaultEta;
    int K = 1;
    int n_iters = 500;
    InnerMethod inner = InnerMethod::automatic;
    double lambda0 = 0.0;
    double lambda_cap = kLambdaCap;
    std::uint64_t exhaustive_limit = 10'000;
    GradientOptions gradient;
    bool keep_policies = true;
};

struct Trajectory {
    std::vector<Iterate> iterates;
    /// pi_t after each iteration when keep_policies is set.
    std::vector<TabularPolicy> policies;
    TabularPolicy final_policy{1, 1, 1};
    double final_lambda = 0.0;
    /// Per-episode multipliers (naive solver only).
    std::vector<double> lambda_vec;
    bool inner_failed = false;
};

/// pi_{t+1} in argmax L_Sigma(., lambda_t); lambda_{t+1} = [lambda_t + eta max_k g_k]_+.
Trajectory eppo_tabular(const TabularCMDP& m, double delta, const RunOptions& opt);

/// K independent multipliers against the linear Lagrangian.
Trajectory naive_primal_dual(const TabularCMDP& m, double delta, const RunOptions& opt);

/// CSV with header iter,J,Jc,lambda,L_sigma.
std::string iterates_csv(const Trajectory& traj);

struct FixedPointCertificate {
    bool lemma1 = false;
    /// nullopt when the policy space is too large to search.
    std::optional<bool> argmax;
    bool primal_optimal = false;
    double max_gap = 0.0;
    double lambda_gap = 0.0;
    double argmax_improvement = 0.0;
    double J = 0.0;
    double J_star = 0.0;
    double Jc = 0.0;

    bool passed() const { return lemma1 && argmax.value_or(false) && primal_optimal; }
    json to_json() const;
};

/// Checks (a) projection stationarity, (b) argmax membership by exhaustive
/// search (up to one million deterministic policies), (c) feasibility and
/// optimality against the exact constrained optimum.
FixedPointCertificate is_fixed_point(const TabularCMDP& m, const TabularPolicy& pi, double lambda, double delta,
                                     double tol);

}  // namespace eppo::penalty
