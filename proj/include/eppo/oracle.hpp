#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eppo/cmdp.hpp"
#include "eppo/common.hpp"

namespace eppo::oracle {

using json = nlohmann::json;

/// Finite-horizon CMDP with stationary dynamics, reward and cost.
/// transition is flattened [s][a][s'].
class TabularCMDP {
public:
    TabularCMDP(int n_states, int n_actions, int horizon, std::vector<double> transition,
                std::vector<double> reward, std::vector<double> cost, std::vector<double> initial);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    int horizon() const { return horizon_; }

    double p(int s, int a, int s_next) const {
        return transition_[static_cast<std::size_t>((s * n_actions_ + a) * n_states_ + s_next)];
    }
    double r(int s, int a) const { return reward_[static_cast<std::size_t>(s * n_actions_ + a)]; }
    double c(int s, int a) const { return cost_[static_cast<std::size_t>(s * n_actions_ + a)]; }
    double p0(int s) const { return initial_[static_cast<std::size_t>(s)]; }
    double max_abs_cost() const;

    json to_json() const;
    static TabularCMDP from_json(const json& j);

private:
    int n_states_;
    int n_actions_;
    int horizon_;
    std::vector<double> transition_;
    std::vector<double> reward_;
    std::vector<double> cost_;
    std::vector<double> initial_;
};

/// Time-indexed stochastic policy pi[t][s][a], flattened.
class TabularPolicy {
public:
    TabularPolicy(int horizon, int n_states, int n_actions);
    TabularPolicy(int horizon, int n_states, int n_actions, std::vector<double> probs);

    static TabularPolicy uniform(int horizon, int n_states, int n_actions);
    /// choice[t * n_states + s] is the action taken at (t, s).
    static TabularPolicy deterministic(int horizon, int n_states, int n_actions, const std::vector<int>& choice);

    int horizon() const { return horizon_; }
    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }

    double operator()(int t, int s, int a) const { return probs_[index(t, s, a)]; }
    double& operator()(int t, int s, int a) { return probs_[index(t, s, a)]; }
    const std::vector<double>& probs() const { return probs_; }

    /// Throws ParameterError unless every row is a distribution (tol 1e-9).
    void validate() const;

private:
    std::size_t index(int t, int s, int a) const {
        return static_cast<std::size_t>((t * n_states_ + s) * n_actions_ + a);
    }

    int horizon_;
    int n_states_;
    int n_actions_;
    std::vector<double> probs_;
};

struct Evaluation {
    double J = 0.0;
    double Jc = 0.0;
};

/// Exact expected return and cost by forward propagation of the state
/// distribution. Throws ParameterError on shape mismatch.
Evaluation evaluate_policy(const TabularCMDP& m, const TabularPolicy& pi);

/// Occupancy mu[t][s][a] = P(S_t = s, A_t = a), flattened.
std::vector<double> occupancy(const TabularCMDP& m, const TabularPolicy& pi);

/// Markov policy inducing a given occupancy; rows without mass are uniform.
TabularPolicy policy_from_occupancy(const TabularCMDP& m, const std::vector<double>& mu);

/// Unconstrained optimum of sum r - weight * c by backward induction.
/// Returns the optimal value and a deterministic optimal policy; ties go to
/// the lowest action index.
struct DpSolution {
    double value = 0.0;
    TabularPolicy policy{1, 1, 1};
};
DpSolution solve_penalized_dp(const TabularCMDP& m, double cost_weight);

// ---------------------------------------------------------------------------
// Linear programming

/// maximize c^T x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  x >= 0.
/// Dense row-major matrices; a row of A has x.size() entries.
struct LinearProgram {
    std::vector<double> objective;
    std::vector<std::vector<double>> a_eq;
    std::vector<double> b_eq;
    std::vector<std::vector<double>> a_le;
    std::vector<double> b_le;
};

enum class LpStatus { optimal, infeasible, unbounded };

struct LpSolution {
    LpStatus status = LpStatus::infeasible;
    double objective = 0.0;
    std::vector<double> x;
    /// Shadow prices d(objective)/d(b) for each equality then inequality row.
    std::vector<double> duals_eq;
    std::vector<double> duals_le;
    int pivots = 0;
};

/// Two-phase dense tableau simplex with Bland's rule.
LpSolution solve_lp(const LinearProgram& lp);

struct ConstrainedSolution {
    bool feasible = false;
    double J_star = 0.0;
    /// Expected cost of the optimal occupancy.
    double Jc_star = 0.0;
    std::vector<double> occupancy;
    /// Minimal optimal multiplier of the cost constraint.
    double lambda_star = 0.0;
    /// Multiplier read directly from the final simplex basis.
    double lambda_basis = 0.0;
    TabularPolicy policy{1, 1, 1};
};

/// Time-expanded occupancy-measure LP for max J s.t. Jc <= delta.
/// Infeasible problems return feasible == false.
ConstrainedSolution solve_constrained_lp(const TabularCMDP& m, double delta);

/// Lagrangian dual function max_pi [J - lambda (Jc - delta)] (exact, via DP).
double dual_function(const TabularCMDP& m, double delta, double lambda);

/// Constrained optimum without an LP: bisection for the smallest multiplier
/// whose penalized-optimal deterministic policy is feasible, then the
/// episode-level mixture of the two bracketing policies that meets the
/// budget exactly. Scales to problems far beyond the dense simplex.
struct LagrangianSolution {
    bool feasible = false;
    double lambda_star = 0.0;
    double J_star = 0.0;
    double Jc_star = 0.0;
    TabularPolicy below{1, 1, 1};
    TabularPolicy above{1, 1, 1};
    /// Probability of running `below` for a whole episode.
    double weight_below = 0.0;
    /// Markov policy with the same occupancy as the mixture.
    TabularPolicy markov{1, 1, 1};
};
LagrangianSolution solve_lagrangian(const TabularCMDP& m, double delta);

struct BruteForceResult {
    bool feasible = false;
    double J_det = 0.0;
    double Jc_det = 0.0;
    TabularPolicy best_policy{1, 1, 1};
};

/// Number of deterministic time-indexed policies, saturating at 2^62.
std::uint64_t deterministic_policy_count(const TabularCMDP& m);

/// Calls fn(choice, evaluation) for every deterministic time-indexed policy.
/// Throws SizeError when the count exceeds max_policies.
template <class Fn>
void for_each_deterministic(const TabularCMDP& m, std::uint64_t max_policies, Fn&& fn);

/// Best feasible deterministic policy. Throws SizeError when the policy
/// space exceeds one million.
BruteForceResult brute_force_optimum(const TabularCMDP& m, double delta);

/// SafeDarkRoom task as a tabular CMDP: one state per cell plus an
/// absorbing terminal state (index n_cells) entered on reaching the goal.
TabularCMDP from_task(const cmdp::TaskSpec& task);

// ---------------------------------------------------------------------------

namespace detail {
Evaluation evaluate_choice(const TabularCMDP& m, const std::vector<int>& choice, std::vector<double>& dist_buf,
                           std::vector<double>& next_buf);
}

template <class Fn>
void for_each_deterministic(const TabularCMDP& m, std::uint64_t max_policies, Fn&& fn) {
    const std::uint64_t count = deterministic_policy_count(m);
    if (count > max_policies) {
        throw SizeError("deterministic policy space has " + std::to_string(count) + " members (limit " +
                        std::to_string(max_policies) + ")");
    }
    const std::size_t digits = static_cast<std::size_t>(m.horizon() * m.n_states());
    std::vector<int> choice(digits, 0);
    std::vector<double> dist, next;
    for (std::uint64_t k = 0; k < count; ++k) {
        fn(static_cast<const std::vector<int>&>(choice), detail::evaluate_choice(m, choice, dist, next));
        for (std::size_t d = 0; d < digits; ++d) {
            if (++choice[d] < m.n_actions()) {
                break;
            }
            choice[d] = 0;
        }
    }
}

}  // namespace eppo::oracle
