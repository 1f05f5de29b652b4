#include "eppo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eppo::oracle {

namespace {

constexpr double kProbTol = 1e-9;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void check_distribution(const double* p, int n, const std::string& what) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!(p[i] >= 0.0) || !std::isfinite(p[i])) {
            throw ParameterError(what + " has a negative or non-finite entry");
        }
        s += p[i];
    }
    if (std::abs(s - 1.0) > kProbTol) {
        throw ParameterError(what + " does not sum to 1");
    }
}

void check_shapes(const TabularCMDP& m, const TabularPolicy& pi) {
    if (pi.horizon() != m.horizon() || pi.n_states() != m.n_states() || pi.n_actions() != m.n_actions()) {
        throw ParameterError("policy shape does not match the CMDP");
    }
}

// Flattened (t, s, a) index into an occupancy vector.
std::size_t occ_index(const TabularCMDP& m, int t, int s, int a) {
    return sz((t * m.n_states() + s) * m.n_actions() + a);
}

}  // namespace

TabularCMDP::TabularCMDP(int n_states, int n_actions, int horizon, std::vector<double> transition,
                         std::vector<double> reward, std::vector<double> cost, std::vector<double> initial)
    : n_states_(n_states),
      n_actions_(n_actions),
      horizon_(horizon),
      transition_(std::move(transition)),
      reward_(std::move(reward)),
      cost_(std::move(cost)),
      initial_(std::move(initial)) {
    if (n_states < 1 || n_actions < 1 || horizon < 1) {
        throw ParameterError("TabularCMDP needs at least one state, action and step");
    }
    const std::size_t sa = sz(n_states * n_actions);
    if (transition_.size() != sa * sz(n_states) || reward_.size() != sa || cost_.size() != sa ||
        initial_.size() != sz(n_states)) {
        throw ParameterError("TabularCMDP tensor shapes are inconsistent");
    }
    for (std::size_t k = 0; k < sa; ++k) {
        check_distribution(&transition_[k * sz(n_states)], n_states, "transition row");
        if (!std::isfinite(reward_[k]) || !std::isfinite(cost_[k])) {
            throw ParameterError("reward and cost must be finite");
        }
    }
    check_distribution(initial_.data(), n_states, "initial distribution");
}

double TabularCMDP::max_abs_cost() const {
    double m = 0.0;
    for (double c : cost_) {
        m = std::max(m, std::abs(c));
    }
    return m;
}

json TabularCMDP::to_json() const {
    json p = json::array();
    json r = json::array();
    json c = json::array();
    for (int s = 0; s < n_states_; ++s) {
        json ps = json::array();
        json rs = json::array();
        json cs = json::array();
        for (int a = 0; a < n_actions_; ++a) {
            json row = json::array();
            for (int s2 = 0; s2 < n_states_; ++s2) {
                row.push_back(this->p(s, a, s2));
            }
            ps.push_back(row);
            rs.push_back(this->r(s, a));
            cs.push_back(this->c(s, a));
        }
        p.push_back(ps);
        r.push_back(rs);
        c.push_back(cs);
    }
    return {{"n_states", n_states_}, {"n_actions", n_actions_}, {"horizon", horizon_}, {"transition", p},
            {"reward", r},           {"cost", c},               {"initial", initial_}};
}

TabularCMDP TabularCMDP::from_json(const json& j) {
    try {
        const int ns = j.at("n_states").get<int>();
        const int na = j.at("n_actions").get<int>();
        const int h = j.at("horizon").get<int>();
        std::vector<double> p;
        std::vector<double> r;
        std::vector<double> c;
        const auto& jp = j.at("transition");
        const auto& jr = j.at("reward");
        const auto& jc = j.at("cost");
        if (jp.size() != sz(ns) || jr.size() != sz(ns) || jc.size() != sz(ns)) {
            throw ParameterError("fixture tensors do not match n_states");
        }
        for (int s = 0; s < ns; ++s) {
            if (jp[sz(s)].size() != sz(na) || jr[sz(s)].size() != sz(na) || jc[sz(s)].size() != sz(na)) {
                throw ParameterError("fixture tensors do not match n_actions");
            }
            for (int a = 0; a < na; ++a) {
                const auto row = jp[sz(s)][sz(a)].get<std::vector<double>>();
                if (row.size() != sz(ns)) {
                    throw ParameterError("fixture transition row has the wrong length");
                }
                p.insert(p.end(), row.begin(), row.end());
                r.push_back(jr[sz(s)][sz(a)].get<double>());
                c.push_back(jc[sz(s)][sz(a)].get<double>());
            }
        }
        return TabularCMDP(ns, na, h, std::move(p), std::move(r), std::move(c),
                           j.at("initial").get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed CMDP fixture: ") + e.what());
    }
}

TabularPolicy::TabularPolicy(int horizon, int n_states, int n_actions)
    : TabularPolicy(horizon, n_states, n_actions,
                    std::vector<double>(sz(horizon * n_states * n_actions), 1.0 / std::max(n_actions, 1))) {}

TabularPolicy::TabularPolicy(int horizon, int n_states, int n_actions, std::vector<double> probs)
    : horizon_(horizon), n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)) {
    if (horizon < 1 || n_states < 1 || n_actions < 1) {
        throw ParameterError("TabularPolicy dimensions must be positive");
    }
    if (probs_.size() != sz(horizon * n_states * n_actions)) {
        throw ParameterError("TabularPolicy probability table has the wrong size");
    }
}

TabularPolicy TabularPolicy::uniform(int horizon, int n_states, int n_actions) {
    return TabularPolicy(horizon, n_states, n_actions);
}

TabularPolicy TabularPolicy::deterministic(int horizon, int n_states, int n_actions, const std::vector<int>& choice) {
    if (choice.size() != sz(horizon * n_states)) {
        throw ParameterError("deterministic choice table has the wrong size");
    }
    TabularPolicy pi(horizon, n_states, n_actions, std::vector<double>(sz(horizon * n_states * n_actions), 0.0));
    for (int t = 0; t < horizon; ++t) {
        for (int s = 0; s < n_states; ++s) {
            const int a = choice[sz(t * n_states + s)];
            if (a < 0 || a >= n_actions) {
                throw ParameterError("deterministic choice out of range");
            }
            pi(t, s, a) = 1.0;
        }
    }
    return pi;
}

void TabularPolicy::validate() const {
    for (int t = 0; t < horizon_; ++t) {
        for (int s = 0; s < n_states_; ++s) {
            check_distribution(&probs_[index(t, s, 0)], n_actions_, "policy row");
        }
    }
}

std::vector<double> occupancy(const TabularCMDP& m, const TabularPolicy& pi) {
    check_shapes(m, pi);
    const int ns = m.n_states();
    const int na = m.n_actions();
    std::vector<double> mu(sz(m.horizon() * ns * na), 0.0);
    std::vector<double> dist(sz(ns));
    for (int s = 0; s < ns; ++s) {
        dist[sz(s)] = m.p0(s);
    }
    std::vector<double> next(sz(ns));
    for (int t = 0; t < m.horizon(); ++t) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int s = 0; s < ns; ++s) {
            if (dist[sz(s)] == 0.0) {
                continue;
            }
            for (int a = 0; a < na; ++a) {
                const double w = dist[sz(s)] * pi(t, s, a);
                mu[occ_index(m, t, s, a)] = w;
                if (w == 0.0) {
                    continue;
                }
                for (int s2 = 0; s2 < ns; ++s2) {
                    next[sz(s2)] += w * m.p(s, a, s2);
                }
            }
        }
        dist.swap(next);
    }
    return mu;
}

Evaluation evaluate_policy(const TabularCMDP& m, const TabularPolicy& pi) {
    const auto mu = occupancy(m, pi);
    Evaluation ev;
    for (int t = 0; t < m.horizon(); ++t) {
        for (int s = 0; s < m.n_states(); ++s) {
            for (int a = 0; a < m.n_actions(); ++a) {
                const double w = mu[occ_index(m, t, s, a)];
                ev.J += w * m.r(s, a);
                ev.Jc += w * m.c(s, a);
            }
        }
    }
    return ev;
}

TabularPolicy policy_from_occupancy(const TabularCMDP& m, const std::vector<double>& mu) {
    const int ns = m.n_states();
    const int na = m.n_actions();
    if (mu.size() != sz(m.horizon() * ns * na)) {
        throw ParameterError("occupancy has the wrong size");
    }
    TabularPolicy pi(m.horizon(), ns, na);
    for (int t = 0; t < m.horizon(); ++t) {
        for (int s = 0; s < ns; ++s) {
            double total = 0.0;
            for (int a = 0; a < na; ++a) {
                total += std::max(0.0, mu[occ_index(m, t, s, a)]);
            }
            if (total <= 1e-300) {
                continue;
            }
            for (int a = 0; a < na; ++a) {
                pi(t, s, a) = std::max(0.0, mu[occ_index(m, t, s, a)]) / total;
            }
        }
    }
    return pi;
}

DpSolution solve_penalized_dp(const TabularCMDP& m, double cost_weight) {
    const int ns = m.n_states();
    const int na = m.n_actions();
    const int h = m.horizon();
    std::vector<double> v(sz(ns), 0.0);
    std::vector<double> vc(sz(ns), 0.0);
    std::vector<double> v_next(sz(ns));
    std::vector<double> vc_next(sz(ns));
    std::vector<int> choice(sz(h * ns), 0);
    for (int t = h - 1; t >= 0; --t) {
        for (int s = 0; s < ns; ++s) {
            int best_a = 0;
            double best_q = -std::numeric_limits<double>::infinity();
            double best_qc = 0.0;
            for (int a = 0; a < na; ++a) {
                double q = m.r(s, a) - cost_weight * m.c(s, a);
                double qc = m.c(s, a);
                for (int s2 = 0; s2 < ns; ++s2) {
                    const double p = m.p(s, a, s2);
                    if (p != 0.0) {
                        q += p * v[sz(s2)];
                        qc += p * vc[sz(s2)];
                    }
                }
                // Ties go to the lower expected cost, then the lower index.
                const double tol = 1e-12 * std::max(1.0, std::abs(q));
                if (q > best_q + tol || (q >= best_q - tol && qc < best_qc - 1e-12)) {
                    best_q = q;
                    best_qc = qc;
                    best_a = a;
                }
            }
            v_next[sz(s)] = best_q;
            vc_next[sz(s)] = best_qc;
            choice[sz(t * ns + s)] = best_a;
        }
        v.swap(v_next);
        vc.swap(vc_next);
    }
    DpSolution out;
    for (int s = 0; s < ns; ++s) {
        out.value += m.p0(s) * v[sz(s)];
    }
    out.policy = TabularPolicy::deterministic(h, ns, na, choice);
    return out;
}

double dual_function(const TabularCMDP& m, double delta, double lambda) {
    return solve_penalized_dp(m, lambda).value + lambda * delta;
}

ConstrainedSolution solve_constrained_lp(const TabularCMDP& m, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta)) {
        throw ParameterError("delta must be finite and non-negative");
    }
    const int ns = m.n_states();
    const int na = m.n_actions();
    const int h = m.horizon();
    const int n_vars = h * ns * na;

    LinearProgram lp;
    lp.objective.resize(sz(n_vars));
    std::vector<double> cost_row(sz(n_vars));
    for (int t = 0; t < h; ++t) {
        for (int s = 0; s < ns; ++s) {
            for (int a = 0; a < na; ++a) {
                lp.objective[occ_index(m, t, s, a)] = m.r(s, a);
                cost_row[occ_index(m, t, s, a)] = m.c(s, a);
            }
        }
    }
    for (int s = 0; s < ns; ++s) {
        std::vector<double> row(sz(n_vars), 0.0);
        for (int a = 0; a < na; ++a) {
            row[occ_index(m, 0, s, a)] = 1.0;
        }
        lp.a_eq.push_back(std::move(row));
        lp.b_eq.push_back(m.p0(s));
    }
    for (int t = 0; t + 1 < h; ++t) {
        for (int s2 = 0; s2 < ns; ++s2) {
            std::vector<double> row(sz(n_vars), 0.0);
            for (int a = 0; a < na; ++a) {
                row[occ_index(m, t + 1, s2, a)] = 1.0;
            }
            for (int s = 0; s < ns; ++s) {
                for (int a = 0; a < na; ++a) {
                    row[occ_index(m, t, s, a)] -= m.p(s, a, s2);
                }
            }
            lp.a_eq.push_back(std::move(row));
            lp.b_eq.push_back(0.0);
        }
    }
    lp.a_le.push_back(cost_row);
    lp.b_le.push_back(delta);

    const LpSolution sol = solve_lp(lp);
    ConstrainedSolution out;
    if (sol.status != LpStatus::optimal) {
        if (sol.status == LpStatus::unbounded) {
            throw NumericError("occupancy LP reported unbounded; the CMDP is malformed");
        }
        return out;
    }
    out.feasible = true;
    out.J_star = sol.objective;
    out.occupancy = sol.x;
    for (int k = 0; k < n_vars; ++k) {
        out.Jc_star += cost_row[sz(k)] * sol.x[sz(k)];
    }
    out.lambda_basis = std::max(0.0, sol.duals_le[0]);
    out.policy = policy_from_occupancy(m, sol.x);

    // Degenerate optima admit a whole interval of multipliers; keep the
    // smallest one at which the dual function attains J_star.
    const double tol = 1e-11 * std::max(1.0, std::abs(out.J_star));
    if (out.lambda_basis > 0.0 && dual_function(m, delta, 0.0) <= out.J_star + tol) {
        out.lambda_star = 0.0;
    } else {
        double lo = 0.0;
        double hi = out.lambda_basis;
        if (dual_function(m, delta, hi) > out.J_star + tol) {
            // Basis dual is not optimal at this tolerance; trust it as is.
            out.lambda_star = hi;
            return out;
        }
        for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            if (dual_function(m, delta, mid) <= out.J_star + tol) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.lambda_star = hi;
    }
    return out;
}

LagrangianSolution solve_lagrangian(const TabularCMDP& m, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta)) {
        throw ParameterError("delta must be finite and non-negative");
    }
    LagrangianSolution out;
    auto jc_at = [&](double lambda, TabularPolicy& pi, Evaluation& ev) {
        pi = solve_penalized_dp(m, lambda).policy;
        ev = evaluate_policy(m, pi);
        return ev.Jc;
    };
    const double budget_tol = 1e-12 * std::max(1.0, delta);
    TabularPolicy pi_hi{1, 1, 1};
    Evaluation ev_hi;
    if (jc_at(0.0, pi_hi, ev_hi) <= delta + budget_tol) {
        out.feasible = true;
        out.J_star = ev_hi.J;
        out.Jc_star = ev_hi.Jc;
        out.below = pi_hi;
        out.above = pi_hi;
        out.markov = pi_hi;
        return out;
    }
    // Minimum achievable cost decides feasibility.
    {
        std::vector<double> zero(sz(m.n_states() * m.n_actions()), 0.0);
        std::vector<double> p;
        for (int s = 0; s < m.n_states(); ++s) {
            for (int a = 0; a < m.n_actions(); ++a) {
                for (int s2 = 0; s2 < m.n_states(); ++s2) {
                    p.push_back(m.p(s, a, s2));
                }
            }
        }
        std::vector<double> c;
        std::vector<double> p0;
        for (int s = 0; s < m.n_states(); ++s) {
            p0.push_back(m.p0(s));
            for (int a = 0; a < m.n_actions(); ++a) {
                c.push_back(m.c(s, a));
            }
        }
        const TabularCMDP cost_only(m.n_states(), m.n_actions(), m.horizon(), p, zero, c, p0);
        const double min_cost = -solve_penalized_dp(cost_only, 1.0).value;
        if (min_cost > delta + budget_tol) {
            return out;
        }
    }
    double lo = 0.0;
    double hi = 1.0;
    Evaluation ev;
    while (jc_at(hi, pi_hi, ev_hi) > delta + budget_tol) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e15) {
            throw NumericError("multiplier search diverged");
        }
    }
    TabularPolicy pi_lo{1, 1, 1};
    Evaluation ev_lo;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        TabularPolicy pi{1, 1, 1};
        if (jc_at(mid, pi, ev) <= delta + budget_tol) {
            hi = mid;
            pi_hi = pi;
            ev_hi = ev;
        } else {
            lo = mid;
        }
    }
    jc_at(lo, pi_lo, ev_lo);
    out.feasible = true;
    out.lambda_star = hi;
    out.below = pi_lo;
    out.above = pi_hi;
    const double gap = ev_lo.Jc - ev_hi.Jc;
    out.weight_below = gap > 0.0 ? std::clamp((delta - ev_hi.Jc) / gap, 0.0, 1.0) : 0.0;
    const double q = out.weight_below;
    out.J_star = q * ev_lo.J + (1.0 - q) * ev_hi.J;
    out.Jc_star = q * ev_lo.Jc + (1.0 - q) * ev_hi.Jc;
    auto mu = occupancy(m, pi_lo);
    const auto mu_hi = occupancy(m, pi_hi);
    for (std::size_t k = 0; k < mu.size(); ++k) {
        mu[k] = q * mu[k] + (1.0 - q) * mu_hi[k];
    }
    out.markov = policy_from_occupancy(m, mu);
    return out;
}

std::uint64_t deterministic_policy_count(const TabularCMDP& m) {
    constexpr std::uint64_t cap = std::uint64_t{1} << 62;
    std::uint64_t count = 1;
    const auto a = static_cast<std::uint64_t>(m.n_actions());
    for (int k = 0; k < m.horizon() * m.n_states(); ++k) {
        if (count > cap / a) {
            return cap;
        }
        count *= a;
    }
    return count;
}

namespace detail {

Evaluation evaluate_choice(const TabularCMDP& m, const std::vector<int>& choice, std::vector<double>& dist,
                           std::vector<double>& next) {
    const int ns = m.n_states();
    dist.assign(sz(ns), 0.0);
    next.assign(sz(ns), 0.0);
    for (int s = 0; s < ns; ++s) {
        dist[sz(s)] = m.p0(s);
    }
    Evaluation ev;
    for (int t = 0; t < m.horizon(); ++t) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int s = 0; s < ns; ++s) {
            const double w = dist[sz(s)];
            if (w == 0.0) {
                continue;
            }
            const int a = choice[sz(t * ns + s)];
            ev.J += w * m.r(s, a);
            ev.Jc += w * m.c(s, a);
            for (int s2 = 0; s2 < ns; ++s2) {
                next[sz(s2)] += w * m.p(s, a, s2);
            }
        }
        dist.swap(next);
    }
    return ev;
}

}  // namespace detail

BruteForceResult brute_force_optimum(const TabularCMDP& m, double delta) {
    BruteForceResult out;
    std::vector<int> best;
    const double tol = 1e-12 * std::max(1.0, delta);
    for_each_deterministic(m, 1'000'000, [&](const std::vector<int>& choice, const Evaluation& ev) {
        if (ev.Jc > delta + tol) {
            return;
        }
        if (!out.feasible || ev.J > out.J_det + 1e-12 || (ev.J >= out.J_det - 1e-12 && ev.Jc < out.Jc_det)) {
            out.feasible = true;
            out.J_det = ev.J;
            out.Jc_det = ev.Jc;
            best = choice;
        }
    });
    if (out.feasible) {
        out.best_policy = TabularPolicy::deterministic(m.horizon(), m.n_states(), m.n_actions(), best);
    }
    return out;
}

TabularCMDP from_task(const cmdp::TaskSpec& task) {
    const int cells = task.n_cells();
    const int ns = cells + 1;
    const int na = cmdp::kNumActions;
    const int absorbing = cells;
    std::vector<double> p(sz(ns * na * ns), 0.0);
    std::vector<double> r(sz(ns * na), 0.0);
    std::vector<double> c(sz(ns * na), 0.0);
    const int goal = task.cell_index(task.goal());
    for (int s = 0; s < ns; ++s) {
        for (int a = 0; a < na; ++a) {
            const std::size_t k = sz(s * na + a);
            if (s == absorbing || s == goal) {
                p[k * sz(ns) + sz(absorbing)] = 1.0;
                continue;
            }
            const auto next = cmdp::apply_action(task.cell_at(s), cmdp::action_from_index(a), task.grid_size());
            const int s2 = task.cell_index(next);
            c[k] = task.is_obstacle(next) ? 1.0 : 0.0;
            if (s2 == goal) {
                r[k] = 1.0;
                p[k * sz(ns) + sz(absorbing)] = 1.0;
            } else {
                p[k * sz(ns) + sz(s2)] = 1.0;
            }
        }
    }
    std::vector<double> p0(sz(ns), 0.0);
    p0[sz(task.cell_index(task.start()))] = 1.0;
    return TabularCMDP(ns, na, task.time_limit(), std::move(p), std::move(r), std::move(c), std::move(p0));
}

}  // namespace eppo::oracle
