#include "eppo/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace eppo::penalty {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

// Cross product of (a - o) and (b - o) in the (Jc, J) plane.
double cross(const PolicyCloud::Vertex& o, const PolicyCloud::Vertex& a, const PolicyCloud::Vertex& b) {
    return (a.Jc - o.Jc) * (b.J - o.J) - (a.J - o.J) * (b.Jc - o.Jc);
}

bool better(double f, double jc, double best_f, double best_jc) {
    const double tol = 1e-12 * std::max(1.0, std::abs(best_f));
    return f > best_f + tol || (f >= best_f - tol && jc < best_jc);
}

}  // namespace

double constraint_gap(const TabularCMDP& m, const TabularPolicy& pi, double delta) {
    return oracle::evaluate_policy(m, pi).Jc - delta;
}

double surrogate_objective(const TabularCMDP& m, const TabularPolicy& pi, double lambda, double delta, int K) {
    if (lambda < 0.0) {
        throw ParameterError("lambda must be non-negative");
    }
    if (K < 1) {
        throw ParameterError("K must be at least 1");
    }
    return surrogate_value(oracle::evaluate_policy(m, pi), lambda, delta, K);
}

double multiplier_update(double lambda, double eta, double max_gap, double cap) {
    if (lambda < 0.0) {
        throw ParameterError("lambda must be non-negative");
    }
    if (!(eta > 0.0)) {
        throw ParameterError("eta must be positive");
    }
    return std::min(cap, hinge(lambda + eta * max_gap));
}

PolicyCloud PolicyCloud::enumerate(const TabularCMDP& m, std::uint64_t max_policies) {
    PolicyCloud cloud;
    cloud.m_ = std::make_shared<const TabularCMDP>(m);
    std::vector<Vertex> pts;
    std::uint64_t k = 0;
    oracle::for_each_deterministic(m, max_policies, [&](const std::vector<int>&, const Evaluation& ev) {
        pts.push_back({ev.J, ev.Jc, k++});
    });
    cloud.count_ = k;
    std::sort(pts.begin(), pts.end(), [](const Vertex& a, const Vertex& b) {
        return a.Jc < b.Jc || (a.Jc == b.Jc && (a.J > b.J || (a.J == b.J && a.index < b.index)));
    });
    // Keep the best J per distinct Jc, then run the upper monotone chain.
    std::vector<Vertex> upper;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i > 0 && pts[i].Jc == pts[i - 1].Jc) {
            continue;
        }
        while (upper.size() >= 2 && cross(upper[upper.size() - 2], upper.back(), pts[i]) >= 0.0) {
            upper.pop_back();
        }
        upper.push_back(pts[i]);
    }
    cloud.hull_ = std::move(upper);
    return cloud;
}

TabularPolicy PolicyCloud::policy(std::uint64_t index) const {
    const TabularCMDP& m = *m_;
    std::vector<int> choice(sz(m.horizon() * m.n_states()));
    const auto a = static_cast<std::uint64_t>(m.n_actions());
    for (auto& c : choice) {
        c = static_cast<int>(index % a);
        index /= a;
    }
    return TabularPolicy::deterministic(m.horizon(), m.n_states(), m.n_actions(), choice);
}

std::vector<PolicyCloud::Point> PolicyCloud::candidates(double delta) const {
    std::vector<Point> out;
    for (std::size_t i = 0; i < hull_.size(); ++i) {
        out.push_back({hull_[i].J, hull_[i].Jc, i, i, 1.0});
        if (i + 1 < hull_.size() && hull_[i].Jc < delta && delta < hull_[i + 1].Jc) {
            const double w = (hull_[i + 1].Jc - delta) / (hull_[i + 1].Jc - hull_[i].Jc);
            out.push_back({w * hull_[i].J + (1.0 - w) * hull_[i + 1].J, delta, i, i + 1, w});
        }
    }
    return out;
}

TabularPolicy PolicyCloud::realize(const Point& p) const {
    const auto pa = policy(hull_[p.a].index);
    if (p.weight >= 1.0 || p.a == p.b) {
        return pa;
    }
    auto mu = oracle::occupancy(*m_, pa);
    const auto mu_b = oracle::occupancy(*m_, policy(hull_[p.b].index));
    for (std::size_t k = 0; k < mu.size(); ++k) {
        mu[k] = p.weight * mu[k] + (1.0 - p.weight) * mu_b[k];
    }
    return oracle::policy_from_occupancy(*m_, mu);
}

InnerResult exact_argmax(const PolicyCloud& cloud, const TabularCMDP& m, double lambda, double delta) {
    const auto cands = cloud.candidates(delta);
    if (cands.empty()) {
        throw PreconditionError("policy cloud is empty");
    }
    std::size_t best = 0;
    double best_f = -std::numeric_limits<double>::infinity();
    double best_jc = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const double f = cands[i].J - lambda * hinge(cands[i].Jc - delta);
        if (better(f, cands[i].Jc, best_f, best_jc)) {
            best = i;
            best_f = f;
            best_jc = cands[i].Jc;
        }
    }
    InnerResult out;
    out.policy = cloud.realize(cands[best]);
    out.eval = oracle::evaluate_policy(m, out.policy);
    out.value = out.eval.J - lambda * hinge(out.eval.Jc - delta);
    return out;
}

InnerResult gradient_argmax(const TabularCMDP& m, double lambda, double delta, bool linear,
                            const GradientOptions& opt) {
    const int h = m.horizon();
    const int ns = m.n_states();
    const int na = m.n_actions();
    const std::size_t n = sz(h * ns * na);
    auto objective = [&](const Evaluation& ev) {
        return linear ? ev.J - lambda * (ev.Jc - delta) : ev.J - lambda * hinge(ev.Jc - delta);
    };

    InnerResult best;
    best.value = -std::numeric_limits<double>::infinity();
    best.converged = false;
    std::vector<double> theta(n);
    std::vector<double> probs(n);
    std::vector<double> v(sz(ns));
    std::vector<double> v_next(sz(ns));
    for (int restart = 0; restart < opt.restarts; ++restart) {
        Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(restart)));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& x : theta) {
            x = restart == 0 ? 0.0 : normal(rng);
        }
        std::vector<double> trace;
        InnerResult run;
        run.value = -std::numeric_limits<double>::infinity();
        for (int step = 0; step <= opt.steps; ++step) {
            for (std::size_t row = 0; row < n; row += sz(na)) {
                const double mx = *std::max_element(theta.begin() + static_cast<std::ptrdiff_t>(row),
                                                    theta.begin() + static_cast<std::ptrdiff_t>(row) + na);
                double z = 0.0;
                for (int a = 0; a < na; ++a) {
                    probs[row + sz(a)] = std::exp(theta[row + sz(a)] - mx);
                    z += probs[row + sz(a)];
                }
                for (int a = 0; a < na; ++a) {
                    probs[row + sz(a)] /= z;
                }
            }
            const TabularPolicy pi(h, ns, na, probs);
            const auto mu = oracle::occupancy(m, pi);
            const auto ev = oracle::evaluate_policy(m, pi);
            const double value = objective(ev);
            trace.push_back(value);
            if (value > run.value) {
                run.value = value;
                run.eval = ev;
                run.policy = pi;
            }
            if (step == opt.steps) {
                break;
            }
            const double w = linear || ev.Jc > delta ? lambda : 0.0;
            std::fill(v.begin(), v.end(), 0.0);
            for (int t = h - 1; t >= 0; --t) {
                for (int s = 0; s < ns; ++s) {
                    const std::size_t row = sz((t * ns + s) * na);
                    double d = 0.0;
                    double vs = 0.0;
                    std::vector<double> q(sz(na));
                    for (int a = 0; a < na; ++a) {
                        d += mu[row + sz(a)];
                        double qa = m.r(s, a) - w * m.c(s, a);
                        for (int s2 = 0; s2 < ns; ++s2) {
                            qa += m.p(s, a, s2) * v[sz(s2)];
                        }
                        q[sz(a)] = qa;
                        vs += probs[row + sz(a)] * qa;
                    }
                    v_next[sz(s)] = vs;
                    for (int a = 0; a < na; ++a) {
                        theta[row + sz(a)] += opt.step_size * d * probs[row + sz(a)] * (q[sz(a)] - vs);
                    }
                }
                v.swap(v_next);
            }
        }
        const std::size_t window = std::min<std::size_t>(50, trace.size() - 1);
        run.converged =
            std::abs(trace.back() - trace[trace.size() - 1 - window]) <= 1e-6 * std::max(1.0, std::abs(trace.back()));
        if (run.value > best.value) {
            const bool any_converged = best.converged || run.converged;
            best = run;
            best.converged = any_converged;
        } else {
            best.converged = best.converged || run.converged;
        }
    }
    return best;
}

namespace {

struct InnerSolver {
    const TabularCMDP& m;
    const RunOptions& opt;
    std::optional<PolicyCloud> cloud;

    InnerSolver(const TabularCMDP& model, const RunOptions& options) : m(model), opt(options) {
        const auto count = oracle::deterministic_policy_count(m);
        if (opt.inner == InnerMethod::exact_search) {
            cloud = PolicyCloud::enumerate(m, std::max<std::uint64_t>(opt.exhaustive_limit, 1'000'000));
        } else if (opt.inner == InnerMethod::automatic && count <= opt.exhaustive_limit) {
            cloud = PolicyCloud::enumerate(m, opt.exhaustive_limit);
        }
    }

    InnerResult hinge_argmax(double lambda, double delta) const {
        if (cloud) {
            return exact_argmax(*cloud, m, lambda, delta);
        }
        return gradient_argmax(m, lambda, delta, false, opt.gradient);
    }

    // Linear Lagrangian: only vertices can be strict maximizers.
    InnerResult linear_argmax(double lambda, double delta) const {
        if (!cloud) {
            return gradient_argmax(m, lambda, delta, true, opt.gradient);
        }
        const auto& hull = cloud->hull();
        std::size_t best = 0;
        double best_f = -std::numeric_limits<double>::infinity();
        double best_jc = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < hull.size(); ++i) {
            const double f = hull[i].J - lambda * (hull[i].Jc - delta);
            if (better(f, hull[i].Jc, best_f, best_jc)) {
                best = i;
                best_f = f;
                best_jc = hull[i].Jc;
            }
        }
        InnerResult out;
        out.policy = cloud->policy(hull[best].index);
        out.eval = oracle::evaluate_policy(m, out.policy);
        out.value = best_f;
        return out;
    }
};

void check_run(const RunOptions& opt) {
    if (!(opt.eta > 0.0)) {
        throw ParameterError("eta must be positive");
    }
    if (opt.K < 1) {
        throw ParameterError("K must be at least 1");
    }
    if (opt.n_iters < 0) {
        throw ParameterError("n_iters must be non-negative");
    }
    if (opt.lambda0 < 0.0) {
        throw ParameterError("lambda0 must be non-negative");
    }
}

}  // namespace

Trajectory eppo_tabular(const TabularCMDP& m, double delta, const RunOptions& opt) {
    check_run(opt);
    const InnerSolver solver(m, opt);
    Trajectory traj;
    double lambda = opt.lambda0;
    traj.final_policy = TabularPolicy::uniform(m.horizon(), m.n_states(), m.n_actions());
    for (int it = 1; it <= opt.n_iters; ++it) {
        const auto inner = solver.hinge_argmax(lambda, delta);
        // All K constraints share one CMDP, so max_k g_k is the single gap.
        const double gap = inner.eval.Jc - delta;
        Iterate rec;
        rec.iter = it;
        rec.J = inner.eval.J;
        rec.Jc = inner.eval.Jc;
        rec.L_sigma = surrogate_value(inner.eval, lambda, delta, opt.K);
        rec.inner_converged = inner.converged;
        lambda = multiplier_update(lambda, opt.eta, gap, opt.lambda_cap);
        rec.lambda = lambda;
        traj.iterates.push_back(rec);
        traj.final_policy = inner.policy;
        if (opt.keep_policies) {
            traj.policies.push_back(inner.policy);
        }
        if (!inner.converged) {
            traj.inner_failed = true;
            break;
        }
    }
    traj.final_lambda = lambda;
    return traj;
}

Trajectory naive_primal_dual(const TabularCMDP& m, double delta, const RunOptions& opt) {
    check_run(opt);
    const InnerSolver solver(m, opt);
    Trajectory traj;
    traj.lambda_vec.assign(sz(opt.K), opt.lambda0);
    traj.final_policy = TabularPolicy::uniform(m.horizon(), m.n_states(), m.n_actions());
    for (int it = 1; it <= opt.n_iters; ++it) {
        double sum = 0.0;
        for (double l : traj.lambda_vec) {
            sum += l;
        }
        // K J - sum_k lambda_k g_k with identical g_k is J - mean(lambda) g per episode.
        const auto inner = solver.linear_argmax(sum / opt.K, delta);
        const double gap = inner.eval.Jc - delta;
        double lmax = 0.0;
        for (auto& l : traj.lambda_vec) {
            l = multiplier_update(l, opt.eta, gap, opt.lambda_cap);
            lmax = std::max(lmax, l);
        }
        Iterate rec;
        rec.iter = it;
        rec.J = inner.eval.J;
        rec.Jc = inner.eval.Jc;
        rec.lambda = lmax;
        rec.L_sigma = surrogate_value(inner.eval, lmax, delta, opt.K);
        rec.inner_converged = inner.converged;
        traj.iterates.push_back(rec);
        traj.final_policy = inner.policy;
        if (opt.keep_policies) {
            traj.policies.push_back(inner.policy);
        }
        if (!inner.converged) {
            traj.inner_failed = true;
            break;
        }
    }
    traj.final_lambda = *std::max_element(traj.lambda_vec.begin(), traj.lambda_vec.end());
    return traj;
}

std::string iterates_csv(const Trajectory& traj) {
    std::ostringstream out;
    out.precision(17);
    out << "iter,J,Jc,lambda,L_sigma\n";
    for (const auto& r : traj.iterates) {
        out << r.iter << ',' << r.J << ',' << r.Jc << ',' << r.lambda << ',' << r.L_sigma << '\n';
    }
    return out.str();
}

json FixedPointCertificate::to_json() const {
    json a = argmax ? json(*argmax) : json("unverifiable");
    return {{"lemma1", lemma1},
            {"argmax", a},
            {"primal_optimal", primal_optimal},
            {"passed", passed()},
            {"gaps",
             {{"max_gap", max_gap},
              {"lambda_gap", lambda_gap},
              {"argmax_improvement", argmax_improvement},
              {"J", J},
              {"J_star", J_star},
              {"Jc", Jc}}}};
}

FixedPointCertificate is_fixed_point(const TabularCMDP& m, const TabularPolicy& pi, double lambda, double delta,
                                     double tol) {
    if (!(tol > 0.0)) {
        throw ParameterError("tol must be positive");
    }
    FixedPointCertificate cert;
    const auto ev = oracle::evaluate_policy(m, pi);
    cert.J = ev.J;
    cert.Jc = ev.Jc;
    cert.max_gap = ev.Jc - delta;
    cert.lambda_gap = lambda * cert.max_gap;
    cert.lemma1 = lambda >= 0.0 && cert.max_gap <= tol && std::abs(cert.lambda_gap) <= tol;

    const auto opt = oracle::solve_lagrangian(m, delta);
    cert.J_star = opt.feasible ? opt.J_star : std::numeric_limits<double>::quiet_NaN();
    const double scale = std::max(1.0, opt.feasible ? std::abs(opt.J_star) : 1.0);
    cert.primal_optimal = opt.feasible && ev.Jc <= delta + tol && std::abs(ev.J - opt.J_star) <= tol * scale;

    if (oracle::deterministic_policy_count(m) <= 1'000'000) {
        const auto cloud = PolicyCloud::enumerate(m, 1'000'000);
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& c : cloud.candidates(delta)) {
            best = std::max(best, c.J - lambda * hinge(c.Jc - delta));
        }
        cert.argmax_improvement = best - (ev.J - lambda * hinge(ev.Jc - delta));
        cert.argmax = cert.argmax_improvement <= tol * scale;
    }
    return cert;
}

}  // namespace eppo::penalty
