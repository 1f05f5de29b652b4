#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "eppo/oracle.hpp"

namespace eppo::oracle {

namespace {

constexpr double kPivotEps = 1e-11;
constexpr int kMaxPivots = 200000;

// Minimization tableau. Rows 0..m-1 hold [A | b]; row m holds the reduced
// costs and, in the last column, the negated objective value.
struct Tableau {
    Eigen::MatrixXd t;
    std::vector<int> basis;
    int pivots = 0;

    int rows() const { return static_cast<int>(t.rows()) - 1; }
    int cols() const { return static_cast<int>(t.cols()) - 1; }

    void pivot(int r, int c) {
        t.row(r) /= t(r, c);
        for (int i = 0; i <= rows(); ++i) {
            if (i != r) {
                const double f = t(i, c);
                if (f != 0.0) {
                    t.row(i) -= f * t.row(r);
                }
            }
        }
        basis[static_cast<std::size_t>(r)] = c;
        ++pivots;
    }

    void set_costs(const std::vector<double>& cost) {
        const int m = rows();
        const int n = cols();
        for (int j = 0; j < n; ++j) {
            t(m, j) = cost[static_cast<std::size_t>(j)];
        }
        t(m, n) = 0.0;
        for (int i = 0; i < m; ++i) {
            const double cb = cost[static_cast<std::size_t>(basis[static_cast<std::size_t>(i)])];
            if (cb != 0.0) {
                t.row(m) -= cb * t.row(i);
            }
        }
    }

    // Bland's rule: lowest-index improving column, ratio ties to the lowest
    // basic index. Returns false when the problem is unbounded.
    bool run(const std::vector<bool>& allowed) {
        const Eigen::Index m = t.rows() - 1;
        const Eigen::Index n = t.cols() - 1;
        while (true) {
            Eigen::Index enter = -1;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (allowed[static_cast<std::size_t>(j)] && t(m, j) < -kPivotEps) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) {
                return true;
            }
            Eigen::Index leave = -1;
            double best = 0.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                const double a = t(i, enter);
                if (a <= kPivotEps) {
                    continue;
                }
                const double ratio = t(i, n) / a;
                if (leave < 0 || ratio < best - 1e-12) {
                    leave = i;
                    best = ratio;
                } else if (ratio <= best + 1e-12 &&
                           basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)]) {
                    leave = i;
                    best = std::min(best, ratio);
                }
            }
            if (leave < 0) {
                return false;
            }
            pivot(static_cast<int>(leave), static_cast<int>(enter));
            if (pivots > kMaxPivots) {
                throw NumericError("simplex exceeded the pivot limit");
            }
        }
    }
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp) {
    const int n = static_cast<int>(lp.objective.size());
    const int m_eq = static_cast<int>(lp.a_eq.size());
    const int m_le = static_cast<int>(lp.a_le.size());
    if (lp.b_eq.size() != lp.a_eq.size() || lp.b_le.size() != lp.a_le.size()) {
        throw ParameterError("LP right-hand side does not match the constraint rows");
    }
    for (const auto& row : lp.a_eq) {
        if (static_cast<int>(row.size()) != n) {
            throw ParameterError("LP equality row has the wrong width");
        }
    }
    for (const auto& row : lp.a_le) {
        if (static_cast<int>(row.size()) != n) {
            throw ParameterError("LP inequality row has the wrong width");
        }
    }

    const int m = m_eq + m_le;
    // Columns: structural, slacks, then one artificial per row.
    const int n_struct = n + m_le;
    const int n_cols = n_struct + m;
    Tableau tab;
    tab.t = Eigen::MatrixXd::Zero(m + 1, n_cols + 1);
    tab.basis.assign(static_cast<std::size_t>(m), -1);
    std::vector<double> sign(static_cast<std::size_t>(m), 1.0);
    std::vector<int> identity_col(static_cast<std::size_t>(m), -1);

    for (int i = 0; i < m; ++i) {
        const bool eq = i < m_eq;
        const auto& row = eq ? lp.a_eq[static_cast<std::size_t>(i)] : lp.a_le[static_cast<std::size_t>(i - m_eq)];
        const double b = eq ? lp.b_eq[static_cast<std::size_t>(i)] : lp.b_le[static_cast<std::size_t>(i - m_eq)];
        const double s = b < 0.0 ? -1.0 : 1.0;
        sign[static_cast<std::size_t>(i)] = s;
        for (int j = 0; j < n; ++j) {
            tab.t(i, j) = s * row[static_cast<std::size_t>(j)];
        }
        if (!eq) {
            tab.t(i, n + (i - m_eq)) = s;
        }
        tab.t(i, n_cols) = s * b;
        tab.t(i, n_struct + i) = 1.0;
        if (!eq && s > 0.0) {
            tab.basis[static_cast<std::size_t>(i)] = n + (i - m_eq);
            identity_col[static_cast<std::size_t>(i)] = n + (i - m_eq);
        } else {
            tab.basis[static_cast<std::size_t>(i)] = n_struct + i;
            identity_col[static_cast<std::size_t>(i)] = n_struct + i;
        }
    }

    LpSolution out;
    double b_scale = 1.0;
    for (int i = 0; i < m; ++i) {
        b_scale = std::max(b_scale, std::abs(tab.t(i, n_cols)));
    }

    // Phase 1: minimize the sum of artificials.
    std::vector<double> phase1(static_cast<std::size_t>(n_cols), 0.0);
    for (int i = 0; i < m; ++i) {
        phase1[static_cast<std::size_t>(n_struct + i)] = 1.0;
    }
    tab.set_costs(phase1);
    std::vector<bool> all(static_cast<std::size_t>(n_cols), true);
    tab.run(all);
    if (-tab.t(m, n_cols) > 1e-9 * b_scale) {
        out.status = LpStatus::infeasible;
        out.pivots = tab.pivots;
        return out;
    }
    // Drive remaining artificials out of the basis; rows where that is
    // impossible are redundant and stay inert.
    for (int i = 0; i < m; ++i) {
        if (tab.basis[static_cast<std::size_t>(i)] < n_struct) {
            continue;
        }
        for (int j = 0; j < n_struct; ++j) {
            if (std::abs(tab.t(i, j)) > 1e-9) {
                tab.pivot(i, j);
                break;
            }
        }
    }

    // Phase 2 on the negated objective.
    std::vector<double> phase2(static_cast<std::size_t>(n_cols), 0.0);
    for (int j = 0; j < n; ++j) {
        phase2[static_cast<std::size_t>(j)] = -lp.objective[static_cast<std::size_t>(j)];
    }
    tab.set_costs(phase2);
    std::vector<bool> structural(static_cast<std::size_t>(n_cols), false);
    std::fill(structural.begin(), structural.begin() + n_struct, true);
    const bool bounded = tab.run(structural);
    out.pivots = tab.pivots;
    if (!bounded) {
        out.status = LpStatus::unbounded;
        return out;
    }

    out.status = LpStatus::optimal;
    out.x.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < m; ++i) {
        const int b = tab.basis[static_cast<std::size_t>(i)];
        if (b < n) {
            out.x[static_cast<std::size_t>(b)] = std::max(0.0, tab.t(i, n_cols));
        }
    }
    for (int j = 0; j < n; ++j) {
        out.objective += lp.objective[static_cast<std::size_t>(j)] * out.x[static_cast<std::size_t>(j)];
    }
    // The reduced cost of a row's identity column is -y_i for the
    // minimization; the maximization's shadow price flips that sign again.
    out.duals_eq.resize(static_cast<std::size_t>(m_eq));
    out.duals_le.resize(static_cast<std::size_t>(m_le));
    for (int i = 0; i < m; ++i) {
        const double y = -tab.t(m, identity_col[static_cast<std::size_t>(i)]);
        const double price = -y * sign[static_cast<std::size_t>(i)];
        if (i < m_eq) {
            out.duals_eq[static_cast<std::size_t>(i)] = price;
        } else {
            out.duals_le[static_cast<std::size_t>(i - m_eq)] = price;
        }
    }
    return out;
}

}  // namespace eppo::oracle
