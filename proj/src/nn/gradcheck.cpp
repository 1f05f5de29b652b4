#include "eppo/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace eppo::nn {

double gradient_check(const std::vector<Var>& params, const std::function<Var(Graph&)>& loss, double step) {
    for (const auto& p : params) {
        p->grad.resize(0, 0);
    }
    {
        Graph g;
        Var l = loss(g);
        g.backward(l);
    }
    double diff = 0.0;
    double na = 0.0;
    double nf = 0.0;
    for (const auto& p : params) {
        const Mat analytic = p->grad.size() == 0 ? Mat::Zero(p->value.rows(), p->value.cols()) : p->grad;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            double& x = p->value.data()[i];
            const double x0 = x;
            x = x0 + step;
            double up = 0.0;
            {
                Graph g;
                up = loss(g)->value(0, 0);
            }
            x = x0 - step;
            double down = 0.0;
            {
                Graph g;
                down = loss(g)->value(0, 0);
            }
            x = x0;
            const double fd = (up - down) / (2.0 * step);
            const double ad = analytic.data()[i];
            diff += (ad - fd) * (ad - fd);
            na += ad * ad;
            nf += fd * fd;
        }
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-10});
}

namespace {

Mat random_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = uniform_real(rng, lo, hi);
    }
    return m;
}

}  // namespace

std::vector<OpReport> op_gradcheck_suite(int trials, std::uint64_t seed) {
    using Make = std::function<std::vector<Mat>(Rng&)>;
    using Build = std::function<Var(Graph&, const std::vector<Var>&)>;
    std::vector<OpReport> out;
    auto run = [&](const char* name, const Make& make, const Build& build) {
        Rng rng(derive_seed(seed, std::hash<std::string>{}(name)));
        double worst = 0.0;
        for (int t = 0; t < trials; ++t) {
            std::vector<Var> leaves;
            for (auto& m : make(rng)) {
                leaves.push_back(make_parameter(std::move(m)));
            }
            Mat weights;
            {
                Graph g;
                Var o = build(g, leaves);
                weights = random_mat(rng, static_cast<int>(o->value.rows()), static_cast<int>(o->value.cols()));
            }
            auto loss = [&](Graph& g) { return sum_all(g, mul(g, build(g, leaves), g.constant(weights))); };
            worst = std::max(worst, gradient_check(leaves, loss));
        }
        out.push_back({name, worst});
    };
    auto two = [](Rng& rng) {
        const int r = uniform_int(rng, 1, 5);
        const int c = uniform_int(rng, 1, 5);
        return std::vector<Mat>{random_mat(rng, r, c), random_mat(rng, r, c)};
    };
    auto one = [](Rng& rng) {
        return std::vector<Mat>{random_mat(rng, uniform_int(rng, 1, 5), uniform_int(rng, 1, 6), -2, 2)};
    };
    run("add", two, [](Graph& g, const std::vector<Var>& v) { return add(g, v[0], v[1]); });
    run("sub", two, [](Graph& g, const std::vector<Var>& v) { return sub(g, v[0], v[1]); });
    run("mul", two, [](Graph& g, const std::vector<Var>& v) { return mul(g, v[0], v[1]); });
    run("scale", one, [](Graph& g, const std::vector<Var>& v) { return scale(g, v[0], -1.7); });
    run("gelu", one, [](Graph& g, const std::vector<Var>& v) { return gelu(g, v[0]); });
    run("tanh", one, [](Graph& g, const std::vector<Var>& v) { return tanh(g, v[0]); });
    run("softmax", one, [](Graph& g, const std::vector<Var>& v) { return softmax_rows(g, v[0]); });
    run("log_softmax", one, [](Graph& g, const std::vector<Var>& v) { return log_softmax_rows(g, v[0]); });
    run("row_sum", one, [](Graph& g, const std::vector<Var>& v) { return row_sum(g, v[0]); });
    run("mean_all", one, [](Graph& g, const std::vector<Var>& v) { return mean_all(g, v[0]); });
    run("matmul",
        [](Rng& rng) {
            const int a = uniform_int(rng, 1, 5), b = uniform_int(rng, 1, 5), c = uniform_int(rng, 1, 5);
            return std::vector<Mat>{random_mat(rng, a, b), random_mat(rng, b, c)};
        },
        [](Graph& g, const std::vector<Var>& v) { return matmul(g, v[0], v[1]); });
    run("linear",
        [](Rng& rng) {
            const int a = uniform_int(rng, 1, 5), b = uniform_int(rng, 1, 5), c = uniform_int(rng, 1, 5);
            return std::vector<Mat>{random_mat(rng, a, b), random_mat(rng, b, c), random_mat(rng, 1, c)};
        },
        [](Graph& g, const std::vector<Var>& v) { return linear(g, v[0], v[1], v[2]); });
    run("add_row",
        [](Rng& rng) {
            const int a = uniform_int(rng, 1, 5), c = uniform_int(rng, 1, 5);
            return std::vector<Mat>{random_mat(rng, a, c), random_mat(rng, 1, c)};
        },
        [](Graph& g, const std::vector<Var>& v) { return add_row(g, v[0], v[1]); });
    run("layernorm",
        [](Rng& rng) {
            const int a = uniform_int(rng, 1, 5), c = uniform_int(rng, 2, 7);
            return std::vector<Mat>{random_mat(rng, a, c, -3, 3), random_mat(rng, 1, c), random_mat(rng, 1, c)};
        },
        [](Graph& g, const std::vector<Var>& v) { return layernorm(g, v[0], v[1], v[2]); });
    run("embedding", [](Rng& rng) { return std::vector<Mat>{random_mat(rng, 6, 3)}; },
        [](Graph& g, const std::vector<Var>& v) { return embedding(g, v[0], {0, 3, 3, 5, 1}); });
    run("concat_cols",
        [](Rng& rng) {
            const int r = uniform_int(rng, 1, 4);
            return std::vector<Mat>{random_mat(rng, r, 2), random_mat(rng, r, 3), random_mat(rng, r, 1)};
        },
        [](Graph& g, const std::vector<Var>& v) { return concat_cols(g, v); });
    run("slice_cols", [](Rng& rng) { return std::vector<Mat>{random_mat(rng, 3, 6)}; },
        [](Graph& g, const std::vector<Var>& v) { return slice_cols(g, v[0], 2, 3); });
    run("pick", [](Rng& rng) { return std::vector<Mat>{random_mat(rng, 4, 5)}; },
        [](Graph& g, const std::vector<Var>& v) { return pick(g, v[0], {4, 0, 2, 2}); });
    run("dropout", [](Rng& rng) { return std::vector<Mat>{random_mat(rng, 4, 5)}; },
        [](Graph& g, const std::vector<Var>& v) {
            Rng r(77);
            return dropout(g, v[0], 0.3, true, r);
        });
    run("causal_attention",
        [](Rng& rng) {
            return std::vector<Mat>{random_mat(rng, 7, 4), random_mat(rng, 7, 4), random_mat(rng, 7, 4)};
        },
        [](Graph& g, const std::vector<Var>& v) {
            return causal_attention(g, v[0], v[1], v[2], {{0, 3}, {3, 4}}, 2);
        });
    run("causal_attention_dropout",
        [](Rng& rng) {
            return std::vector<Mat>{random_mat(rng, 5, 6), random_mat(rng, 5, 6), random_mat(rng, 5, 6)};
        },
        [](Graph& g, const std::vector<Var>& v) {
            Rng r(5);
            return causal_attention(g, v[0], v[1], v[2], {{0, 5}}, 3, 0.2, true, &r);
        });
    run("cross_entropy", [](Rng& rng) { return std::vector<Mat>{random_mat(rng, 4, 5, -2, 2)}; },
        [](Graph& g, const std::vector<Var>& v) {
            return cross_entropy(g, v[0], {1, 4, 0, 0}, {1.0, 0.5, 0.0, 2.0});
        });
    run("mse", [](Rng& rng) { return std::vector<Mat>{random_mat(rng, 3, 2)}; },
        [](Graph& g, const std::vector<Var>& v) {
            Mat t(3, 2);
            t << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
            return mse(g, v[0], t);
        });
    return out;
}

}  // namespace eppo::nn
