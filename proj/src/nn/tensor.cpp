#include "eppo/nn/tensor.hpp"

#include <cmath>
#include <numbers>

namespace eppo::nn {

namespace {

std::string shape(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void same_shape(const char* op, const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols()) {
        throw ShapeError(op, "operands " + shape(a->value) + " and " + shape(b->value) + " differ");
    }
}

bool any_grad(std::initializer_list<const Var*> vs) {
    for (const Var* v : vs) {
        if ((*v)->needs_grad) {
            return true;
        }
    }
    return false;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
// Attention rows are processed in blocks so that keys past the block end,
// which the causal mask zeroes anyway, never enter the products.
constexpr int kBlock = 32;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Var make_parameter(Mat value) {
    auto v = std::make_shared<Node>();
    v->value = std::move(value);
    v->op = "parameter";
    v->needs_grad = true;
    return v;
}

Var Graph::constant(Mat value) {
    auto v = std::make_shared<Node>();
    v->value = std::move(value);
    v->op = "constant";
    return v;
}

Var Graph::record(Mat value, std::string op, bool needs_grad, std::function<void(Node&)> backward) {
    auto v = std::make_shared<Node>();
    v->value = std::move(value);
    v->op = std::move(op);
    v->needs_grad = needs_grad;
    if (needs_grad) {
        v->backward = std::move(backward);
        tape_.push_back(v);
    }
    return v;
}

void Graph::backward(const Var& loss) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1) {
        throw ShapeError("backward", "loss must be 1x1, got " + shape(loss->value));
    }
    loss->accumulate(Mat::Ones(1, 1));
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        Node& n = **it;
        if (n.grad.size() != 0 && n.backward) {
            n.backward(n);
        }
    }
}

Var matmul(Graph& g, const Var& a, const Var& b) {
    if (a->value.cols() != b->value.rows()) {
        throw ShapeError("matmul", "inner dimensions of " + shape(a->value) + " and " + shape(b->value));
    }
    Mat out;
    out.noalias() = a->value * b->value;
    return g.record(std::move(out), "matmul", any_grad({&a, &b}), [a, b](Node& n) {
        if (a->needs_grad) {
            Mat ga;
            ga.noalias() = n.grad * b->value.transpose();
            a->accumulate(ga);
        }
        if (b->needs_grad) {
            Mat gb;
            gb.noalias() = a->value.transpose() * n.grad;
            b->accumulate(gb);
        }
    });
}

Var linear(Graph& g, const Var& x, const Var& w, const Var& b) {
    if (x->value.cols() != w->value.rows() || b->value.rows() != 1 || b->value.cols() != w->value.cols()) {
        throw ShapeError("linear", "x " + shape(x->value) + ", W " + shape(w->value) + ", b " + shape(b->value));
    }
    Mat out;
    out.noalias() = x->value * w->value;
    out.rowwise() += b->value.row(0);
    return g.record(std::move(out), "linear", any_grad({&x, &w, &b}), [x, w, b](Node& n) {
        if (x->needs_grad) {
            Mat gx;
            gx.noalias() = n.grad * w->value.transpose();
            x->accumulate(gx);
        }
        if (w->needs_grad) {
            Mat gw;
            gw.noalias() = x->value.transpose() * n.grad;
            w->accumulate(gw);
        }
        if (b->needs_grad) {
            b->accumulate(n.grad.colwise().sum());
        }
    });
}

Var add(Graph& g, const Var& a, const Var& b) {
    same_shape("add", a, b);
    return g.record(a->value + b->value, "add", any_grad({&a, &b}), [a, b](Node& n) {
        if (a->needs_grad) {
            a->accumulate(n.grad);
        }
        if (b->needs_grad) {
            b->accumulate(n.grad);
        }
    });
}

Var sub(Graph& g, const Var& a, const Var& b) {
    same_shape("sub", a, b);
    return g.record(a->value - b->value, "sub", any_grad({&a, &b}), [a, b](Node& n) {
        if (a->needs_grad) {
            a->accumulate(n.grad);
        }
        if (b->needs_grad) {
            b->accumulate(-n.grad);
        }
    });
}

Var mul(Graph& g, const Var& a, const Var& b) {
    same_shape("mul", a, b);
    return g.record(a->value.cwiseProduct(b->value), "mul", any_grad({&a, &b}), [a, b](Node& n) {
        if (a->needs_grad) {
            a->accumulate(n.grad.cwiseProduct(b->value));
        }
        if (b->needs_grad) {
            b->accumulate(n.grad.cwiseProduct(a->value));
        }
    });
}

Var add_row(Graph& g, const Var& a, const Var& row) {
    if (row->value.rows() != 1 || row->value.cols() != a->value.cols()) {
        throw ShapeError("add_row", "row " + shape(row->value) + " does not broadcast over " + shape(a->value));
    }
    Mat out = a->value;
    out.rowwise() += row->value.row(0);
    return g.record(std::move(out), "add_row", any_grad({&a, &row}), [a, row](Node& n) {
        if (a->needs_grad) {
            a->accumulate(n.grad);
        }
        if (row->needs_grad) {
            row->accumulate(n.grad.colwise().sum());
        }
    });
}

Var scale(Graph& g, const Var& a, double s) {
    return g.record(a->value * s, "scale", a->needs_grad, [a, s](Node& n) { a->accumulate(n.grad * s); });
}

Var gelu(Graph& g, const Var& a) {
    Mat out = a->value.unaryExpr([](double x) { return gelu_scalar(x); });
    return g.record(std::move(out), "gelu", a->needs_grad, [a](Node& n) {
        Mat d = a->value.unaryExpr([](double x) {
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        });
        a->accumulate(n.grad.cwiseProduct(d));
    });
}

Var tanh(Graph& g, const Var& a) {
    Mat out = a->value.array().tanh().matrix();
    return g.record(out, "tanh", a->needs_grad, [a, out](Node& n) {
        a->accumulate(n.grad.cwiseProduct((1.0 - out.array().square()).matrix()));
    });
}

Var relu(Graph& g, const Var& a) {
    Mat out = a->value.cwiseMax(0.0);
    return g.record(std::move(out), "relu", a->needs_grad, [a](Node& n) {
        a->accumulate((a->value.array() > 0.0).select(n.grad, 0.0).matrix());
    });
}

Var layernorm(Graph& g, const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto d = x->value.cols();
    if (gamma->value.rows() != 1 || gamma->value.cols() != d || beta->value.rows() != 1 || beta->value.cols() != d) {
        throw ShapeError("layernorm", "gain/bias must be 1x" + std::to_string(d));
    }
    const auto n_rows = x->value.rows();
    Mat xhat(n_rows, d);
    Eigen::VectorXd inv_std(n_rows);
    for (Eigen::Index r = 0; r < n_rows; ++r) {
        const double mean = x->value.row(r).mean();
        const double var = (x->value.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x->value.row(r).array() - mean) * inv_std(r);
    }
    Mat out = xhat.array().rowwise() * gamma->value.row(0).array();
    out.rowwise() += beta->value.row(0);
    return g.record(std::move(out), "layernorm", any_grad({&x, &gamma, &beta}),
                    [x, gamma, beta, xhat, inv_std](Node& n) {
                        if (gamma->needs_grad) {
                            gamma->accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
                        }
                        if (beta->needs_grad) {
                            beta->accumulate(n.grad.colwise().sum());
                        }
                        if (x->needs_grad) {
                            const double dd = static_cast<double>(xhat.cols());
                            Mat gx(xhat.rows(), xhat.cols());
                            for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                                const Eigen::RowVectorXd gh = n.grad.row(r).cwiseProduct(gamma->value.row(0));
                                const double m1 = gh.sum() / dd;
                                const double m2 = gh.dot(xhat.row(r)) / dd;
                                gx.row(r) = inv_std(r) * (gh.array() - m1 - xhat.row(r).array() * m2);
                            }
                            x->accumulate(gx);
                        }
                    });
}

Var softmax_rows(Graph& g, const Var& x) {
    Mat p = x->value;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
    }
    return g.record(p, "softmax", x->needs_grad, [x, p](Node& n) {
        Mat gx(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const double dot = n.grad.row(r).dot(p.row(r));
            gx.row(r) = p.row(r).array() * (n.grad.row(r).array() - dot);
        }
        x->accumulate(gx);
    });
}

Var log_softmax_rows(Graph& g, const Var& x) {
    Mat out = x->value;
    Mat p(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double mx = out.row(r).maxCoeff();
        const double lse = mx + std::log((out.row(r).array() - mx).exp().sum());
        out.row(r).array() -= lse;
        p.row(r) = out.row(r).array().exp();
    }
    return g.record(std::move(out), "log_softmax", x->needs_grad, [x, p](Node& n) {
        Mat gx(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            gx.row(r) = n.grad.row(r).array() - p.row(r).array() * n.grad.row(r).sum();
        }
        x->accumulate(gx);
    });
}

Var embedding(Graph& g, const Var& table, const std::vector<int>& ids) {
    const auto rows = table->value.rows();
    Mat out(static_cast<Eigen::Index>(ids.size()), table->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= rows) {
            throw ShapeError("embedding", "id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                              std::to_string(rows));
        }
        out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
    }
    return g.record(std::move(out), "embedding", table->needs_grad, [table, ids](Node& n) {
        Mat gt = Mat::Zero(table->value.rows(), table->value.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            gt.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        }
        table->accumulate(gt);
    });
}

Var dropout(Graph& g, const Var& x, double p, bool training, Rng& rng) {
    if (!training || p <= 0.0) {
        return x;
    }
    if (p >= 1.0) {
        throw ParameterError("dropout probability must be < 1");
    }
    std::bernoulli_distribution keep(1.0 - p);
    Mat mask(x->value.rows(), x->value.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
    }
    return g.record(x->value.cwiseProduct(mask), "dropout", x->needs_grad,
                    [x, mask](Node& n) { x->accumulate(n.grad.cwiseProduct(mask)); });
}

Var concat_cols(Graph& g, const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols", "no operands");
    }
    const auto rows = parts[0]->value.rows();
    Eigen::Index cols = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p->value.rows() != rows) {
            throw ShapeError("concat_cols", "row counts differ");
        }
        cols += p->value.cols();
        needs = needs || p->needs_grad;
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return g.record(std::move(out), "concat_cols", needs, [parts](Node& n) {
        Eigen::Index c0 = 0;
        for (const auto& p : parts) {
            if (p->needs_grad) {
                p->accumulate(n.grad.middleCols(c0, p->value.cols()));
            }
            c0 += p->value.cols();
        }
    });
}

Var slice_cols(Graph& g, const Var& a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a->value.cols()) {
        throw ShapeError("slice_cols", "columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                           ") outside " + shape(a->value));
    }
    return g.record(a->value.middleCols(start, count), "slice_cols", a->needs_grad, [a, start, count](Node& n) {
        Mat ga = Mat::Zero(a->value.rows(), a->value.cols());
        ga.middleCols(start, count) = n.grad;
        a->accumulate(ga);
    });
}

Var pick(Graph& g, const Var& a, const std::vector<int>& idx) {
    if (static_cast<Eigen::Index>(idx.size()) != a->value.rows()) {
        throw ShapeError("pick", "need one index per row");
    }
    Mat out(a->value.rows(), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= a->value.cols()) {
            throw ShapeError("pick", "column index out of range");
        }
        out(static_cast<Eigen::Index>(r), 0) = a->value(static_cast<Eigen::Index>(r), idx[r]);
    }
    return g.record(std::move(out), "pick", a->needs_grad, [a, idx](Node& n) {
        Mat ga = Mat::Zero(a->value.rows(), a->value.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            ga(static_cast<Eigen::Index>(r), idx[r]) = n.grad(static_cast<Eigen::Index>(r), 0);
        }
        a->accumulate(ga);
    });
}

Var row_sum(Graph& g, const Var& a) {
    return g.record(a->value.rowwise().sum(), "row_sum", a->needs_grad, [a](Node& n) {
        Mat ga = n.grad.col(0).replicate(1, a->value.cols());
        a->accumulate(ga);
    });
}

Var sum_all(Graph& g, const Var& a) {
    Mat out(1, 1);
    out(0, 0) = a->value.sum();
    return g.record(std::move(out), "sum_all", a->needs_grad, [a](Node& n) {
        a->accumulate(Mat::Constant(a->value.rows(), a->value.cols(), n.grad(0, 0)));
    });
}

Var mean_all(Graph& g, const Var& a) {
    if (a->value.size() == 0) {
        throw ShapeError("mean_all", "empty operand");
    }
    return scale(g, sum_all(g, a), 1.0 / static_cast<double>(a->value.size()));
}

Var detach(Graph& g, const Var& a) { return g.constant(a->value); }

Var causal_attention(Graph& g, const Var& q, const Var& k, const Var& v, const std::vector<Segment>& segments,
                     int n_heads, double p_attn, bool training, Rng* rng) {
    same_shape("causal_attention", q, k);
    same_shape("causal_attention", q, v);
    const auto n = q->value.rows();
    const auto d = q->value.cols();
    if (n_heads < 1 || d % n_heads != 0) {
        throw ShapeError("causal_attention", "width " + std::to_string(d) + " not divisible by " +
                                                 std::to_string(n_heads) + " heads");
    }
    Eigen::Index covered = 0;
    for (const auto& s : segments) {
        if (s.start != covered || s.length < 1) {
            throw ShapeError("causal_attention", "segments must tile the rows in order");
        }
        covered += s.length;
    }
    if (covered != n) {
        throw ShapeError("causal_attention", "segments cover " + std::to_string(covered) + " of " +
                                                 std::to_string(n) + " rows");
    }
    const bool drop = training && p_attn > 0.0;
    if (drop && rng == nullptr) {
        throw ParameterError("attention dropout needs an RNG");
    }
    const int dh = static_cast<int>(d / n_heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    // Saved per (segment, head): softmax probabilities and dropout masks.
    auto probs = std::make_shared<std::vector<Mat>>();
    auto masks = std::make_shared<std::vector<Mat>>();
    Mat out = Mat::Zero(n, d);
    std::bernoulli_distribution keep(1.0 - (drop ? p_attn : 0.0));
    for (const auto& s : segments) {
        for (int h = 0; h < n_heads; ++h) {
            Mat p = Mat::Zero(s.length, s.length);
            Mat mask;
            if (drop) {
                mask.resize(s.length, s.length);
                for (Eigen::Index i = 0; i < mask.size(); ++i) {
                    mask.data()[i] = keep(*rng) ? 1.0 / (1.0 - p_attn) : 0.0;
                }
            }
            for (int i0 = 0; i0 < s.length; i0 += kBlock) {
                const int rows = std::min(kBlock, s.length - i0);
                const int keys = i0 + rows;
                const auto qb = q->value.block(s.start + i0, h * dh, rows, dh);
                const auto kh = k->value.block(s.start, h * dh, keys, dh);
                const auto vh = v->value.block(s.start, h * dh, keys, dh);
                Mat scores;
                scores.noalias() = qb * kh.transpose();
                for (int r = 0; r < rows; ++r) {
                    const int i = i0 + r;
                    const double mx = scores.row(r).head(i + 1).maxCoeff();
                    double z = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        p(i, j) = std::exp((scores(r, j) - mx) * inv);
                        z += p(i, j);
                    }
                    p.row(i).head(i + 1) /= z;
                }
                auto pb = p.block(i0, 0, rows, keys);
                if (drop) {
                    out.block(s.start + i0, h * dh, rows, dh).noalias() =
                        Mat(pb.cwiseProduct(mask.block(i0, 0, rows, keys))) * vh;
                } else {
                    out.block(s.start + i0, h * dh, rows, dh).noalias() = pb * vh;
                }
            }
            probs->push_back(std::move(p));
            if (drop) {
                masks->push_back(std::move(mask));
            }
        }
    }
    return g.record(std::move(out), "causal_attention", any_grad({&q, &k, &v}),
                    [q, k, v, segments, n_heads, dh, inv, probs, masks, drop](Node& node) {
                        Mat gq = Mat::Zero(q->value.rows(), q->value.cols());
                        Mat gk = Mat::Zero(q->value.rows(), q->value.cols());
                        Mat gv = Mat::Zero(q->value.rows(), q->value.cols());
                        std::size_t idx = 0;
                        for (const auto& s : segments) {
                            for (int h = 0; h < n_heads; ++h, ++idx) {
                                const Mat& p = (*probs)[idx];
                                for (int i0 = 0; i0 < s.length; i0 += kBlock) {
                                    const int rows = std::min(kBlock, s.length - i0);
                                    const int keys = i0 + rows;
                                    const auto qb = q->value.block(s.start + i0, h * dh, rows, dh);
                                    const auto kh = k->value.block(s.start, h * dh, keys, dh);
                                    const auto vh = v->value.block(s.start, h * dh, keys, dh);
                                    const auto go = node.grad.block(s.start + i0, h * dh, rows, dh);
                                    const auto pb = p.block(i0, 0, rows, keys);
                                    Mat gp;
                                    gp.noalias() = go * vh.transpose();
                                    if (drop) {
                                        const auto mb = (*masks)[idx].block(i0, 0, rows, keys);
                                        gv.block(s.start, h * dh, keys, dh).noalias() +=
                                            Mat(pb.cwiseProduct(mb)).transpose() * go;
                                        gp = gp.cwiseProduct(mb);
                                    } else {
                                        gv.block(s.start, h * dh, keys, dh).noalias() += pb.transpose() * go;
                                    }
                                    Mat gs(rows, keys);
                                    for (int r = 0; r < rows; ++r) {
                                        const double dot = gp.row(r).dot(pb.row(r));
                                        gs.row(r) = pb.row(r).array() * (gp.row(r).array() - dot);
                                    }
                                    gs *= inv;
                                    gq.block(s.start + i0, h * dh, rows, dh).noalias() += gs * kh;
                                    gk.block(s.start, h * dh, keys, dh).noalias() += gs.transpose() * qb;
                                }
                            }
                        }
                        if (q->needs_grad) {
                            q->accumulate(gq);
                        }
                        if (k->needs_grad) {
                            k->accumulate(gk);
                        }
                        if (v->needs_grad) {
                            v->accumulate(gv);
                        }
                    });
}

Var cross_entropy(Graph& g, const Var& logits, const std::vector<int>& targets, const std::vector<double>& weights) {
    const auto n = logits->value.rows();
    if (static_cast<Eigen::Index>(targets.size()) != n || (!weights.empty() && weights.size() != targets.size())) {
        throw ShapeError("cross_entropy", "need one target (and weight) per row");
    }
    Mat p(n, logits->value.cols());
    double total = 0.0;
    double wsum = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= logits->value.cols()) {
            throw ShapeError("cross_entropy", "target out of range");
        }
        const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
        const double mx = logits->value.row(r).maxCoeff();
        p.row(r) = (logits->value.row(r).array() - mx).exp();
        const double z = p.row(r).sum();
        p.row(r) /= z;
        total += w * (mx + std::log(z) - logits->value(r, t));
        wsum += w;
    }
    if (!(wsum > 0.0)) {
        throw ShapeError("cross_entropy", "total weight is zero");
    }
    Mat out(1, 1);
    out(0, 0) = total / wsum;
    return g.record(std::move(out), "cross_entropy", logits->needs_grad, [logits, targets, weights, p, wsum](Node& n) {
        Mat gl = p;
        for (Eigen::Index r = 0; r < gl.rows(); ++r) {
            const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
            gl(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
            gl.row(r) *= w * n.grad(0, 0) / wsum;
        }
        logits->accumulate(gl);
    });
}

Var mse(Graph& g, const Var& a, const Mat& target) {
    if (a->value.rows() != target.rows() || a->value.cols() != target.cols()) {
        throw ShapeError("mse", "prediction " + shape(a->value) + " vs target " + shape(target));
    }
    if (a->value.size() == 0) {
        throw ShapeError("mse", "empty operand");
    }
    const Mat diff = a->value - target;
    Mat out(1, 1);
    const double inv_n = 1.0 / static_cast<double>(diff.size());
    out(0, 0) = diff.squaredNorm() * inv_n;
    return g.record(std::move(out), "mse", a->needs_grad,
                    [a, diff, inv_n](Node& n) { a->accumulate(diff * (2.0 * inv_n * n.grad(0, 0))); });
}

}  // namespace eppo::nn
