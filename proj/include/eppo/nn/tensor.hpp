#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eppo/common.hpp"

namespace eppo::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Shape mismatch in a graph op; the message starts with the op name.
struct ShapeError : std::invalid_argument {
    ShapeError(const std::string& op, const std::string& what) : std::invalid_argument(op + ": " + what) {}
};

struct Node {
    Mat value;
    /// Empty until some gradient reaches the node.
    Mat grad;
    std::string op;
    bool needs_grad = false;
    std::function<void(Node&)> backward;

    void accumulate(const Mat& g) {
        if (grad.size() == 0) {
            grad = g;
        } else {
            grad += g;
        }
    }
};

using Var = std::shared_ptr<Node>;

/// Trainable leaf that outlives any single graph.
struct Parameter {
    std::string name;
    Var var;
};

Var make_parameter(Mat value);

/// Records nodes in creation order; backward() replays them in reverse.
class Graph {
public:
    Var constant(Mat value);
    Var record(Mat value, std::string op, bool needs_grad, std::function<void(Node&)> backward);

    /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates.
    void backward(const Var& loss);

    std::size_t size() const { return tape_.size(); }

private:
    std::vector<Var> tape_;
};

/// Contiguous run of rows forming one sequence inside a packed batch.
struct Segment {
    int start = 0;
    int length = 0;
};

// Core ops. Every op throws ShapeError on incompatible inputs.
Var matmul(Graph& g, const Var& a, const Var& b);
/// x W + b with b a 1 x out row.
Var linear(Graph& g, const Var& x, const Var& w, const Var& b);
Var add(Graph& g, const Var& a, const Var& b);
Var sub(Graph& g, const Var& a, const Var& b);
Var mul(Graph& g, const Var& a, const Var& b);
/// Adds a 1 x m row to every row of a.
Var add_row(Graph& g, const Var& a, const Var& row);
Var scale(Graph& g, const Var& a, double s);
Var gelu(Graph& g, const Var& a);
Var tanh(Graph& g, const Var& a);
Var relu(Graph& g, const Var& a);
Var layernorm(Graph& g, const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(Graph& g, const Var& x);
Var log_softmax_rows(Graph& g, const Var& x);
/// Rows of `table` selected by ids.
Var embedding(Graph& g, const Var& table, const std::vector<int>& ids);
/// Inverted dropout; identity when !training or p == 0.
Var dropout(Graph& g, const Var& x, double p, bool training, Rng& rng);
Var concat_cols(Graph& g, const std::vector<Var>& parts);
Var slice_cols(Graph& g, const Var& a, int start, int count);
/// Row r, column idx[r] for every row (n x 1).
Var pick(Graph& g, const Var& a, const std::vector<int>& idx);
Var row_sum(Graph& g, const Var& a);
Var sum_all(Graph& g, const Var& a);
Var mean_all(Graph& g, const Var& a);
/// Gradient-free copy of the value.
Var detach(Graph& g, const Var& a);
/// Multi-head causal attention over each segment independently. q, k, v
/// are n x d with d divisible by n_heads; attention probabilities get
/// dropout p_attn when training.
Var causal_attention(Graph& g, const Var& q, const Var& k, const Var& v, const std::vector<Segment>& segments,
                     int n_heads, double p_attn = 0.0, bool training = false, Rng* rng = nullptr);
/// Mean over rows of -log softmax(logits)[target]. Rows with weight 0 are
/// skipped; the mean divides by the total weight.
Var cross_entropy(Graph& g, const Var& logits, const std::vector<int>& targets,
                  const std::vector<double>& weights = {});
/// Mean over all entries of (a - target)^2.
Var mse(Graph& g, const Var& a, const Mat& target);

/// Exact GELU, x * Phi(x).
double gelu_scalar(double x);

}  // namespace eppo::nn
