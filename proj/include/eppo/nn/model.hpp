#pragma once

#include <cstdint>
#include <map>
#include <json.hpp>
#include <string>
#include <vector>

#include "eppo/nn/tensor.hpp"

namespace eppo::nn {

using json = nlohmann::json;

/// Input id outside the embedding vocabulary.
class EncodingError : public DataError {
public:
    using DataError::DataError;
};

/// Sequence longer than the model context. Never truncated silently.
class TruncationError : public SizeError {
public:
    using SizeError::SizeError;
};

struct ModelSpec {
    int embedding_dim = 64;
    int hidden_dim = 64;
    int n_layers = 4;
    int n_heads = 8;
    int max_seq_len = 1500;
    double dropout_attn = 0.0;
    double dropout_resid = 0.0;
    double dropout_emb = 0.05;
    int n_states = 81;
    int n_actions = 5;
    /// Adds a return-to-go scalar to every token.
    bool rtg_channel = false;
    /// Reward and cost Q heads on top of the shared encoder.
    bool critic_heads = true;
    /// CTG is divided by this before entering the network.
    double ctg_scale = 10.0;

    int n_scalars() const { return rtg_channel ? 5 : 4; }
    void validate() const;
    json to_json() const;
    static ModelSpec from_json(const json& j);
};

/// One token: the observation at step t together with what happened on the
/// step before it. prev_* fields are -1 / 0 on the first token of a window.
struct StepInput {
    int state = 0;
    int prev_action = -1;
    /// Cell the previous step moved into (differs from `state` across resets).
    int prev_arrival = -1;
    double prev_reward = 0.0;
    double prev_cost = 0.0;
    double ctg = 0.0;
    double rtg = 0.0;
    bool episode_start = false;
};

/// Several sequences packed row-wise.
struct Batch {
    std::vector<StepInput> steps;
    std::vector<Segment> segments;

    void append_sequence(const std::vector<StepInput>& seq);
};

struct Outputs {
    Var hidden;
    Var logits;
    /// n x n_actions; null when the model has no critic heads.
    Var q;
    Var qc;
};

class SequenceModel {
public:
    SequenceModel(const ModelSpec& spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    const Mat& value(const std::string& name) const;

    /// Throws TruncationError when a segment exceeds max_seq_len and
    /// EncodingError for out-of-vocabulary ids. `rng` drives dropout and
    /// is required only when training with nonzero dropout.
    Outputs forward(Graph& g, const Batch& batch, bool training, Rng* rng) const;

    /// Token embedding before positions are added (n x embedding_dim).
    Var encode(Graph& g, const std::vector<StepInput>& steps) const;

    void zero_grad();
    /// Frozen parameters record no graph nodes.
    void set_trainable(bool trainable);
    void copy_from(const SequenceModel& other);
    /// theta <- (1 - tau) theta + tau other.
    void polyak_from(const SequenceModel& other, double tau);
    /// FNV-1a over parameter names and raw values.
    std::uint64_t checksum() const;
    std::size_t n_parameters() const;

private:
    friend class InferenceSession;

    Var p(const std::string& name) const;
    Var critic(Graph& g, const std::string& head, const Var& hidden) const;
    void add_param(const std::string& name, int rows, int cols, double bound, Rng& rng);
    void add_const(const std::string& name, int rows, int cols, double v);

    ModelSpec spec_;
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

struct StepOutput {
    Eigen::VectorXd logits;
    Eigen::VectorXd q;
    Eigen::VectorXd qc;
};

/// Incremental evaluation with cached keys and values; matches forward() in
/// eval mode token by token. Holds a reference to the model.
class InferenceSession {
public:
    explicit InferenceSession(const SequenceModel& model);

    StepOutput push(const StepInput& token);
    void clear();
    int length() const { return len_; }

private:
    const SequenceModel& m_;
    std::vector<Mat> k_;
    std::vector<Mat> v_;
    int len_ = 0;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// FNV-1a 64 over a byte range, chained from `h`.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace eppo::nn
