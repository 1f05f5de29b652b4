#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "eppo/cmdp.hpp"
#include "eppo/nn/checkpoint.hpp"
#include "eppo/nn/model.hpp"
#include "eppo/nn/optim.hpp"
#include "eppo/taskgen.hpp"

namespace eppo::rl {

using json = nlohmann::json;

/// Which budget the violation indicator and the multiplier gap compare
/// episode costs against.
enum class Threshold {
    /// The fixed config delta for every history.
    fixed,
    /// The CTG sampled for the history.
    ctg,
};

struct TrainConfig {
    double gamma = 0.99;
    double delta = 5.0;
    int T_max = 30'000;
    int batch_size = 32;
    int t_max = 30;
    int K_min = 50;
    int K_max = 50;
    double ctg_min = 1.0;
    double ctg_max = 15.0;
    double eta = 0.05;
    double lambda_cap = 100.0;
    double tau = 0.005;
    /// Capacity in transitions; whole histories are evicted oldest first.
    std::size_t buffer_capacity = 100'000;
    std::uint64_t seed = 0;
    int grid_size = 9;
    double alpha = 0.5;
    int n_obstacles = 25;
    Threshold threshold = Threshold::fixed;
    /// Adds entropy_coef * H(pi) to the actor objective; 0 disables.
    double entropy_coef = 0.0;
    nn::AdamConfig adam{};
    nn::ModelSpec model = default_model();
    /// 0 disables periodic checkpoints.
    int checkpoint_every = 0;
    std::string out_dir;

    static nn::ModelSpec default_model();
    void validate() const;
    json to_json() const;
    /// Missing keys keep the defaults above. Throws DataError on bad types
    /// and ParameterError on invalid values.
    static TrainConfig from_json(const json& j);
};

/// One multi-episode history on a single task with a single sampled CTG.
struct HistoryRecord {
    cmdp::TaskSpec task;
    std::int64_t task_id = 0;
    double ctg = 0.0;
    std::vector<cmdp::Episode> episodes;

    std::size_t n_transitions() const;
    /// max over episodes of (total cost - threshold).
    double max_gap(double threshold) const;
    double mean_return() const;
    double mean_cost() const;
};

/// FIFO over histories bounded by the total transition count.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    /// Evicts oldest histories until the new one fits. Throws
    /// ParameterError when a single history exceeds the capacity.
    void push(HistoryRecord h);
    /// Uniform with replacement. Throws PreconditionError when empty.
    std::vector<const HistoryRecord*> sample(std::size_t n, Rng& rng) const;

    std::size_t size() const { return histories_.size(); }
    std::size_t transitions() const { return transitions_; }
    std::size_t capacity() const { return capacity_; }
    const std::deque<HistoryRecord>& histories() const { return histories_; }

private:
    std::size_t capacity_;
    std::size_t transitions_ = 0;
    std::deque<HistoryRecord> histories_;
};

/// Runs K episodes of one sampled task with actions sampled from the actor,
/// keeping the context across episodes and resetting CTG per episode.
HistoryRecord collect_history(const taskgen::SpawnDistribution& dist, const nn::SequenceModel& actor,
                              const TrainConfig& cfg, Rng& rng);

/// Same with the task and CTG fixed by the caller.
HistoryRecord run_history(const cmdp::TaskSpec& task, double ctg, int K, const nn::SequenceModel& actor, Rng& rng);

/// Packed model inputs and per-token training targets for a set of
/// histories.
struct TrainingBatch {
    nn::Batch batch;
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<double> costs;
    std::vector<bool> done;
    /// 1 if the token's episode violates its threshold.
    std::vector<double> violation;
    /// Per-history max episode gap.
    std::vector<double> gaps;
};

TrainingBatch make_batch(const std::vector<const HistoryRecord*>& histories, const TrainConfig& cfg);

double threshold_for(const HistoryRecord& h, const TrainConfig& cfg);

struct CriticLosses {
    nn::Var loss_v;
    nn::Var loss_c;
    /// TD targets, for inspection.
    Eigen::VectorXd y_v;
    Eigen::VectorXd y_c;
};

/// One-step TD losses. Successor actions are drawn from the target actor's
/// distribution at the next token; terminal steps bootstrap from zero.
CriticLosses critic_losses(nn::Graph& g, const TrainingBatch& tb, const nn::Outputs& online,
                           const nn::Outputs& target, double gamma, Rng& rng);

/// mean_t sum_a pi(a|h_t) [-Q(h_t,a) + lambda v_e Qc(h_t,a)] with both
/// critics held fixed, minus entropy_coef times the mean policy entropy.
nn::Var actor_loss(nn::Graph& g, const TrainingBatch& tb, const nn::Outputs& online, double lambda,
                   double entropy_coef = 0.0);

/// clamp([lambda + eta * mean(gaps)]_+, 0, cap).
double lambda_update(const std::vector<double>& gaps, double lambda, double eta, double cap);

struct MetricsRow {
    int step = 0;
    double mean_return = 0.0;
    double mean_cost = 0.0;
    double lambda = 0.0;
    double loss_v = 0.0;
    double loss_c = 0.0;
    double loss_p = 0.0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct TrainResult {
    nn::Checkpoint checkpoint;
    std::vector<MetricsRow> metrics;
    bool aborted = false;
    std::string abort_reason;
};

/// Callback invoked after every step; returning false stops training.
using StepHook = std::function<bool(const MetricsRow&)>;

/// Full training loop. On a non-finite loss or gradient training stops and
/// the result holds the last good state with aborted = true. Periodic
/// checkpoints and metrics.csv go to cfg.out_dir when it is set.
TrainResult train(const TrainConfig& cfg, const StepHook& hook = {});

/// Actor with the trained online weights from a training checkpoint.
nn::SequenceModel actor_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace eppo::rl
