#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "eppo/cmdp.hpp"
#include "eppo/taskgen.hpp"

namespace eppo::sl {

using json = nlohmann::json;

enum class Phase { early = 0, middle = 1, expert = 2 };

/// Thirds of the episode index range.
Phase phase_of(std::size_t episode, std::size_t n_episodes);

/// One learning history on a single task: episodes in the order the
/// source produced them, with realized return-/cost-to-go per step.
struct SLTrajectory {
    cmdp::TaskSpec task{3, {0, 0}, {}, 1};
    std::int64_t task_id = 0;
    double cost_limit = 0.0;
    std::vector<cmdp::Episode> episodes;
    std::vector<std::vector<cmdp::ToGo>> to_go;

    std::size_t n_steps() const;
    /// Recomputes to_go from rewards and costs.
    void annotate();
    /// Throws DataError unless to_go is present and telescopes.
    void validate() const;
};

struct SLDataset {
    std::vector<SLTrajectory> trajectories;
    json source;

    std::size_t n_steps() const;
};

/// Mean over trajectories of (mean return of episodes after the first
/// 10%) minus (mean return of the first 10%, at least one episode).
/// Positive when the histories show improvement.
double learning_signal(const SLDataset& ds);

/// Interface the dataset generator drives. act() may draw from the rng.
class SourceLearner {
public:
    virtual ~SourceLearner() = default;
    virtual void init(const cmdp::TaskSpec& task) = 0;
    virtual cmdp::Action act(cmdp::GridPos state, Rng& rng) = 0;
    virtual void observe(const cmdp::Transition& t) = 0;
    virtual void end_episode(const cmdp::Episode& e) = 0;
};

struct QLearnerConfig {
    double cost_limit = 0.0;
    double lr = 0.5;
    double gamma = 0.95;
    /// Optimistic initial reward value; drives systematic exploration.
    double q_init = 1.0;
    double eps_start = 0.2;
    double eps_end = 0.02;
    /// Multiplicative decay per episode.
    double eps_decay = 0.8;
    double lambda_lr = 0.5;
    double lambda_max = 50.0;

    json to_json() const;
    static QLearnerConfig from_json(const json& j);
};

/// Tabular Q-learning on rewards and costs with a Lagrange multiplier on
/// episode cost. Acts epsilon-greedily on Q - lambda Qc, ties to the lowest
/// action index; the multiplier ascends on episode cost minus the limit.
class LagrangianQLearner : public SourceLearner {
public:
    explicit LagrangianQLearner(QLearnerConfig cfg);

    void init(const cmdp::TaskSpec& task) override;
    cmdp::Action act(cmdp::GridPos state, Rng& rng) override;
    void observe(const cmdp::Transition& t) override;
    void end_episode(const cmdp::Episode& e) override;

    double lambda() const { return lambda_; }
    double epsilon() const { return eps_; }
    double q(int cell, int a) const { return q_[idx(cell, a)]; }
    double qc(int cell, int a) const { return qc_[idx(cell, a)]; }

private:
    std::size_t idx(int cell, int a) const { return static_cast<std::size_t>(cell * cmdp::kNumActions + a); }
    int greedy(int cell) const;

    QLearnerConfig cfg_;
    int grid_ = 0;
    std::vector<double> q_;
    std::vector<double> qc_;
    double lambda_ = 0.0;
    double eps_ = 0.0;
};

using LearnerFactory = std::function<std::unique_ptr<SourceLearner>(double cost_limit)>;

struct GenerationConfig {
    int grid_size = 9;
    double alpha = 0.5;
    int n_obstacles = 25;
    int time_limit = 30;
    int episodes_per_task = 50;
    std::vector<double> cost_limits{0.0, 2.5, 5.0};
    std::size_t steps_per_limit = 50'000;
    QLearnerConfig learner{};

    void validate() const;
    json to_json() const;
    static GenerationConfig from_json(const json& j);
};

/// For every cost limit, runs fresh learners on center-oriented tasks until
/// steps_per_limit transitions are logged (the last history is cut at an
/// episode end). Limits run on separate threads with derived RNG streams;
/// output order is by limit, then generation order.
SLDataset generate_dataset(const LearnerFactory& make_learner, const GenerationConfig& cfg, std::uint64_t seed);

/// Same with LagrangianQLearner built from cfg.learner.
SLDataset generate_dataset(const GenerationConfig& cfg, std::uint64_t seed);

/// Per-episode exploration rate for the artificial histories.
using EpsilonSchedule = std::function<double(int episode, int n_episodes)>;

/// 1 at the first episode to 0 at the last.
EpsilonSchedule linear_epsilon();

/// Time-indexed action probabilities for a task; rows are (t, cell).
using TaskPolicy = std::function<std::vector<double>(int t, cmdp::GridPos s)>;

/// Optimal policy for a task under a cost limit from the exact oracle. When
/// the limit is infeasible, the minimum-cost policy is returned instead.
TaskPolicy optimal_policy(const cmdp::TaskSpec& task, double cost_limit);

/// Artificial learning histories: episode k follows the optimal policy with
/// probability 1 - eps_k per step and a uniform action otherwise. Same task
/// sampling and step budget as generate_dataset.
SLDataset ad_eps_dataset(const GenerationConfig& cfg, const EpsilonSchedule& schedule, std::uint64_t seed);

/// One history on a fixed task with a given policy and schedule.
SLTrajectory perturbed_history(const cmdp::TaskSpec& task, const TaskPolicy& policy, const EpsilonSchedule& schedule,
                               int n_episodes, Rng& rng);

/// Directory of traj_NNNNN.ndjson files plus manifest.json.
void write_dataset(const SLDataset& ds, const std::filesystem::path& dir);
/// Validates every trajectory's annotations. Throws DataError.
SLDataset read_dataset(const std::filesystem::path& dir);

}  // namespace eppo::sl
