#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eppo/cmdp.hpp"
#include "eppo/nn/checkpoint.hpp"
#include "eppo/nn/model.hpp"
#include "eppo/taskgen.hpp"

namespace eppo::harness {

using json = nlohmann::json;

/// Raised when the policy parameters change during evaluation.
class FrozenParameterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Where the per-task CTG targets come from.
struct CtgPolicy {
    enum class Kind { fixed, uniform, sweep };
    Kind kind = Kind::uniform;
    /// fixed: one value; sweep: ascending list.
    std::vector<double> values;
    /// uniform: `count` draws from [lo, hi].
    double lo = 1.0;
    double hi = 15.0;
    int count = 100;

    static CtgPolicy fixed(double v);
    static CtgPolicy uniform(double lo, double hi, int count);
    static CtgPolicy sweep(std::vector<double> values);
    /// Throws ParameterError on an empty or unsorted sweep or a bad range.
    std::vector<double> resolve(Rng& rng) const;
    json to_json() const;
    static CtgPolicy from_json(const json& j);
};

/// Return-to-go targets for models with a return-to-go input.
struct RtgRule {
    enum class Kind { fixed, scaled };
    Kind kind = Kind::fixed;
    double value = 1.0;

    /// fixed: value; scaled: max(0.5, ctg / 10).
    double target(double ctg) const;
    json to_json() const;
    static RtgRule from_json(const json& j);
};

struct EvalProtocol {
    int n_tasks = 16;
    int K_eval = 50;
    CtgPolicy ctg{};
    /// Used only when the model reads return-to-go.
    RtgRule rtg{};
    int grid_size = 9;
    double alpha = 0.5;
    int n_obstacles = 25;
    int time_limit = 30;
    std::uint64_t seed = 0;
    /// Sample actions from the policy; true takes the argmax instead.
    bool greedy = false;
    /// 0 uses the hardware concurrency.
    int threads = 0;

    void validate() const;
    json to_json() const;
    static EvalProtocol from_json(const json& j);
    /// Edge-oriented evaluation suite for this protocol.
    taskgen::TaskSuite suite() const;
};

/// Defaults for models with a return-to-go input: RTG 1, CTG 0.
EvalProtocol supervised_protocol(EvalProtocol base);

struct EvalRecord {
    int task_index = 0;
    int ctg_index = 0;
    double ctg = 0.0;
    int k = 0;
    double ret = 0.0;
    double cost = 0.0;
    int steps = 0;
    bool goal_reached = false;
};

struct EvalResult {
    std::vector<EvalRecord> records;
    std::uint64_t checksum_before = 0;
    std::uint64_t checksum_after = 0;
    std::vector<double> ctg_values;
};

/// Rolls out K_eval episodes per (task, CTG) with a fresh context that
/// accumulates across episodes. CTG resets each episode and is decremented
/// by observed cost; RTG stays fixed within an episode. Records are sorted
/// by (task, CTG, k). Throws FrozenParameterError if the parameter checksum
/// changes.
EvalResult evaluate_icl(const nn::SequenceModel& model, const EvalProtocol& protocol);
EvalResult evaluate_icl(const nn::SequenceModel& model, const EvalProtocol& protocol,
                        const std::vector<cmdp::TaskSpec>& tasks);

/// Same rollouts with uniformly random actions.
std::vector<EvalRecord> uniform_baseline(const EvalProtocol& protocol, const std::vector<cmdp::TaskSpec>& tasks);

struct Stat {
    double mean = 0.0;
    double se = 0.0;
    int n = 0;
};

/// Sample mean and standard error (n - 1 denominator; 0 for n = 1).
/// Throws DataError on empty input.
Stat mean_se(const std::vector<double>& xs);

struct EpisodeRow {
    int k = 0;
    Stat ret;
    Stat cost;
};

struct CtgRow {
    double ctg = 0.0;
    /// Sum over episodes of the return.
    Stat total_return;
    /// Max over episodes of the cost.
    Stat max_cost;
};

struct Summary {
    std::vector<EpisodeRow> per_episode;
    std::vector<CtgRow> per_ctg;
    int n_tasks = 0;

    json to_json() const;
};

/// Task-level statistics: each task's values are first averaged over its
/// CTG rollouts, then mean and SE are taken across tasks. Throws DataError
/// on empty input.
Summary aggregate(const std::vector<EvalRecord>& records);

/// Task-level mean return and cost over episodes [first, first + count).
struct WindowStats {
    Stat ret;
    Stat cost;
};
WindowStats window_stats(const std::vector<EvalRecord>& records, int first, int count);

/// Episodes counted from the end: last `count` of K.
WindowStats last_window(const std::vector<EvalRecord>& records, int count);

/// Per-CTG totals over an ascending sweep. One row per sweep value.
std::vector<CtgRow> ctg_sweep(const nn::SequenceModel& model, const std::vector<double>& sweep, EvalProtocol protocol);

/// Rank correlation with average ranks for ties. Throws DataError when the
/// inputs differ in length or have fewer than two points.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// task_id is the task's index in the evaluation suite.
std::string records_csv(const std::vector<EvalRecord>& records);

/// Writes records.csv, summary.json and return/cost SVG charts to dir.
void write_artifacts(const EvalResult& result, const EvalProtocol& protocol, const std::filesystem::path& dir);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    /// Optional band half-widths, same length as y.
    std::vector<double> band;
};

/// Self-contained SVG line chart with optional mean +- SE bands.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

/// Parses a numeric CSV with a header row into named columns.
std::vector<std::pair<std::string, std::vector<double>>> read_csv_columns(const std::filesystem::path& path);

/// Loads the policy network from an RL or SL checkpoint.
nn::SequenceModel load_policy(const nn::Checkpoint& ckpt);

}  // namespace eppo::harness
