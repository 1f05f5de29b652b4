#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "eppo/common.hpp"

namespace eppo::cmdp {

using json = nlohmann::json;

enum class Action : int { up = 0, down = 1, left = 2, right = 3, stay = 4 };

inline constexpr int kNumActions = 5;

Action action_from_index(int index);
std::string_view action_name(Action a);

struct GridPos {
    int row = 0;
    int col = 0;

    auto operator<=>(const GridPos&) const = default;
};

/// Cell the agent spawns in; for even sizes this is the lower-index cell
/// adjacent to the geometric center.
GridPos map_center(int grid_size);

/// Moves one cell in the action direction, clamped at the boundary.
GridPos apply_action(GridPos pos, Action a, int grid_size);

/// A concrete SafeDarkRoom instance. Obstacles are stored sorted and unique.
class TaskSpec {
public:
    /// Start is always the map center. Throws ParameterError when the goal
    /// coincides with the start or an obstacle, a cell is off-grid, the
    /// start holds an obstacle, or time_limit < 1.
    TaskSpec(int grid_size, GridPos goal, std::vector<GridPos> obstacles, int time_limit);

    int grid_size() const { return grid_size_; }
    GridPos start() const { return start_; }
    GridPos goal() const { return goal_; }
    const std::vector<GridPos>& obstacles() const { return obstacles_; }
    int time_limit() const { return time_limit_; }

    bool in_grid(GridPos p) const;
    bool is_obstacle(GridPos p) const;
    int n_cells() const { return grid_size_ * grid_size_; }
    int cell_index(GridPos p) const { return p.row * grid_size_ + p.col; }
    GridPos cell_at(int index) const { return {index / grid_size_, index % grid_size_}; }

    json to_json() const;
    static TaskSpec from_json(const json& j);

    bool operator==(const TaskSpec&) const = default;

private:
    int grid_size_;
    GridPos start_;
    GridPos goal_;
    std::vector<GridPos> obstacles_;
    int time_limit_;
};

struct StepResult {
    GridPos observation;
    double reward = 0.0;
    double cost = 0.0;
    bool done = false;
};

/// Grid-world CMDP simulator. Not safe for concurrent stepping; distinct
/// instances share nothing.
class SafeDarkRoom {
public:
    explicit SafeDarkRoom(TaskSpec task);

    GridPos reset();
    /// Throws PreconditionError if the episode already finished.
    StepResult step(Action a);

    bool done() const { return done_; }
    int steps() const { return steps_; }
    GridPos position() const { return pos_; }
    const TaskSpec& task() const { return task_; }

private:
    TaskSpec task_;
    GridPos pos_;
    int steps_ = 0;
    bool done_ = false;
};

struct Transition {
    GridPos state;
    Action action = Action::stay;
    double reward = 0.0;
    double cost = 0.0;
    GridPos next_state;
    bool done = false;
    /// Remaining cost budget at the time the action was taken.
    double ctg = 0.0;
};

struct Episode {
    std::vector<Transition> transitions;
    std::int64_t task_id = 0;

    std::size_t size() const { return transitions.size(); }
    bool empty() const { return transitions.empty(); }
};

struct EpisodeTotals {
    double ret = 0.0;
    double cost = 0.0;
};

EpisodeTotals episode_totals(const Episode& e);

struct ToGo {
    double rtg = 0.0;
    double ctg = 0.0;
};

/// Realized return- and cost-to-go at step t: the sums of rewards and costs
/// of transitions t, t+1, ..., so that rtg(t) = r_t + rtg(t+1).
/// Throws std::out_of_range when t >= e.size().
ToGo to_go(const Episode& e, std::size_t t);

/// All suffix sums at once (same convention as to_go).
std::vector<ToGo> to_go_all(const Episode& e);

/// Multi-episode context: completed episodes in order plus the partial
/// current one. Total transitions never exceed max_transitions.
class History {
public:
    explicit History(std::size_t max_transitions);

    /// Throws PreconditionError when the history is full.
    void append(const Transition& t);
    /// Moves the current episode (if non-empty) into the completed list.
    void end_episode();
    /// Drops oldest completed episodes until `extra` more transitions fit.
    /// Returns the number of episodes dropped. Throws PreconditionError if
    /// the current episode alone leaves no room.
    std::size_t make_room(std::size_t extra);

    const std::vector<Episode>& episodes() const { return episodes_; }
    const Episode& current() const { return current_; }
    Episode& current() { return current_; }
    std::size_t size() const { return count_; }
    std::size_t max_transitions() const { return max_transitions_; }
    bool full() const { return count_ >= max_transitions_; }

private:
    std::size_t max_transitions_;
    std::size_t count_ = 0;
    std::vector<Episode> episodes_;
    Episode current_;
};

json transition_to_json(const Transition& t);
Transition transition_from_json(const json& j);

/// Newline-delimited JSON, one record per transition, tagged with the
/// task id and episode index.
void write_episode_log(std::ostream& out, const std::vector<Episode>& episodes);
std::vector<Episode> read_episode_log(std::istream& in);

}  // namespace eppo::cmdp
