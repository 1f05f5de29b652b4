#include "eppo/cmdp.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace eppo::cmdp {

Action action_from_index(int index) {
    if (index < 0 || index >= kNumActions) {
        throw ParameterError("action index out of range: " + std::to_string(index));
    }
    return static_cast<Action>(index);
}

std::string_view action_name(Action a) {
    switch (a) {
        case Action::up: return "up";
        case Action::down: return "down";
        case Action::left: return "left";
        case Action::right: return "right";
        case Action::stay: return "stay";
    }
    return "?";
}

GridPos map_center(int grid_size) {
    return {(grid_size - 1) / 2, (grid_size - 1) / 2};
}

GridPos apply_action(GridPos pos, Action a, int grid_size) {
    switch (a) {
        case Action::up: pos.row -= 1; break;
        case Action::down: pos.row += 1; break;
        case Action::left: pos.col -= 1; break;
        case Action::right: pos.col += 1; break;
        case Action::stay: break;
    }
    pos.row = std::clamp(pos.row, 0, grid_size - 1);
    pos.col = std::clamp(pos.col, 0, grid_size - 1);
    return pos;
}

namespace {

std::string pos_str(GridPos p) {
    return "(" + std::to_string(p.row) + "," + std::to_string(p.col) + ")";
}

json pos_json(GridPos p) { return json::array({p.row, p.col}); }

GridPos pos_from(const json& j) {
    if (!j.is_array() || j.size() != 2) {
        throw DataError("grid position must be a [row, col] pair");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

TaskSpec::TaskSpec(int grid_size, GridPos goal, std::vector<GridPos> obstacles, int time_limit)
    : grid_size_(grid_size),
      start_(map_center(grid_size)),
      goal_(goal),
      obstacles_(std::move(obstacles)),
      time_limit_(time_limit) {
    if (grid_size_ < 1) {
        throw ParameterError("grid_size must be >= 1");
    }
    if (time_limit_ < 1) {
        throw ParameterError("time_limit must be >= 1");
    }
    std::sort(obstacles_.begin(), obstacles_.end());
    if (std::adjacent_find(obstacles_.begin(), obstacles_.end()) != obstacles_.end()) {
        throw ParameterError("duplicate obstacle cell");
    }
    if (!in_grid(goal_)) {
        throw ParameterError("goal off grid: " + pos_str(goal_));
    }
    for (const auto& o : obstacles_) {
        if (!in_grid(o)) {
            throw ParameterError("obstacle off grid: " + pos_str(o));
        }
    }
    if (goal_ == start_) {
        throw ParameterError("goal coincides with start");
    }
    if (is_obstacle(goal_)) {
        throw ParameterError("goal placed on an obstacle");
    }
    if (is_obstacle(start_)) {
        throw ParameterError("start placed on an obstacle");
    }
}

bool TaskSpec::in_grid(GridPos p) const {
    return p.row >= 0 && p.col >= 0 && p.row < grid_size_ && p.col < grid_size_;
}

bool TaskSpec::is_obstacle(GridPos p) const {
    return std::binary_search(obstacles_.begin(), obstacles_.end(), p);
}

json TaskSpec::to_json() const {
    json obs = json::array();
    for (const auto& o : obstacles_) {
        obs.push_back(pos_json(o));
    }
    return {{"grid_size", grid_size_},
            {"start", pos_json(start_)},
            {"goal", pos_json(goal_)},
            {"obstacles", obs},
            {"time_limit", time_limit_}};
}

TaskSpec TaskSpec::from_json(const json& j) {
    try {
        const int gs = j.at("grid_size").get<int>();
        std::vector<GridPos> obstacles;
        for (const auto& o : j.at("obstacles")) {
            obstacles.push_back(pos_from(o));
        }
        TaskSpec task(gs, pos_from(j.at("goal")), std::move(obstacles), j.at("time_limit").get<int>());
        if (j.contains("start") && pos_from(j.at("start")) != task.start()) {
            throw DataError("start must be the map center " + pos_str(task.start()));
        }
        return task;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed TaskSpec: ") + e.what());
    }
}

SafeDarkRoom::SafeDarkRoom(TaskSpec task) : task_(std::move(task)), pos_(task_.start()) {}

GridPos SafeDarkRoom::reset() {
    pos_ = task_.start();
    steps_ = 0;
    done_ = false;
    return pos_;
}

StepResult SafeDarkRoom::step(Action a) {
    if (done_) {
        throw PreconditionError("step called on a finished episode");
    }
    pos_ = apply_action(pos_, a, task_.grid_size());
    ++steps_;
    StepResult r;
    r.observation = pos_;
    r.cost = task_.is_obstacle(pos_) ? 1.0 : 0.0;
    if (pos_ == task_.goal()) {
        r.reward = 1.0;
        r.done = true;
    }
    if (steps_ >= task_.time_limit()) {
        r.done = true;
    }
    done_ = r.done;
    return r;
}

EpisodeTotals episode_totals(const Episode& e) {
    EpisodeTotals tot;
    for (const auto& t : e.transitions) {
        tot.ret += t.reward;
        tot.cost += t.cost;
    }
    return tot;
}

ToGo to_go(const Episode& e, std::size_t t) {
    if (t >= e.size()) {
        throw std::out_of_range("to_go: step " + std::to_string(t) + " outside episode of length " +
                                std::to_string(e.size()));
    }
    ToGo g;
    for (std::size_t i = t; i < e.size(); ++i) {
        g.rtg += e.transitions[i].reward;
        g.ctg += e.transitions[i].cost;
    }
    return g;
}

std::vector<ToGo> to_go_all(const Episode& e) {
    std::vector<ToGo> out(e.size());
    ToGo acc;
    for (std::size_t i = e.size(); i-- > 0;) {
        acc.rtg += e.transitions[i].reward;
        acc.ctg += e.transitions[i].cost;
        out[i] = acc;
    }
    return out;
}

History::History(std::size_t max_transitions) : max_transitions_(max_transitions) {
    if (max_transitions_ == 0) {
        throw ParameterError("History needs room for at least one transition");
    }
}

void History::append(const Transition& t) {
    if (count_ >= max_transitions_) {
        throw PreconditionError("History is full (" + std::to_string(max_transitions_) + " transitions)");
    }
    current_.transitions.push_back(t);
    ++count_;
}

void History::end_episode() {
    if (current_.empty()) {
        return;
    }
    const auto task_id = current_.task_id;
    episodes_.push_back(std::move(current_));
    current_ = Episode{};
    current_.task_id = task_id;
}

std::size_t History::make_room(std::size_t extra) {
    if (current_.size() + extra > max_transitions_) {
        throw PreconditionError("current episode alone exceeds the context capacity");
    }
    std::size_t dropped = 0;
    while (count_ + extra > max_transitions_) {
        count_ -= episodes_.front().size();
        episodes_.erase(episodes_.begin());
        ++dropped;
    }
    return dropped;
}

json transition_to_json(const Transition& t) {
    return {{"state", pos_json(t.state)},
            {"action", static_cast<int>(t.action)},
            {"reward", t.reward},
            {"cost", t.cost},
            {"next_state", pos_json(t.next_state)},
            {"done", t.done},
            {"ctg", t.ctg}};
}

Transition transition_from_json(const json& j) {
    try {
        Transition t;
        t.state = pos_from(j.at("state"));
        t.action = action_from_index(j.at("action").get<int>());
        t.reward = j.at("reward").get<double>();
        t.cost = j.at("cost").get<double>();
        t.next_state = pos_from(j.at("next_state"));
        t.done = j.at("done").get<bool>();
        t.ctg = j.value("ctg", 0.0);
        return t;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed transition record: ") + e.what());
    }
}

void write_episode_log(std::ostream& out, const std::vector<Episode>& episodes) {
    for (std::size_t k = 0; k < episodes.size(); ++k) {
        const auto& e = episodes[k];
        for (std::size_t t = 0; t < e.size(); ++t) {
            json rec = transition_to_json(e.transitions[t]);
            rec["task_id"] = e.task_id;
            rec["episode"] = k;
            rec["t"] = t;
            out << rec.dump() << '\n';
        }
    }
}

std::vector<Episode> read_episode_log(std::istream& in) {
    std::vector<Episode> out;
    std::string line;
    std::int64_t current_index = -1;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(std::string("bad episode log line: ") + e.what());
        }
        const auto index = rec.at("episode").get<std::int64_t>();
        if (index != current_index) {
            out.emplace_back();
            out.back().task_id = rec.value("task_id", std::int64_t{0});
            current_index = index;
        }
        out.back().transitions.push_back(transition_from_json(rec));
    }
    return out;
}

}  // namespace eppo::cmdp
