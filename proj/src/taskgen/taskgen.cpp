#include "eppo/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace eppo::taskgen {

std::string_view orientation_name(Orientation o) {
    return o == Orientation::center ? "center" : "edge";
}

Orientation orientation_from_name(std::string_view name) {
    if (name == "center") {
        return Orientation::center;
    }
    if (name == "edge") {
        return Orientation::edge;
    }
    throw ParameterError("unknown orientation: " + std::string(name));
}

SpawnDistribution build_distribution_from_d2(const std::vector<double>& squared_distances, double alpha,
                                             Orientation orientation) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ParameterError("alpha must be a positive finite number");
    }
    if (squared_distances.empty()) {
        throw ParameterError("distribution needs at least one cell");
    }
    const double sign = orientation == Orientation::center ? -1.0 : 1.0;
    SpawnDistribution dist;
    dist.alpha = alpha;
    dist.orientation = orientation;
    const std::size_t n = squared_distances.size();
    dist.log_probs.resize(n);
    double max_exp = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        dist.log_probs[i] = sign * alpha * squared_distances[i];
        max_exp = std::max(max_exp, dist.log_probs[i]);
    }
    double z = 0.0;
    for (double e : dist.log_probs) {
        z += std::exp(e - max_exp);
    }
    const double log_z = max_exp + std::log(z);
    dist.probs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist.log_probs[i] -= log_z;
        dist.probs[i] = std::exp(dist.log_probs[i]);
    }
    return dist;
}

SpawnDistribution build_distribution(int grid_size, double alpha, Orientation orientation) {
    if (grid_size < 2) {
        throw ParameterError("grid_size must be >= 2");
    }
    const double c = (grid_size - 1) / 2.0;
    std::vector<double> d2;
    d2.reserve(static_cast<std::size_t>(grid_size * grid_size));
    for (int i = 0; i < grid_size; ++i) {
        for (int j = 0; j < grid_size; ++j) {
            d2.push_back((i - c) * (i - c) + (j - c) * (j - c));
        }
    }
    auto dist = build_distribution_from_d2(d2, alpha, orientation);
    dist.grid_size = grid_size;
    return dist;
}

int draw_cell(const SpawnDistribution& dist, const std::vector<bool>& excluded, Rng& rng) {
    const std::size_t n = dist.n_cells();
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (!excluded[i]) {
            max_log = std::max(max_log, dist.log_probs[i]);
        }
    }
    if (!std::isfinite(max_log)) {
        throw ParameterError("draw_cell: every cell is excluded");
    }
    std::vector<double> weights(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!excluded[i]) {
            weights[i] = std::exp(dist.log_probs[i] - max_log);
        }
    }
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    return pick(rng);
}

TaskSpec sample_task(const SpawnDistribution& dist, int n_obstacles, int time_limit, Rng& rng) {
    const int gs = dist.grid_size;
    if (gs < 2) {
        throw ParameterError("sample_task needs a grid distribution");
    }
    if (n_obstacles < 0 || n_obstacles + 2 > gs * gs) {
        throw ParameterError("infeasible obstacle count " + std::to_string(n_obstacles) + " for a " +
                             std::to_string(gs) + "x" + std::to_string(gs) + " grid");
    }
    const GridPos start = cmdp::map_center(gs);
    std::vector<bool> excluded(dist.n_cells(), false);
    excluded[static_cast<std::size_t>(start.row * gs + start.col)] = true;
    std::vector<GridPos> obstacles;
    for (int k = 0; k < n_obstacles; ++k) {
        const int cell = draw_cell(dist, excluded, rng);
        excluded[static_cast<std::size_t>(cell)] = true;
        obstacles.push_back({cell / gs, cell % gs});
    }
    const int goal = draw_cell(dist, excluded, rng);
    return TaskSpec(gs, {goal / gs, goal % gs}, std::move(obstacles), time_limit);
}

namespace {

void check_compatible(const SpawnDistribution& p, const SpawnDistribution& q) {
    if (p.grid_size != q.grid_size || p.n_cells() != q.n_cells()) {
        throw ParameterError("distributions are defined over different grids");
    }
}

}  // namespace

double tv_distance(const SpawnDistribution& p, const SpawnDistribution& q) {
    check_compatible(p, q);
    // For normalized p and q, (1/2) sum |p - q| = 1 - sum min(p, q); the
    // overlap form keeps full relative precision when the supports separate.
    double overlap = 0.0;
    for (std::size_t i = 0; i < p.n_cells(); ++i) {
        overlap += std::min(p.probs[i], q.probs[i]);
    }
    return std::clamp(1.0 - overlap, 0.0, 1.0);
}

double kl_divergence(const SpawnDistribution& p, const SpawnDistribution& q) {
    check_compatible(p, q);
    double s = 0.0;
    for (std::size_t i = 0; i < p.n_cells(); ++i) {
        if (p.probs[i] > 0.0) {
            s += p.probs[i] * (p.log_probs[i] - q.log_probs[i]);
        }
    }
    return std::max(s, 0.0);
}

int default_obstacle_count(int grid_size) {
    return static_cast<int>(std::lround(25.0 * grid_size * grid_size / 81.0));
}

std::string distribution_csv(const SpawnDistribution& dist) {
    std::ostringstream out;
    out << std::setprecision(17);
    const int gs = dist.grid_size;
    if (gs == 0) {
        for (std::size_t i = 0; i < dist.n_cells(); ++i) {
            out << (i ? "," : "") << dist.probs[i];
        }
        out << '\n';
        return out.str();
    }
    for (int i = 0; i < gs; ++i) {
        for (int j = 0; j < gs; ++j) {
            out << (j ? "," : "") << dist.probs[static_cast<std::size_t>(i * gs + j)];
        }
        out << '\n';
    }
    return out.str();
}

Certificate certify(const SpawnDistribution& eval_dist) {
    const auto train = build_distribution(eval_dist.grid_size, eval_dist.alpha, Orientation::center);
    return {tv_distance(train, eval_dist), kl_divergence(train, eval_dist)};
}

json TaskSuite::to_json() const {
    json tasks_json = json::array();
    for (const auto& t : tasks) {
        tasks_json.push_back(t.to_json());
    }
    return {{"grid_size", grid_size},
            {"alpha", alpha},
            {"orientation", std::string(orientation_name(orientation))},
            {"n_obstacles", n_obstacles},
            {"time_limit", time_limit},
            {"seed", seed},
            {"certificate", {{"tv", certificate.tv}, {"kl", certificate.kl}}},
            {"tasks", tasks_json}};
}

TaskSuite TaskSuite::from_json(const json& j) {
    try {
        TaskSuite s;
        s.grid_size = j.at("grid_size").get<int>();
        s.alpha = j.at("alpha").get<double>();
        s.orientation = orientation_from_name(j.at("orientation").get<std::string>());
        s.n_obstacles = j.value("n_obstacles", 0);
        s.time_limit = j.value("time_limit", 0);
        s.seed = j.value("seed", std::uint64_t{0});
        s.certificate.tv = j.at("certificate").at("tv").get<double>();
        s.certificate.kl = j.at("certificate").at("kl").get<double>();
        for (const auto& t : j.at("tasks")) {
            s.tasks.push_back(TaskSpec::from_json(t));
        }
        return s;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed task suite: ") + e.what());
    }
}

TaskSuite generate_suite(int grid_size, double alpha, Orientation orientation, int n_tasks, int n_obstacles,
                         int time_limit, std::uint64_t seed) {
    const auto dist = build_distribution(grid_size, alpha, orientation);
    TaskSuite suite;
    suite.grid_size = grid_size;
    suite.alpha = alpha;
    suite.orientation = orientation;
    suite.n_obstacles = n_obstacles;
    suite.time_limit = time_limit;
    suite.seed = seed;
    suite.certificate = certify(dist);
    Rng rng(seed);
    for (int i = 0; i < n_tasks; ++i) {
        suite.tasks.push_back(sample_task(dist, n_obstacles, time_limit, rng));
    }
    return suite;
}

}  // namespace eppo::taskgen
