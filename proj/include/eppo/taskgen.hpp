#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eppo/cmdp.hpp"

namespace eppo::taskgen {

using cmdp::GridPos;
using cmdp::TaskSpec;
using json = nlohmann::json;

enum class Orientation { center, edge };

std::string_view orientation_name(Orientation o);
Orientation orientation_from_name(std::string_view name);

/// Spawn distribution over cells, P(cell) proportional to exp(-alpha d^2)
/// (center) or exp(+alpha d^2) (edge), with d^2 the squared Euclidean
/// distance to the geometric map center. Cells are row-major for grids;
/// grid_size is 0 for distributions built over an explicit distance list.
struct SpawnDistribution {
    int grid_size = 0;
    double alpha = 0.0;
    Orientation orientation = Orientation::center;
    std::vector<double> probs;
    std::vector<double> log_probs;

    std::size_t n_cells() const { return probs.size(); }
    double prob(GridPos p) const { return probs.at(static_cast<std::size_t>(p.row * grid_size + p.col)); }
};

/// Throws ParameterError when grid_size < 2 or alpha <= 0.
SpawnDistribution build_distribution(int grid_size, double alpha, Orientation orientation);

/// Same normalization over an arbitrary list of squared distances.
SpawnDistribution build_distribution_from_d2(const std::vector<double>& squared_distances, double alpha,
                                             Orientation orientation);

/// One draw from `dist` restricted to cells whose `excluded` flag is false,
/// renormalized over the rest.
int draw_cell(const SpawnDistribution& dist, const std::vector<bool>& excluded, Rng& rng);

/// Obstacles drawn without replacement (start excluded), then the goal from
/// the same distribution excluding start and obstacles.
/// Throws ParameterError when n_obstacles + 2 > grid_size^2.
TaskSpec sample_task(const SpawnDistribution& dist, int n_obstacles, int time_limit, Rng& rng);

/// Exact total-variation distance. Throws ParameterError on mismatched supports.
double tv_distance(const SpawnDistribution& p, const SpawnDistribution& q);
/// Exact KL(p || q), computed from log-probabilities.
double kl_divergence(const SpawnDistribution& p, const SpawnDistribution& q);

/// 25 obstacles on 9x9, scaled by area for other sizes.
int default_obstacle_count(int grid_size);

/// Grid of probabilities, one CSV row per grid row.
std::string distribution_csv(const SpawnDistribution& dist);

struct Certificate {
    double tv = 0.0;
    double kl = 0.0;
};

/// Divergence of an evaluation distribution from the pretraining
/// (center-oriented, same alpha and grid) distribution.
Certificate certify(const SpawnDistribution& eval_dist);

struct TaskSuite {
    int grid_size = 0;
    double alpha = 0.0;
    Orientation orientation = Orientation::edge;
    int n_obstacles = 0;
    int time_limit = 0;
    std::uint64_t seed = 0;
    Certificate certificate;
    std::vector<TaskSpec> tasks;

    json to_json() const;
    static TaskSuite from_json(const json& j);
};

TaskSuite generate_suite(int grid_size, double alpha, Orientation orientation, int n_tasks, int n_obstacles,
                         int time_limit, std::uint64_t seed);

}  // namespace eppo::taskgen
