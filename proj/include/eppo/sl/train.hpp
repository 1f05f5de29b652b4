#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eppo/nn/checkpoint.hpp"
#include "eppo/nn/model.hpp"
#include "eppo/nn/optim.hpp"
#include "eppo/sl/dataset.hpp"

namespace eppo::sl {

/// Contiguous slice of a trajectory starting at an episode boundary.
struct Window {
    const SLTrajectory* trajectory = nullptr;
    std::size_t first_episode = 0;
    std::size_t n_tokens = 0;
    Phase phase = Phase::early;
};

/// Picks a learning phase uniformly among the non-empty ones, then a start
/// episode uniformly within it, and takes up to max_len steps from there.
/// Trajectories that fit whole are returned whole. Throws DataError on an
/// empty trajectory.
Window subsample_context(const SLTrajectory& trajectory, std::size_t max_len, Rng& rng);

/// Tokens conditioned on the logged return- and cost-to-go; the first token
/// of a window has no predecessor.
std::vector<nn::StepInput> window_tokens(const Window& w);

struct SLBatch {
    nn::Batch batch;
    std::vector<int> actions;
};

/// Throws DataError when a trajectory lacks annotations.
SLBatch make_sl_batch(const std::vector<Window>& windows);

/// Mean negative log-likelihood of the logged actions.
nn::Var sl_loss_discrete(nn::Graph& g, const nn::SequenceModel& model, const SLBatch& batch, bool training,
                         Rng* dropout_rng);

/// Mean over rows of the squared distance between logged action vectors and
/// predicted means (n x d). Throws DataError on shape mismatch or no rows.
nn::Var sl_loss_continuous(nn::Graph& g, const nn::Var& predicted_mean, const nn::Mat& actions);

struct SLConfig {
    nn::ModelSpec model = default_model();
    nn::AdamConfig adam{};
    int batch_size = 512;
    int n_updates = 300'000;
    std::uint64_t seed = 0;
    /// 0 disables periodic checkpoints.
    int checkpoint_every = 0;
    std::string out_dir;

    static nn::ModelSpec default_model();
    void validate() const;
    json to_json() const;
    static SLConfig from_json(const json& j);
};

struct SLResult {
    nn::Checkpoint checkpoint;
    /// Training cross-entropy per update.
    std::vector<double> losses;
    bool aborted = false;
    std::string abort_reason;
};

using SLHook = std::function<bool(int step, double loss)>;

/// Imitation training on phase-stratified windows of uniformly drawn
/// trajectories. Non-finite losses or updates stop training with the last
/// finite state. Writes config.json, checkpoints and losses.csv to out_dir.
SLResult train_sl(const SLConfig& cfg, const SLDataset& data, const SLHook& hook = {});

nn::SequenceModel model_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace eppo::sl
