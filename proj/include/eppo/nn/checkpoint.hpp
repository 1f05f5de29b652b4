#pragma once

#include <string>
#include <vector>

#include "eppo/nn/model.hpp"

namespace eppo::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Mat value;
};

/// Binary layout: magic "EPPOCKPT", u32 version, u64 header length, JSON
/// header, u32 tensor count, then per tensor (u32 name length, name,
/// u32 rows, u32 cols, rows*cols little-endian doubles), then u64 RNG-state
/// length and the RNG state text.
struct Checkpoint {
    json header;
    std::vector<NamedTensor> tensors;
    std::string rng_state;

    const Mat& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws DataError on a bad magic, version or truncated file.
Checkpoint read_checkpoint(const std::string& path);

/// Appends the model parameters as "<prefix><name>" tensors.
void export_model(const SequenceModel& m, const std::string& prefix, Checkpoint& ckpt);
/// Loads "<prefix><name>" tensors into an architecture-compatible model.
/// Throws DataError on a missing tensor or shape mismatch.
void import_model(SequenceModel& m, const std::string& prefix, const Checkpoint& ckpt);

/// Writes a model alone, with its ModelSpec in the header.
void save_model(const std::string& path, const SequenceModel& m, const json& extra = json::object());
SequenceModel load_model(const std::string& path);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace eppo::nn
