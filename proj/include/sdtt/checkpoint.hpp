#pragma once

#include <filesystem>
#include <string>

#include "sdtt/train.hpp"

namespace sdtt {

// Checkpoint file: "SDTTCKPT1", ModelConfig, step, round, EMA decay, params,
// EMA shadow, Adam moments (little-endian float32), then a 64-bit FNV-1a
// checksum of every preceding byte.

std::string serialize_checkpoint(const TrainState& state);
/// Throws DataError on a bad magic, truncation or checksum mismatch.
TrainState deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Content id of a parameter vector.
std::string params_hash(const VectorX<float>& params);

}  // namespace sdtt
