#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "agnet/model.hpp"

namespace agnet {

// Binary container, all integers and floats little-endian:
//   "AGNC" | u32 version | str config_echo | u64 seed | u32 epoch | u32 count
//   count x { str name | u32 rank | u32 dims[rank] | f32 values[prod(dims)] }
// where str = u32 length + bytes. Optimizer state is stored as tensors named
// "momentum/<parameter name>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

// Writes through a temporary file and renames, so an interrupted save never
// leaves a truncated checkpoint under `path`.
void save_checkpoint(const std::filesystem::path& path, const Model& model, int epoch,
                     const NetworkParams<float>* momentum = nullptr);

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rebuilds the model. When `expected` is given its architecture must match
// the checkpoint's config echo.
Model restore_model(const Checkpoint& checkpoint, const ModelConfig* expected = nullptr);

// Returns false when the checkpoint carries no optimizer state.
bool restore_momentum(const Checkpoint& checkpoint, NetworkParams<float>& momentum);

}  // namespace agnet
