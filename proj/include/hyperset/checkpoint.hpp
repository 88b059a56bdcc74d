#pragma once

#include <cstdint>
#include <filesystem>

#include "hyperset/model.hpp"

namespace hyperset {

// One line of compact JSON (config, seed, tensor names/shapes/byte offsets),
// a newline, then every tensor as raw little-endian float64 in header order.
struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// True when both parameter sets hold bitwise equal tensors under the same names.
bool params_bitwise_equal(const ModelParams& a, const ModelParams& b);

}  // namespace hyperset
