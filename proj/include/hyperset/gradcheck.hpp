#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hyperset/energy.hpp"

namespace hyperset {

inline constexpr double kGradCheckTolerance = 1e-4;

// One of the six energies under test, e.g. "attn_bi_softmax" or "ff_gated".
struct GradCheckCase {
  std::string name;
  bool attention = true;
  AttnVariant attn = AttnVariant::kBiSoftmax;
  FfVariant ff = FfVariant::kRelu;
};

std::vector<GradCheckCase> grad_check_cases();

struct GradCheckOptions {
  std::size_t instances = 50;
  std::uint64_t seed = 0;
  // Case-name filter: exact name, or a variant name such as "linear" or "gated".
  std::optional<std::string> variant;
  // Negates the closed form; a correct harness must then fail.
  bool flip_sign = false;
  double tolerance = kGradCheckTolerance;
};

struct GradCheckRow {
  std::string name;
  std::size_t instances = 0;
  double max_err_closed = 0.0;    // closed form vs central differences
  double max_err_autodiff = 0.0;  // tape gradient vs central differences
  std::uint64_t worst_seed = 0;
  std::string worst_shape;
  bool passed = true;
};

std::vector<GradCheckRow> run_grad_check(const GradCheckOptions& options);

}  // namespace hyperset
