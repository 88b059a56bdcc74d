#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hyperset/energy.hpp"
#include "hyperset/tensor.hpp"

namespace hyperset {

// Singular values below this fraction of the largest are treated as zero
// when forming the spectral entropy.
inline constexpr double kSingularValueFloor = 1e-12;

// One row per iteration. Energies are the constraint-normalized forms;
// rank and angle are measured on rmsnorm(W_h^T X) for each head.
struct TraceRow {
  std::size_t iter = 0;
  double e_attn = 0.0;
  double e_ff = 0.0;
  double e_total = 0.0;
  std::vector<double> head_rank;
  std::vector<double> head_angle;
  double full_rank = 0.0;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct EnergyTrace {
  std::size_t heads = 0;
  std::vector<TraceRow> rows;

  friend bool operator==(const EnergyTrace&, const EnergyTrace&) = default;
};

// Singular values in descending order, by one-sided Jacobi rotations.
std::vector<double> singular_values(const Tensor& X);

// exp of the entropy of the normalized singular value distribution.
double effective_rank_from_singular_values(std::span<const double> sigma);
// Returns 0 for an all-zero matrix and sets *zero_matrix when provided.
double effective_rank(const Tensor& X, bool* zero_matrix = nullptr);

// arccos of the mean pairwise cosine similarity of the columns, in degrees.
double average_angle(const Tensor& X);

TraceRow record_trace(const Tensor& X, std::size_t iter, const Bases& bases, const EnergyConfig& cfg);

enum class TraceFormat { kCsv, kJson };

std::string trace_csv_header(std::size_t heads);
void export_trace(const EnergyTrace& trace, const std::filesystem::path& path, TraceFormat format);
EnergyTrace import_trace(const std::filesystem::path& path, TraceFormat format);

// Element-wise mean of equally shaped traces.
EnergyTrace mean_trace(std::span<const EnergyTrace> traces);

// True when e_total never rises from one row to the next.
bool energy_nonincreasing(const EnergyTrace& trace);

}  // namespace hyperset
