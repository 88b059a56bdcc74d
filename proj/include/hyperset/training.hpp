#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperset/autodiff.hpp"
#include "hyperset/diagnostics.hpp"
#include "hyperset/model.hpp"
#include "hyperset/sudoku.hpp"
#include "hyperset/tensor.hpp"

namespace hyperset {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double warmup_epochs = 1.0;
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t iterations_train = 0;  // 0 means the model's L
  std::vector<double> eval_iteration_multipliers{1.0, 1.5, 2.0};
  std::size_t threads = 1;

  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

// Mean over non-given cells of -log softmax(logits)[solution]. A board with
// every cell given has loss 0; `empty` is set when provided.
Var masked_cross_entropy(Var logits, const SudokuSample& sample, bool* empty = nullptr);
double masked_cross_entropy(const Tensor& logits, const SudokuSample& sample, bool* empty = nullptr);

// One AdamW update with bias-corrected moments and decoupled weight decay
// theta <- theta - lr*wd*theta. `decay[i]` selects which tensors decay.
void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state, double lr,
                double weight_decay, std::span<const bool> decay);

// Linear warmup from 0 to lr_max over `warmup_steps`, then cosine to lr_min at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double lr_max, double lr_min);

// Scales grads in place so their global norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

struct CellScore {
  std::size_t unknown = 0;
  std::size_t correct = 0;
  bool solved = false;
};

// Per-cell argmax over the logits, scored on non-given cells.
CellScore score_board(const Tensor& logits, const SudokuSample& sample);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double cell_accuracy = 0.0;
  double board_accuracy = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> metrics_path;
  std::optional<std::filesystem::path> checkpoint_path;
  std::filesystem::path dump_dir = ".";
  std::function<void(const EpochMetrics&, double seconds)> on_epoch;
};

struct TrainResult {
  double initial_loss = 0.0;  // mean loss of the untrained model on the training set
  std::vector<EpochMetrics> history;
};

// Loss, gradients (in ModelParams::named() order) and score for one board.
struct SampleGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;
  CellScore score;
};
SampleGrad sample_gradient(const ModelParams& params, const SudokuSample& sample, std::size_t iterations);

TrainResult train(ModelParams& params, std::span<const SudokuSample> data, const TrainConfig& cfg,
                  const TrainOutputs& outputs = {});

struct EvalRow {
  std::size_t iterations = 0;
  double loss = 0.0;
  double cell_accuracy = 0.0;
  double board_accuracy = 0.0;
  EnergyTrace mean_trace;
};

std::vector<EvalRow> evaluate(const ModelParams& params, std::span<const SudokuSample> data,
                              std::span<const std::size_t> iterations, std::size_t threads = 1,
                              bool record_trace = true);

// Iteration counts round(L * m) for each multiplier.
std::vector<std::size_t> eval_iterations(std::size_t L, std::span<const double> multipliers);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace hyperset
