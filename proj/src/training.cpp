#include "hyperset/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <thread>

#include <json.hpp>

#include "hyperset/checkpoint.hpp"
#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

void check_logits(const Tensor& logits) {
  if (logits.rank() != 2 || logits.rows() != kCells) {
    throw DimensionError("logits " + shape_string(logits.shape()) + " for an 81-cell board");
  }
  if (logits.cols() <= 9) throw DimensionError("logits need at least 10 classes");
}

// Weights 1/k on the k unknown cells, 0 on givens.
std::vector<double> unknown_weights(const SudokuSample& sample, bool* empty) {
  const std::size_t k = kCells - sample.givens();
  if (empty) *empty = k == 0;
  std::vector<double> w(kCells, 0.0);
  if (k == 0) return w;
  for (std::size_t c = 0; c < kCells; ++c) {
    if (!sample.given[c]) w[c] = 1.0 / static_cast<double>(k);
  }
  return w;
}

void dump_batch(const std::filesystem::path& dir, std::size_t step, std::span<const SudokuSample> data,
                std::span<const std::size_t> batch, const std::vector<double>& losses) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["samples"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    j["samples"].push_back({{"index", batch[k]},
                            {"board", serialize_sudoku(data[batch[k]])},
                            {"loss", std::isfinite(losses[k]) ? nlohmann::ordered_json(losses[k])
                                                              : nlohmann::ordered_json(std::to_string(losses[k]))}});
  }
  std::ofstream out(dir / "nonfinite_batch.json");
  out << j.dump(2) << '\n';
}

nlohmann::ordered_json metrics_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},        {"step", m.step},
          {"loss", m.loss},          {"cell_accuracy", m.cell_accuracy},
          {"board_accuracy", m.board_accuracy}, {"lr", m.lr},
          {"grad_norm", m.grad_norm}};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (lr_min > lr_max) throw ConfigError("lr_min exceeds lr_max");
  if (lr_min < 0.0) throw ConfigError("learning rates must be non-negative");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (warmup_epochs < 0.0) throw ConfigError("warmup_epochs must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (threads == 0) throw ConfigError("threads must be at least 1");
  if (eval_iteration_multipliers.empty()) throw ConfigError("eval_iteration_multipliers is empty");
}

Var masked_cross_entropy(Var logits, const SudokuSample& sample, bool* empty) {
  check_logits(logits.value());
  const std::vector<double> w = unknown_weights(sample, empty);
  const std::vector<std::size_t> target(sample.solution.begin(), sample.solution.end());
  return scale(weighted_pick(log_softmax(logits, Axis::kRows), target, w), -1.0);
}

double masked_cross_entropy(const Tensor& logits, const SudokuSample& sample, bool* empty) {
  check_logits(logits);
  const std::vector<double> w = unknown_weights(sample, empty);
  const Tensor logp = log_softmax(logits, Axis::kRows);
  double loss = 0.0;
  for (std::size_t c = 0; c < kCells; ++c) loss -= w[c] * logp(c, sample.solution[c]);
  return loss;
}

void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state, double lr,
                double weight_decay, std::span<const bool> decay) {
  if (params.size() != grads.size() || params.size() != decay.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " + std::to_string(decay.size()) + " decay flags");
  }
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    if (g.size() != p.size() || m.size() != p.size()) {
      throw DimensionError("adamw_step: gradient " + shape_string(grads[i].shape()) + " for parameter " +
                           shape_string(params[i]->shape()));
    }
    const double decay_factor = decay[i] ? lr * weight_decay : 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= decay_factor * p[k];
      p[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double lr_max,
                   double lr_min) {
  if (step < warmup_steps) return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return lr_min;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

CellScore score_board(const Tensor& logits, const SudokuSample& sample) {
  check_logits(logits);
  CellScore s;
  for (std::size_t c = 0; c < kCells; ++c) {
    if (sample.given[c]) continue;
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k) {
      if (logits(c, k) > logits(c, best)) best = k;
    }
    ++s.unknown;
    if (best == sample.solution[c]) ++s.correct;
  }
  s.solved = s.correct == s.unknown;
  return s;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SampleGrad sample_gradient(const ModelParams& params, const SudokuSample& sample, std::size_t iterations) {
  Tape tape;
  const ModelVars v = bind_model(tape, params, true);
  const std::vector<std::size_t> tokens = sample.tokens();
  Var logits = forward_logits(v, params, tokens, iterations);
  Var loss = masked_cross_entropy(logits, sample);
  SampleGrad out;
  out.loss = loss.value().item();
  out.score = score_board(logits.value(), sample);
  tape.backward(loss);
  for (Var p : learnable_vars(v, params.cfg)) out.grads.push_back(tape.grad(p));
  return out;
}

TrainResult train(ModelParams& params, std::span<const SudokuSample> data, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
  cfg.validate();
  if (data.empty()) throw ContractError("training set is empty");
  const std::size_t iterations = cfg.iterations_train == 0 ? params.cfg.L : cfg.iterations_train;
  const std::size_t batches = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  const auto warmup_steps = static_cast<std::size_t>(std::llround(cfg.warmup_epochs * static_cast<double>(batches)));

  std::optional<std::ofstream> metrics;
  if (outputs.metrics_path) {
    metrics.emplace(*outputs.metrics_path, std::ios::binary);
    if (!*metrics) throw IoError("cannot write metrics to " + outputs.metrics_path->string());
  }

  TrainResult result;
  {
    std::vector<double> losses(data.size());
    parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
      const ModelOutput out = forward_model(params, data[i].tokens(), iterations, false);
      losses[i] = masked_cross_entropy(out.logits, data[i]);
    });
    for (double l : losses) result.initial_loss += l;
    result.initial_loss /= static_cast<double>(data.size());
  }

  // Weight decay applies to matrices only; gains and vectors are left alone.
  auto named = params.named();
  std::vector<Tensor*> tensors;
  auto decay = std::make_unique<bool[]>(named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    tensors.push_back(named[i].tensor);
    decay[i] = named[i].tensor->rank() == 2 && named[i].tensor->rows() > 1 && named[i].tensor->cols() > 1;
  }

  OptimizerState opt;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t cells = 0, correct = 0, solved = 0;
    double lr = 0.0;
    double last_norm = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      std::vector<SampleGrad> results(batch.size());
      parallel_for(batch.size(), cfg.threads, [&](std::size_t k) {
        try {
          results[k] = sample_gradient(params, data[batch[k]], iterations);
        } catch (const NumericError&) {
          results[k].loss = std::numeric_limits<double>::quiet_NaN();
        }
      });

      std::vector<double> losses;
      for (const SampleGrad& r : results) losses.push_back(r.loss);
      if (!std::all_of(losses.begin(), losses.end(), [](double l) { return std::isfinite(l); })) {
        dump_batch(outputs.dump_dir, step, data, batch, losses);
        throw NumericError("non-finite loss at step " + std::to_string(step) + "; batch written to " +
                           (outputs.dump_dir / "nonfinite_batch.json").string());
      }

      // Ordered reduction keeps the sum independent of the thread count.
      std::vector<Tensor> grads = std::move(results[0].grads);
      for (std::size_t k = 1; k < results.size(); ++k) {
        for (std::size_t i = 0; i < grads.size(); ++i) {
          auto dst = grads[i].data();
          const auto src = results[k].grads[i].data();
          for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
        }
      }
      const double inv = 1.0 / static_cast<double>(results.size());
      for (Tensor& g : grads) {
        for (double& e : g.data()) e *= inv;
      }
      last_norm = clip_grad_norm(grads, cfg.grad_clip);
      lr = lr_schedule(step, total_steps, warmup_steps, cfg.lr_max, cfg.lr_min);
      adamw_step(tensors, grads, opt, lr, cfg.weight_decay, std::span<const bool>(decay.get(), tensors.size()));
      ++step;

      for (const SampleGrad& r : results) {
        loss_sum += r.loss;
        cells += r.score.unknown;
        correct += r.score.correct;
        solved += r.score.solved ? 1 : 0;
      }
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.loss = loss_sum / static_cast<double>(data.size());
    m.cell_accuracy = cells ? static_cast<double>(correct) / static_cast<double>(cells) : 0.0;
    m.board_accuracy = static_cast<double>(solved) / static_cast<double>(data.size());
    m.lr = lr;
    m.grad_norm = last_norm;
    result.history.push_back(m);
    if (metrics) {
      *metrics << metrics_json(m).dump() << '\n';
      metrics->flush();
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (outputs.on_epoch) outputs.on_epoch(m, seconds);
  }
  if (outputs.checkpoint_path) save_checkpoint(*outputs.checkpoint_path, params, cfg.seed);
  return result;
}

std::vector<EvalRow> evaluate(const ModelParams& params, std::span<const SudokuSample> data,
                              std::span<const std::size_t> iterations, std::size_t threads, bool record_trace) {
  if (iterations.empty()) throw ContractError("evaluate needs at least one iteration count");
  if (data.empty()) throw ContractError("evaluation set is empty");
  std::vector<EvalRow> rows;
  for (std::size_t iters : iterations) {
    std::vector<ModelOutput> outs(data.size());
    parallel_for(data.size(), threads,
                 [&](std::size_t i) { outs[i] = forward_model(params, data[i].tokens(), iters, record_trace); });
    EvalRow row;
    row.iterations = iters;
    std::size_t cells = 0, correct = 0, solved = 0;
    std::vector<EnergyTrace> traces;
    for (std::size_t i = 0; i < data.size(); ++i) {
      row.loss += masked_cross_entropy(outs[i].logits, data[i]);
      const CellScore s = score_board(outs[i].logits, data[i]);
      cells += s.unknown;
      correct += s.correct;
      solved += s.solved ? 1 : 0;
      if (record_trace) traces.push_back(std::move(outs[i].trace));
    }
    row.loss /= static_cast<double>(data.size());
    row.cell_accuracy = cells ? static_cast<double>(correct) / static_cast<double>(cells) : 0.0;
    row.board_accuracy = static_cast<double>(solved) / static_cast<double>(data.size());
    if (record_trace) row.mean_trace = mean_trace(traces);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::size_t> eval_iterations(std::size_t L, std::span<const double> multipliers) {
  std::vector<std::size_t> out;
  for (double m : multipliers) {
    if (!(m > 0.0)) throw ConfigError("iteration multipliers must be positive");
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(m * static_cast<double>(L)))));
  }
  return out;
}

}  // namespace hyperset
