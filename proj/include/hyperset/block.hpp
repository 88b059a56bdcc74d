#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "hyperset/autodiff.hpp"
#include "hyperset/diagnostics.hpp"
#include "hyperset/energy.hpp"
#include "hyperset/tensor.hpp"

namespace hyperset {

inline constexpr std::size_t kTimeEmbedDim = 512;
inline constexpr double kDefaultLoraScale = 4.0;

// What the step-size network is conditioned on besides the iteration index.
enum class ConditionMode { kInitialTokens, kCurrentTokens };

std::string_view to_string(ConditionMode m);
ConditionMode parse_condition_mode(std::string_view name);

// Linear(time_dim -> d), GELU, + condition, Linear(d -> d), GELU, Linear(d -> 2d).
// Weights are stored output x input; there are no biases.
struct StepSizeNet {
  Tensor time_proj;  // d x time_dim
  Tensor hidden;     // d x d
  Tensor out;        // 2d x d, zero at init
  std::size_t time_dim = kTimeEmbedDim;
};

struct LoraAdapter {
  Tensor A;  // rows x r
  Tensor B;  // r x cols
};

// One adapter per training iteration for each of W and D.
struct LoraSet {
  std::vector<LoraAdapter> W;
  std::vector<LoraAdapter> D;
  double scale = kDefaultLoraScale;
};

struct HyperSetParams {
  Bases bases;
  Tensor attn_gain;  // H*p, one gain vector of length p per head
  Tensor ff_gain;    // M
  StepSizeNet modnet;
  std::optional<LoraSet> lora;
};

struct BlockConfig {
  EnergyConfig energy;
  std::size_t L = 1;
  std::optional<std::size_t> lora_rank;
  double lora_scale = kDefaultLoraScale;
  ConditionMode condition = ConditionMode::kInitialTokens;

  void validate() const;
};

// Per-iteration scalar steps that bypass the step-size network.
struct FixedSteps {
  double alpha = 0.0;
  double gamma = 0.0;
};

struct UnrollOptions {
  std::optional<FixedSteps> fixed_steps;
  bool record_trace = true;
};

struct UnrollResult {
  Tensor X;
  EnergyTrace trace;
};

// Sinusoidal embedding of iteration t: [cos(t f_i), sin(t f_i)], f_i = 10000^(-i/(dim/2)).
Tensor time_embedding(std::size_t t, std::size_t dim = kTimeEmbedDim);

// Zero-initialized step-size net and unit gains around the given bases.
HyperSetParams make_block_params(Bases bases, const BlockConfig& cfg);

// base + scale * A B. Throws ConfigError when r exceeds min(rows, cols).
Tensor lora_effective_weight(const Tensor& base, const LoraAdapter& adapter, double scale = kDefaultLoraScale);
// Adapter used at 1-based iteration t; iterations beyond the trained depth reuse the last one.
std::size_t lora_index(std::size_t t, std::size_t count);

// Params placed on a tape. Leaves require grad when bound for training.
struct BlockVars {
  Var W;
  Var D;
  Var attn_gain;
  Var ff_gain;
  Var time_proj;
  Var hidden;
  Var out;
  std::vector<Var> lora_WA, lora_WB, lora_DA, lora_DB;
  double lora_scale = kDefaultLoraScale;

  // Effective bases for 1-based iteration t.
  Var W_at(std::size_t t) const;
  Var D_at(std::size_t t) const;
};

BlockVars bind_block(Tape& tape, const HyperSetParams& params, bool requires_grad);

// Differentiable forms.
std::pair<Var, Var> step_sizes(std::size_t t, Var condition, const BlockVars& v, std::size_t time_dim);
// X - alpha . sum_h W_h Z_h dE_h/dZ_h with Z_h = rmsnorm(W_h^T X) . g_h.
Var attention_update(Var X, Var W, Var attn_gain, const EnergyConfig& cfg, Var alpha);
Var attention_update(Var X, Var W, Var attn_gain, const EnergyConfig& cfg, double alpha);
// X + gamma . D f(rmsnorm(D^T X) . g).
Var ff_update(Var X, Var D, Var ff_gain, const EnergyConfig& cfg, Var gamma);
Var ff_update(Var X, Var D, Var ff_gain, const EnergyConfig& cfg, double gamma);
Var forward_block(Var X, std::size_t t, Var X0, const BlockVars& v, const BlockConfig& cfg,
                  const std::optional<FixedSteps>& fixed, std::size_t time_dim);
// Whole unroll on one tape; used for training.
Var forward_unroll(Var X0, const BlockVars& v, const BlockConfig& cfg, std::size_t iterations,
                   const std::optional<FixedSteps>& fixed, std::size_t time_dim);

// Tensor forms; no gradients are kept.
std::pair<Tensor, Tensor> step_sizes(std::size_t t, const Tensor& condition, const StepSizeNet& net);
Tensor attention_update(const Tensor& X, const HyperSetParams& params, const EnergyConfig& cfg, const Tensor& alpha);
Tensor ff_update(const Tensor& X, const HyperSetParams& params, const EnergyConfig& cfg, const Tensor& gamma);
// One iteration. When `trace` is given it receives the row for the state before the update.
Tensor forward_block(const Tensor& X, std::size_t t, const Tensor& X0, const HyperSetParams& params,
                     const BlockConfig& cfg, const std::optional<FixedSteps>& fixed = std::nullopt,
                     TraceRow* trace = nullptr);
// Runs iterations 1..n, each on a fresh tape. Trace row t holds the state
// entering iteration t and a last row t = n + 1 holds the output.
UnrollResult forward_unroll(const Tensor& X0, const HyperSetParams& params, const BlockConfig& cfg,
                            std::size_t iterations, const UnrollOptions& options = {});

// Bases actually used at iteration t (LoRA applied when present).
Bases effective_bases(const HyperSetParams& params, std::size_t t);

}  // namespace hyperset
