#include "hyperset/block.hpp"

#include <algorithm>
#include <cmath>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

// sum_h W_h dE_h/dZ_h with Z_h = rmsnorm(W_h^T X) . g_h.
Var attention_direction(Var X, Var W, Var attn_gain, const EnergyConfig& cfg) {
  Var proj = matmul(W, X, true, false);
  std::vector<Var> dirs;
  dirs.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::size_t lo = h * cfg.p;
    const std::size_t hi = lo + cfg.p;
    Var z = rmsnorm(slice_rows(proj, lo, hi), slice_rows(attn_gain, lo, hi));
    dirs.push_back(attn_head_gradient(z, cfg));
  }
  return matmul(W, concat_rows(dirs));
}

Var ff_direction(Var X, Var D, Var ff_gain, const EnergyConfig& cfg) {
  Var y = rmsnorm(matmul(D, X, true, false), ff_gain);
  return matmul(D, ff_descent(y, cfg));
}

}  // namespace

std::string_view to_string(ConditionMode m) {
  return m == ConditionMode::kInitialTokens ? "initial_tokens" : "current_tokens";
}

ConditionMode parse_condition_mode(std::string_view name) {
  if (name == "initial_tokens") return ConditionMode::kInitialTokens;
  if (name == "current_tokens") return ConditionMode::kCurrentTokens;
  throw ConfigError("unknown condition mode '" + std::string(name) + "'");
}

void BlockConfig::validate() const {
  energy.validate();
  if (L < 1) throw ConfigError("L must be at least 1");
  if (lora_rank && *lora_rank < 1) throw ConfigError("LoRA rank must be at least 1");
}

Tensor time_embedding(std::size_t t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("time embedding dimension must be even and positive");
  const std::size_t half = dim / 2;
  Tensor out(Shape{dim, 1});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(t) * freq;
    out[i] = std::cos(arg);
    out[half + i] = std::sin(arg);
  }
  return out;
}

HyperSetParams make_block_params(Bases bases, const BlockConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.energy.d;
  HyperSetParams params;
  params.bases = std::move(bases);
  params.attn_gain = Tensor(Shape{cfg.energy.heads * cfg.energy.p}, 1.0);
  params.ff_gain = Tensor(Shape{cfg.energy.M}, 1.0);
  params.modnet.time_proj = Tensor(Shape{d, kTimeEmbedDim});
  params.modnet.hidden = Tensor(Shape{d, d});
  params.modnet.out = Tensor(Shape{2 * d, d});
  return params;
}

Tensor lora_effective_weight(const Tensor& base, const LoraAdapter& adapter, double factor) {
  const std::size_t r = adapter.A.cols();
  if (r > std::min(base.rows(), base.cols())) {
    throw ConfigError("LoRA rank " + std::to_string(r) + " exceeds min" + shape_string(base.shape()));
  }
  if (adapter.A.rows() != base.rows() || adapter.B.rows() != r || adapter.B.cols() != base.cols()) {
    throw DimensionError("LoRA adapter A " + shape_string(adapter.A.shape()) + ", B " +
                         shape_string(adapter.B.shape()) + " for base " + shape_string(base.shape()));
  }
  return add(base, scale(matmul(adapter.A, adapter.B), factor));
}

std::size_t lora_index(std::size_t t, std::size_t count) {
  if (count == 0) throw ContractError("no LoRA adapters");
  return std::min(std::max<std::size_t>(t, 1), count) - 1;
}

Var BlockVars::W_at(std::size_t t) const {
  if (lora_WA.empty()) return W;
  const std::size_t k = lora_index(t, lora_WA.size());
  return add(W, scale(matmul(lora_WA[k], lora_WB[k]), lora_scale));
}

Var BlockVars::D_at(std::size_t t) const {
  if (lora_DA.empty()) return D;
  const std::size_t k = lora_index(t, lora_DA.size());
  return add(D, scale(matmul(lora_DA[k], lora_DB[k]), lora_scale));
}

BlockVars bind_block(Tape& tape, const HyperSetParams& params, bool requires_grad) {
  BlockVars v;
  v.W = tape.leaf(params.bases.W, requires_grad);
  v.D = tape.leaf(params.bases.D, requires_grad);
  v.attn_gain = tape.leaf(params.attn_gain, requires_grad);
  v.ff_gain = tape.leaf(params.ff_gain, requires_grad);
  v.time_proj = tape.leaf(params.modnet.time_proj, requires_grad);
  v.hidden = tape.leaf(params.modnet.hidden, requires_grad);
  v.out = tape.leaf(params.modnet.out, requires_grad);
  if (params.lora) {
    v.lora_scale = params.lora->scale;
    for (const LoraAdapter& a : params.lora->W) {
      v.lora_WA.push_back(tape.leaf(a.A, requires_grad));
      v.lora_WB.push_back(tape.leaf(a.B, requires_grad));
    }
    for (const LoraAdapter& a : params.lora->D) {
      v.lora_DA.push_back(tape.leaf(a.A, requires_grad));
      v.lora_DB.push_back(tape.leaf(a.B, requires_grad));
    }
  }
  return v;
}

std::pair<Var, Var> step_sizes(std::size_t t, Var condition, const BlockVars& v, std::size_t time_dim) {
  Tape& tape = condition.tape();
  const std::size_t d = v.hidden.value().rows();
  Var emb = tape.constant(time_embedding(t, time_dim));
  Var h = add_colvec(condition, gelu(matmul(v.time_proj, emb)));
  Var out = matmul(v.out, gelu(matmul(v.hidden, h)));
  return {slice_rows(out, 0, d), slice_rows(out, d, 2 * d)};
}

Var attention_update(Var X, Var W, Var attn_gain, const EnergyConfig& cfg, Var alpha) {
  return sub(X, mul(alpha, attention_direction(X, W, attn_gain, cfg)));
}

Var attention_update(Var X, Var W, Var attn_gain, const EnergyConfig& cfg, double alpha) {
  return sub(X, scale(attention_direction(X, W, attn_gain, cfg), alpha));
}

Var ff_update(Var X, Var D, Var ff_gain, const EnergyConfig& cfg, Var gamma) {
  return add(X, mul(gamma, ff_direction(X, D, ff_gain, cfg)));
}

Var ff_update(Var X, Var D, Var ff_gain, const EnergyConfig& cfg, double gamma) {
  return add(X, scale(ff_direction(X, D, ff_gain, cfg), gamma));
}

Var forward_block(Var X, std::size_t t, Var X0, const BlockVars& v, const BlockConfig& cfg,
                  const std::optional<FixedSteps>& fixed, std::size_t time_dim) {
  Var W = v.W_at(t);
  Var D = v.D_at(t);
  if (fixed) {
    Var mid = attention_update(X, W, v.attn_gain, cfg.energy, fixed->alpha);
    return ff_update(mid, D, v.ff_gain, cfg.energy, fixed->gamma);
  }
  Var condition = cfg.condition == ConditionMode::kInitialTokens ? X0 : X;
  auto [alpha, gamma] = step_sizes(t, condition, v, time_dim);
  Var mid = attention_update(X, W, v.attn_gain, cfg.energy, alpha);
  return ff_update(mid, D, v.ff_gain, cfg.energy, gamma);
}

Var forward_unroll(Var X0, const BlockVars& v, const BlockConfig& cfg, std::size_t iterations,
                   const std::optional<FixedSteps>& fixed, std::size_t time_dim) {
  Var X = X0;
  for (std::size_t t = 1; t <= iterations; ++t) X = forward_block(X, t, X0, v, cfg, fixed, time_dim);
  return X;
}

std::pair<Tensor, Tensor> step_sizes(std::size_t t, const Tensor& condition, const StepSizeNet& net) {
  Tape tape;
  BlockVars v;
  v.time_proj = tape.constant(net.time_proj);
  v.hidden = tape.constant(net.hidden);
  v.out = tape.constant(net.out);
  auto [alpha, gamma] = step_sizes(t, tape.constant(condition), v, net.time_dim);
  return {alpha.value(), gamma.value()};
}

Tensor attention_update(const Tensor& X, const HyperSetParams& params, const EnergyConfig& cfg,
                        const Tensor& alpha) {
  Tape tape;
  return attention_update(tape.constant(X), tape.constant(params.bases.W), tape.constant(params.attn_gain), cfg,
                          tape.constant(alpha))
      .value();
}

Tensor ff_update(const Tensor& X, const HyperSetParams& params, const EnergyConfig& cfg, const Tensor& gamma) {
  Tape tape;
  return ff_update(tape.constant(X), tape.constant(params.bases.D), tape.constant(params.ff_gain), cfg,
                   tape.constant(gamma))
      .value();
}

Bases effective_bases(const HyperSetParams& params, std::size_t t) {
  if (!params.lora) return params.bases;
  const LoraSet& lora = *params.lora;
  Bases out = params.bases;
  if (!lora.W.empty()) out.W = lora_effective_weight(out.W, lora.W[lora_index(t, lora.W.size())], lora.scale);
  if (!lora.D.empty()) out.D = lora_effective_weight(out.D, lora.D[lora_index(t, lora.D.size())], lora.scale);
  return out;
}

Tensor forward_block(const Tensor& X, std::size_t t, const Tensor& X0, const HyperSetParams& params,
                     const BlockConfig& cfg, const std::optional<FixedSteps>& fixed, TraceRow* trace) {
  if (trace) *trace = record_trace(X, t, effective_bases(params, t), cfg.energy);
  Tape tape;
  const BlockVars v = bind_block(tape, params, false);
  return forward_block(tape.constant(X), t, tape.constant(X0), v, cfg, fixed, params.modnet.time_dim).value();
}

UnrollResult forward_unroll(const Tensor& X0, const HyperSetParams& params, const BlockConfig& cfg,
                            std::size_t iterations, const UnrollOptions& options) {
  cfg.validate();
  UnrollResult result;
  result.X = X0;
  result.trace.heads = cfg.energy.heads;
  for (std::size_t t = 1; t <= iterations; ++t) {
    TraceRow row;
    result.X = forward_block(result.X, t, X0, params, cfg, options.fixed_steps,
                             options.record_trace ? &row : nullptr);
    if (options.record_trace) result.trace.rows.push_back(std::move(row));
  }
  if (options.record_trace && iterations > 0) {
    result.trace.rows.push_back(record_trace(result.X, iterations + 1, effective_bases(params, iterations), cfg.energy));
  }
  return result;
}

}  // namespace hyperset
