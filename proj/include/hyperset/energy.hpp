#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "hyperset/autodiff.hpp"
#include "hyperset/tensor.hpp"

namespace hyperset {

// Kernel family of the subspace (attention) energy.
enum class AttnVariant { kBiSoftmax, kSigmoid, kLinear };
// Outer/inner function family of the alignment (feedforward) energy.
enum class FfVariant { kRelu, kSoftmax, kGated };

std::string_view to_string(AttnVariant v);
std::string_view to_string(FfVariant v);
AttnVariant parse_attn_variant(std::string_view name);
FfVariant parse_ff_variant(std::string_view name);

// Elementwise feature map used by linear attention and gated FF.
// `second` is needed to differentiate through the induced update.
struct FeatureMap {
  std::string name;
  UnaryFn value;
  UnaryFn first;
  UnaryFn second;

  static FeatureMap sigmoid();
};

struct EnergyConfig {
  std::size_t d = 0;
  std::size_t heads = 1;
  std::size_t p = 0;  // subspace dimension, d / heads
  std::size_t M = 0;  // number of semantic bases
  double beta = 0.0;  // inverse temperature, 1/sqrt(p) by default
  AttnVariant attn_variant = AttnVariant::kBiSoftmax;
  FfVariant ff_variant = FfVariant::kRelu;
  FeatureMap phi = FeatureMap::sigmoid();

  // p = d / heads, beta = 1 / sqrt(p). M defaults to d.
  static EnergyConfig make(std::size_t d, std::size_t heads, std::size_t M = 0);
  void validate() const;
};

// W = [W_1 .. W_H] (d x H*p) and D (d x M). Heads are contiguous column blocks of W.
struct Bases {
  Tensor W;
  Tensor D;

  Tensor head(std::size_t h, std::size_t p) const;
  static Bases from_heads(const std::vector<Tensor>& heads, Tensor D);
};

struct EnergyReport {
  std::vector<double> e_attn_per_head;
  double e_attn = 0.0;
  double e_ff = 0.0;
  double e_total = 0.0;
};

enum class GradPath { kAutodiff, kClosedForm };

Tensor project_subspace(const Tensor& X, const Tensor& W_h);

// Bi-softmax attention energy, per head and summed. With `normalized`, every
// projection W_h^T X is first mapped onto the radius-sqrt(p) sphere.
EnergyReport e_attn(const Tensor& X, const Bases& bases, const EnergyConfig& cfg,
                    bool normalized = false);
// Closed-form gradient of the unnormalized bi-softmax energy w.r.t. X.
Tensor grad_e_attn(const Tensor& X, const Bases& bases, const EnergyConfig& cfg);

// ReLU alignment energy -1/2 sum ReLU(d_m^T x_i)^2.
double e_ff(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, bool normalized = false);
// Closed-form gradient -D ReLU(D^T X).
Tensor grad_e_ff(const Tensor& X, const Bases& bases, const EnergyConfig& cfg);

// Energies selected by cfg.attn_variant / cfg.ff_variant.
double e_attn_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg,
                      bool normalized = false);
Tensor grad_e_attn_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg,
                           GradPath path = GradPath::kAutodiff);
double e_ff_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg,
                    bool normalized = false);
Tensor grad_e_ff_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg,
                         GradPath path = GradPath::kAutodiff);

// All energies of the configured variants in one report.
EnergyReport energy_report(const Tensor& X, const Bases& bases, const EnergyConfig& cfg,
                           bool normalized);

// Differentiable building blocks shared with the block updates.
// Z is one head's projection (p x N), Y = D^T X (M x N).
Var attn_head_energy(Var Z, const EnergyConfig& cfg);
// dE_h/dZ in closed form.
Var attn_head_gradient(Var Z, const EnergyConfig& cfg);
Var ff_energy(Var Y, const EnergyConfig& cfg);
// -dE_FF/dY in closed form; the FF update direction in projection space.
Var ff_descent(Var Y, const EnergyConfig& cfg);

Var e_attn_expr(Var X, Var W, const EnergyConfig& cfg, bool normalized);
Var e_ff_expr(Var X, Var D, const EnergyConfig& cfg, bool normalized);

// Modern continuous Hopfield energy -log sum_i exp(xi_i^T x) + x^T x / 2.
double e_mch(const Tensor& x, const Tensor& patterns);
// One concave-convex step x <- Xi softmax(Xi^T x). Returns x's shape.
Tensor mch_update(const Tensor& x, const Tensor& patterns);

}  // namespace hyperset
