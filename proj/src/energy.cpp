#include "hyperset/energy.hpp"

#include <cmath>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

double sigmoid_first(double x) {
  const double s = sigmoid_scalar(x);
  return s * (1.0 - s);
}

double sigmoid_second(double x) {
  const double s = sigmoid_scalar(x);
  return s * (1.0 - s) * (1.0 - 2.0 * s);
}

// Rows [h*p, (h+1)*p) of the stacked projection W^T X.
Var head_projection(Var projections, std::size_t h, std::size_t p, bool normalized) {
  Var z = slice_rows(projections, h * p, (h + 1) * p);
  return normalized ? rmsnorm(z) : z;
}

Var ones(Tape& tape, std::size_t r, std::size_t c) { return tape.constant(Tensor(Shape{r, c}, 1.0)); }

void check_bases(const Tensor& X, const Bases& bases, const EnergyConfig& cfg) {
  cfg.validate();
  if (X.rank() != 2 || X.rows() != cfg.d) {
    throw DimensionError("token matrix " + shape_string(X.shape()) + " for d = " + std::to_string(cfg.d));
  }
  if (bases.W.rows() != cfg.d || bases.W.cols() != cfg.heads * cfg.p) {
    throw DimensionError("W is " + shape_string(bases.W.shape()) + ", expected [" +
                         std::to_string(cfg.d) + "x" + std::to_string(cfg.heads * cfg.p) + "]");
  }
  if (bases.D.rows() != cfg.d || bases.D.cols() != cfg.M) {
    throw DimensionError("D is " + shape_string(bases.D.shape()) + ", expected [" +
                         std::to_string(cfg.d) + "x" + std::to_string(cfg.M) + "]");
  }
}

Tensor closed_form_attn_grad(const Tensor& X, const Bases& bases, const EnergyConfig& cfg) {
  Tape tape;
  Var projections = tape.constant(matmul(bases.W, X, true, false));
  std::vector<Var> per_head;
  per_head.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    per_head.push_back(attn_head_gradient(head_projection(projections, h, cfg.p, false), cfg));
  }
  return matmul(bases.W, concat_rows(per_head).value());
}

Tensor closed_form_ff_grad(const Tensor& X, const Bases& bases, const EnergyConfig& cfg) {
  Tape tape;
  Var y = tape.constant(matmul(bases.D, X, true, false));
  return scale(matmul(bases.D, ff_descent(y, cfg).value()), -1.0);
}

}  // namespace

std::string_view to_string(AttnVariant v) {
  switch (v) {
    case AttnVariant::kBiSoftmax: return "bi_softmax";
    case AttnVariant::kSigmoid: return "sigmoid";
    case AttnVariant::kLinear: return "linear";
  }
  return "?";
}

std::string_view to_string(FfVariant v) {
  switch (v) {
    case FfVariant::kRelu: return "relu";
    case FfVariant::kSoftmax: return "softmax";
    case FfVariant::kGated: return "gated";
  }
  return "?";
}

AttnVariant parse_attn_variant(std::string_view name) {
  if (name == "bi_softmax") return AttnVariant::kBiSoftmax;
  if (name == "sigmoid") return AttnVariant::kSigmoid;
  if (name == "linear") return AttnVariant::kLinear;
  throw ConfigError("unknown attention variant '" + std::string(name) + "'");
}

FfVariant parse_ff_variant(std::string_view name) {
  if (name == "relu") return FfVariant::kRelu;
  if (name == "softmax") return FfVariant::kSoftmax;
  if (name == "gated") return FfVariant::kGated;
  throw ConfigError("unknown feedforward variant '" + std::string(name) + "'");
}

FeatureMap FeatureMap::sigmoid() { return {"sigmoid", sigmoid_scalar, sigmoid_first, sigmoid_second}; }

EnergyConfig EnergyConfig::make(std::size_t d, std::size_t heads, std::size_t M) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("d = " + std::to_string(d) + " is not divisible by H = " + std::to_string(heads));
  }
  EnergyConfig cfg;
  cfg.d = d;
  cfg.heads = heads;
  cfg.p = d / heads;
  cfg.M = M == 0 ? d : M;
  cfg.beta = 1.0 / std::sqrt(static_cast<double>(cfg.p));
  return cfg;
}

void EnergyConfig::validate() const {
  if (d == 0 || heads == 0 || p == 0 || M == 0) throw ConfigError("energy dimensions must be positive");
  if (heads * p != d) {
    throw ConfigError("H * p = " + std::to_string(heads * p) + " differs from d = " + std::to_string(d));
  }
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!phi.value || !phi.first || !phi.second) throw ConfigError("feature map is incomplete");
}

Tensor Bases::head(std::size_t h, std::size_t p) const { return slice_cols(W, h * p, (h + 1) * p); }

Bases Bases::from_heads(const std::vector<Tensor>& heads, Tensor D) {
  return Bases{concat_cols(heads), std::move(D)};
}

Tensor project_subspace(const Tensor& X, const Tensor& W_h) {
  if (W_h.rows() != X.rows()) {
    throw DimensionError("project_subspace: W_h " + shape_string(W_h.shape()) + " vs X " +
                         shape_string(X.shape()));
  }
  return matmul(W_h, X, true, false);
}

Var attn_head_energy(Var Z, const EnergyConfig& cfg) {
  const double beta = cfg.beta;
  switch (cfg.attn_variant) {
    case AttnVariant::kBiSoftmax: {
      Var scores = scale(matmul(Z, Z, true, false), beta);
      return scale(sum(logsumexp(scores, Axis::kRows)), 1.0 / beta);
    }
    case AttnVariant::kSigmoid: {
      Var scores = scale(matmul(Z, Z, true, false), beta);
      return scale(sum(sigmoid(scores)), 0.5 / beta);
    }
    case AttnVariant::kLinear: {
      Var f = apply_map(Z, cfg.phi.value, cfg.phi.first, "feature_map");
      Var gram = matmul(f, f, true, false);
      return scale(sum(mul(gram, gram)), 0.25 * beta);
    }
  }
  throw ConfigError("unknown attention variant");
}

Var attn_head_gradient(Var Z, const EnergyConfig& cfg) {
  const double beta = cfg.beta;
  switch (cfg.attn_variant) {
    case AttnVariant::kBiSoftmax: {
      Var scores = scale(matmul(Z, Z, true, false), beta);
      return matmul(Z, add(softmax(scores, Axis::kCols), softmax(scores, Axis::kRows)));
    }
    case AttnVariant::kSigmoid: {
      Var scores = scale(matmul(Z, Z, true, false), beta);
      return matmul(Z, apply_map(scores, sigmoid_first, sigmoid_second, "sigmoid_prime"));
    }
    case AttnVariant::kLinear: {
      Var f = apply_map(Z, cfg.phi.value, cfg.phi.first, "feature_map");
      Var fprime = apply_map(Z, cfg.phi.first, cfg.phi.second, "feature_map_prime");
      Var cubic = matmul(f, matmul(f, f, true, false));
      return mul(fprime, scale(cubic, beta));
    }
  }
  throw ConfigError("unknown attention variant");
}

Var ff_energy(Var Y, const EnergyConfig& cfg) {
  switch (cfg.ff_variant) {
    case FfVariant::kRelu: {
      Var r = relu(Y);
      return scale(sum(mul(r, r)), -0.5);
    }
    case FfVariant::kSoftmax:
      return scale(sum(logsumexp(Y, Axis::kCols)), -1.0);
    case FfVariant::kGated: {
      Var s = matmul(ones(Y.tape(), 1, Y.value().rows()),
                     apply_map(Y, cfg.phi.value, cfg.phi.first, "feature_map"));
      return scale(sum(mul(s, s)), -0.5);
    }
  }
  throw ConfigError("unknown feedforward variant");
}

Var ff_descent(Var Y, const EnergyConfig& cfg) {
  switch (cfg.ff_variant) {
    case FfVariant::kRelu:
      return relu(Y);
    case FfVariant::kSoftmax:
      return softmax(Y, Axis::kCols);
    case FfVariant::kGated: {
      const std::size_t m = Y.value().rows();
      Var s = matmul(ones(Y.tape(), 1, m), apply_map(Y, cfg.phi.value, cfg.phi.first, "feature_map"));
      Var spread = matmul(ones(Y.tape(), m, 1), s);
      return mul(spread, apply_map(Y, cfg.phi.first, cfg.phi.second, "feature_map_prime"));
    }
  }
  throw ConfigError("unknown feedforward variant");
}

Var e_attn_expr(Var X, Var W, const EnergyConfig& cfg, bool normalized) {
  Var projections = matmul(W, X, true, false);
  Var total = attn_head_energy(head_projection(projections, 0, cfg.p, normalized), cfg);
  for (std::size_t h = 1; h < cfg.heads; ++h) {
    total = add(total, attn_head_energy(head_projection(projections, h, cfg.p, normalized), cfg));
  }
  return total;
}

Var e_ff_expr(Var X, Var D, const EnergyConfig& cfg, bool normalized) {
  Var y = matmul(D, X, true, false);
  return ff_energy(normalized ? rmsnorm(y) : y, cfg);
}

EnergyReport e_attn(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, bool normalized) {
  check_bases(X, bases, cfg);
  EnergyConfig bi = cfg;
  bi.attn_variant = AttnVariant::kBiSoftmax;
  EnergyReport report;
  Tape tape;
  Var projections = tape.constant(matmul(bases.W, X, true, false));
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    double e = 0.0;
    try {
      e = attn_head_energy(head_projection(projections, h, cfg.p, normalized), bi).value().item();
    } catch (const NumericError& err) {
      throw NumericError("attention energy of head " + std::to_string(h) + ": " + err.what());
    }
    if (!std::isfinite(e)) throw NumericError("attention energy of head " + std::to_string(h) + " is not finite");
    report.e_attn_per_head.push_back(e);
    report.e_attn += e;
  }
  report.e_total = report.e_attn;
  return report;
}

Tensor grad_e_attn(const Tensor& X, const Bases& bases, const EnergyConfig& cfg) {
  check_bases(X, bases, cfg);
  EnergyConfig bi = cfg;
  bi.attn_variant = AttnVariant::kBiSoftmax;
  return closed_form_attn_grad(X, bases, bi);
}

double e_ff(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, bool normalized) {
  EnergyConfig relu_cfg = cfg;
  relu_cfg.ff_variant = FfVariant::kRelu;
  return e_ff_variant(X, bases, relu_cfg, normalized);
}

Tensor grad_e_ff(const Tensor& X, const Bases& bases, const EnergyConfig& cfg) {
  check_bases(X, bases, cfg);
  EnergyConfig relu_cfg = cfg;
  relu_cfg.ff_variant = FfVariant::kRelu;
  return closed_form_ff_grad(X, bases, relu_cfg);
}

double e_attn_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, bool normalized) {
  check_bases(X, bases, cfg);
  Tape tape;
  return e_attn_expr(tape.constant(X), tape.constant(bases.W), cfg, normalized).value().item();
}

Tensor grad_e_attn_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, GradPath path) {
  check_bases(X, bases, cfg);
  if (path == GradPath::kClosedForm) return closed_form_attn_grad(X, bases, cfg);
  return autodiff_grad(
      [&](Var x) { return e_attn_expr(x, x.tape().constant(bases.W), cfg, false); }, X);
}

double e_ff_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, bool normalized) {
  check_bases(X, bases, cfg);
  Tape tape;
  const double e = e_ff_expr(tape.constant(X), tape.constant(bases.D), cfg, normalized).value().item();
  if (!std::isfinite(e)) throw NumericError("feedforward energy is not finite");
  return e;
}

Tensor grad_e_ff_variant(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, GradPath path) {
  check_bases(X, bases, cfg);
  if (path == GradPath::kClosedForm) return closed_form_ff_grad(X, bases, cfg);
  return autodiff_grad([&](Var x) { return e_ff_expr(x, x.tape().constant(bases.D), cfg, false); }, X);
}

EnergyReport energy_report(const Tensor& X, const Bases& bases, const EnergyConfig& cfg, bool normalized) {
  check_bases(X, bases, cfg);
  EnergyReport report;
  Tape tape;
  Var projections = tape.constant(matmul(bases.W, X, true, false));
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const double e = attn_head_energy(head_projection(projections, h, cfg.p, normalized), cfg).value().item();
    if (!std::isfinite(e)) throw NumericError("attention energy of head " + std::to_string(h) + " is not finite");
    report.e_attn_per_head.push_back(e);
    report.e_attn += e;
  }
  report.e_ff = e_ff_variant(X, bases, cfg, normalized);
  report.e_total = report.e_attn + report.e_ff;
  return report;
}

double e_mch(const Tensor& x, const Tensor& patterns) {
  const std::size_t d = x.numel();
  if (patterns.rank() != 2 || patterns.rows() != d) {
    throw DimensionError("e_mch: patterns " + shape_string(patterns.shape()) + " for state of size " +
                         std::to_string(d));
  }
  const Tensor col = x.reshaped(Shape{d, 1});
  const Tensor scores = matmul(patterns, col, true, false);
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  return -logsumexp(scores, Axis::kCols).item() + 0.5 * sq;
}

Tensor mch_update(const Tensor& x, const Tensor& patterns) {
  const std::size_t d = x.numel();
  if (patterns.rank() != 2 || patterns.rows() != d) {
    throw DimensionError("mch_update: patterns " + shape_string(patterns.shape()) + " for state of size " +
                         std::to_string(d));
  }
  const Tensor col = x.reshaped(Shape{d, 1});
  const Tensor weights = softmax(matmul(patterns, col, true, false), Axis::kCols);
  return matmul(patterns, weights).reshaped(x.shape());
}

}  // namespace hyperset
