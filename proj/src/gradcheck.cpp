#include "hyperset/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

constexpr double kKinkMargin = 1e-3;

struct Instance {
  Tensor X;
  Bases bases;
  EnergyConfig cfg;
  std::string shape;
};

Tensor gaussian(Shape shape, double std, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Instance make_instance(const GradCheckCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t d = std::uniform_int_distribution<int>(0, 1)(rng) ? 8 : 4;
  const std::size_t heads = std::size_t{1} << std::uniform_int_distribution<int>(0, 2)(rng);
  const std::size_t n = static_cast<std::size_t>(std::uniform_int_distribution<int>(2, 6)(rng));
  const std::size_t M = d * static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 2)(rng));
  Instance in;
  in.cfg = EnergyConfig::make(d, heads, M);
  in.cfg.attn_variant = c.attn;
  in.cfg.ff_variant = c.ff;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  in.bases = Bases{gaussian(Shape{d, d}, s, rng), gaussian(Shape{d, M}, s, rng)};
  in.X = gaussian(Shape{d, n}, 1.0, rng);
  if (!c.attention && c.ff == FfVariant::kRelu) {
    // Keep every D^T x away from the ReLU kink so central differences are valid.
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const Tensor y = matmul(in.bases.D, in.X, true, false);
      const bool clear = std::all_of(y.data().begin(), y.data().end(),
                                     [](double v) { return std::abs(v) >= kKinkMargin; });
      if (clear) break;
      in.X = gaussian(Shape{d, n}, 1.0, rng);
    }
  }
  in.shape = "d=" + std::to_string(d) + " H=" + std::to_string(heads) + " N=" + std::to_string(n) +
             " M=" + std::to_string(M);
  return in;
}

bool matches_filter(const GradCheckCase& c, const std::string& filter) {
  if (c.name == filter) return true;
  return c.attention ? to_string(c.attn) == filter : to_string(c.ff) == filter;
}

}  // namespace

std::vector<GradCheckCase> grad_check_cases() {
  std::vector<GradCheckCase> cases;
  for (AttnVariant a : {AttnVariant::kBiSoftmax, AttnVariant::kSigmoid, AttnVariant::kLinear}) {
    cases.push_back({"attn_" + std::string(to_string(a)), true, a, FfVariant::kRelu});
  }
  for (FfVariant f : {FfVariant::kRelu, FfVariant::kSoftmax, FfVariant::kGated}) {
    cases.push_back({"ff_" + std::string(to_string(f)), false, AttnVariant::kBiSoftmax, f});
  }
  return cases;
}

std::vector<GradCheckRow> run_grad_check(const GradCheckOptions& options) {
  std::vector<GradCheckRow> rows;
  const auto cases = grad_check_cases();
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const GradCheckCase& c = cases[ci];
    if (options.variant && !matches_filter(c, *options.variant)) continue;
    GradCheckRow row;
    row.name = c.name;
    for (std::size_t k = 0; k < options.instances; ++k) {
      const std::uint64_t seed = options.seed * 1000003ULL + ci * 10007ULL + k;
      const Instance in = make_instance(c, seed);
      auto energy = [&](const Tensor& x) {
        return c.attention ? e_attn_variant(x, in.bases, in.cfg) : e_ff_variant(x, in.bases, in.cfg);
      };
      const Tensor fd = finite_diff(energy, in.X);
      Tensor closed = c.attention ? grad_e_attn_variant(in.X, in.bases, in.cfg, GradPath::kClosedForm)
                                  : grad_e_ff_variant(in.X, in.bases, in.cfg, GradPath::kClosedForm);
      if (options.flip_sign) closed = scale(closed, -1.0);
      const Tensor tape = c.attention ? grad_e_attn_variant(in.X, in.bases, in.cfg, GradPath::kAutodiff)
                                      : grad_e_ff_variant(in.X, in.bases, in.cfg, GradPath::kAutodiff);
      const double e_closed = relative_error(closed, fd);
      const double e_tape = relative_error(tape, fd);
      if (e_closed > row.max_err_closed || k == 0) {
        row.worst_seed = seed;
        row.worst_shape = in.shape;
      }
      row.max_err_closed = std::max(row.max_err_closed, e_closed);
      row.max_err_autodiff = std::max(row.max_err_autodiff, e_tape);
      ++row.instances;
    }
    row.passed = row.max_err_closed <= options.tolerance && row.max_err_autodiff <= options.tolerance;
    rows.push_back(row);
  }
  if (rows.empty() && options.variant) throw ConfigError("no gradient check case matches '" + *options.variant + "'");
  return rows;
}

}  // namespace hyperset
