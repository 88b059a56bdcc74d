#include "hyperset/dynamics.hpp"

#include <cmath>

#include <Eigen/QR>

#include "hyperset/errors.hpp"

namespace hyperset {

Tensor random_orthonormal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  if (cols > rows) throw ConfigError("cannot draw " + std::to_string(cols) + " orthonormal columns in dimension " +
                                     std::to_string(rows));
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = dist(rng);
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() *
                            Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Tensor out(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return out;
}

DynamicsSetup make_dynamics_setup(const DynamicsConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DynamicsSetup s;
  s.block.energy = EnergyConfig::make(cfg.d, cfg.heads, cfg.M);
  s.block.L = std::max<std::size_t>(cfg.steps, 1);
  const std::size_t M = s.block.energy.M;
  Bases bases;
  if (cfg.bases == "orthogonal") {
    bases.W = random_orthonormal(cfg.d, cfg.d, rng);
    // More than d bases cannot be orthogonal; fall back to unit-norm Gaussian columns.
    if (M <= cfg.d) {
      bases.D = random_orthonormal(cfg.d, M, rng);
    } else {
      std::normal_distribution<double> dist(0.0, 1.0);
      Tensor g(Shape{cfg.d, M});
      for (double& v : g.data()) v = dist(rng);
      bases.D = scale(rmsnorm(g), 1.0 / std::sqrt(static_cast<double>(cfg.d)));
    }
  } else {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
    bases.W = Tensor(Shape{cfg.d, cfg.d});
    bases.D = Tensor(Shape{cfg.d, M});
    for (double& v : bases.W.data()) v = dist(rng);
    for (double& v : bases.D.data()) v = dist(rng);
  }
  s.params = make_block_params(std::move(bases), s.block);
  std::normal_distribution<double> unit(0.0, 1.0);
  Tensor X(Shape{cfg.d, cfg.tokens});
  for (double& v : X.data()) v = unit(rng);
  s.X0 = rmsnorm(X);
  return s;
}

EnergyTrace run_dynamics(const DynamicsConfig& cfg, std::uint64_t seed) {
  const DynamicsSetup s = make_dynamics_setup(cfg, seed);
  UnrollOptions options;
  options.fixed_steps = FixedSteps{cfg.alpha, cfg.gamma};
  return forward_unroll(s.X0, s.params, s.block, cfg.steps, options).trace;
}

}  // namespace hyperset
