#include <gtest/gtest.h>

#include "hyperset/dynamics.hpp"

using namespace hyperset;

TEST(Dynamics, OrthonormalColumns) {
  std::mt19937_64 rng(1);
  const Tensor Q = random_orthonormal(16, 8, rng);
  const Tensor G = matmul(Q, Q, true, false);
  EXPECT_LT(max_abs(sub(G, Tensor::identity(8))), 1e-12);
}

TEST(Dynamics, SetupSatisfiesConstraint) {
  DynamicsConfig cfg;
  const DynamicsSetup s = make_dynamics_setup(cfg, 3);
  EXPECT_EQ(s.X0.shape(), (Shape{64, 32}));
  for (std::size_t j = 0; j < 32; ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < 64; ++i) sq += s.X0(i, j) * s.X0(i, j);
    EXPECT_NEAR(sq, 64.0, 1e-3);
  }
}

TEST(Dynamics, DefaultRunDescends) {
  DynamicsConfig cfg;
  const EnergyTrace t = run_dynamics(cfg, 7);
  ASSERT_EQ(t.rows.size(), cfg.steps + 1);
  EXPECT_TRUE(energy_nonincreasing(t));
  EXPECT_LT(t.rows.back().e_total, t.rows.front().e_total);
}

TEST(Dynamics, SeedDeterministic) {
  DynamicsConfig cfg;
  cfg.steps = 4;
  EXPECT_EQ(run_dynamics(cfg, 2), run_dynamics(cfg, 2));
  EXPECT_NE(run_dynamics(cfg, 2), run_dynamics(cfg, 3));
}

TEST(Dynamics, GaussianBasesAndWideFeedforward) {
  DynamicsConfig cfg;
  cfg.steps = 3;
  cfg.M = 128;
  cfg.bases = "gaussian";
  EXPECT_EQ(run_dynamics(cfg, 1).rows.size(), 4u);
}
