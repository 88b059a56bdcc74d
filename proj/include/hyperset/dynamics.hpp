#pragma once

#include <cstdint>
#include <random>

#include "hyperset/block.hpp"
#include "hyperset/config.hpp"
#include "hyperset/diagnostics.hpp"

namespace hyperset {

// Q factor of a Gaussian matrix: a random rows x cols matrix with orthonormal columns.
Tensor random_orthonormal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

struct DynamicsSetup {
  BlockConfig block;
  HyperSetParams params;
  Tensor X0;  // columns rmsnorm-ed onto the radius-sqrt(d) sphere
};

DynamicsSetup make_dynamics_setup(const DynamicsConfig& cfg, std::uint64_t seed);

// Unrolls `steps` iterations with fixed scalar steps; trace rows as in forward_unroll.
EnergyTrace run_dynamics(const DynamicsConfig& cfg, std::uint64_t seed);

}  // namespace hyperset
