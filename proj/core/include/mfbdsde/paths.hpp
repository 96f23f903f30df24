#pragma once

#include <cstdint>

#include "mfbdsde/common.hpp"
#include "mfbdsde/grid.hpp"

namespace mfbdsde {

enum class DriverMode { gaussian, bernoulli_tree };

// Increments of the two independent drivers W (forward role, dim l) and
// B (backward role, dim d) for an ensemble of N particles, plus the cumulative
// quantities the solvers condition on: W values and B tails.
struct DriverPaths {
  TimeGrid grid;
  int N = 0;
  int l = 1;
  int d = 1;
  std::uint64_t seed = 0;
  DriverMode mode = DriverMode::gaussian;

  // Column blocks indexed by step: column i*l + c holds the step-i increment
  // of coordinate c.
  MatrixXd dw;  // N x (n_steps * l)
  MatrixXd db;  // N x (n_steps * d)

  // Column blocks indexed by grid point.
  MatrixXd w;      // N x ((n_steps + 1) * l), w at grid point i (w at 0 is 0)
  MatrixXd btail;  // N x ((n_steps + 1) * d), B_T - B_{t_i} (zero at i = n)

  VectorXd weights;  // per-particle probability weights, sum 1

  VectorXd w_increment(int particle, int step) const;
  VectorXd b_increment(int particle, int step) const;
  VectorXd w_value(int particle, int point) const;
};

DriverPaths sample_paths(const TimeGrid& grid, int N, int l, int d,
                         std::uint64_t seed, DriverMode mode);

// All 2^((l+d)*n_steps) sign paths with uniform weights. Throws CapacityError
// when the leaf count exceeds cap.
DriverPaths enumerate_tree_paths(const TimeGrid& grid, int l, int d,
                                 long cap = (1L << 20));

// B_T - B_{t_i}: the backward information available at grid point i.
VectorXd backward_increment_tail(const DriverPaths& paths, int particle, int step);

}  // namespace mfbdsde
