#pragma once

#include <memory>

#include "mfbdsde/common.hpp"
#include "mfbdsde/paths.hpp"

namespace mfbdsde {

struct RegressionConfig {
  int degree = 2;        // total polynomial degree over the features
  double ridge = 1e-10;  // Tikhonov weight on the normal equations
  bool tree_exact = false;
};

// Projection onto the information available at one grid point: in Monte Carlo
// mode a ridge least-squares fit on polynomials of (W value, B tail); in tree
// mode the exact average over paths sharing the point's sign signature.
// One factorization serves any number of target columns.
class ConditionalExpectation {
 public:
  ConditionalExpectation(const DriverPaths& paths, int step, const RegressionConfig& cfg);
  ~ConditionalExpectation();
  ConditionalExpectation(ConditionalExpectation&&) noexcept;

  // targets: one column per quantity, one row per particle. Returns the
  // fitted conditional expectation per particle.
  MatrixXd apply(const MatrixXd& targets) const;

  // Root-mean-square of targets minus fit, per column.
  VectorXd residual_rms(const MatrixXd& targets) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Exponent tuples of all monomials in `vars` variables with total degree
// <= degree, graded order, constant first.
std::vector<std::vector<int>> monomial_exponents(int vars, int degree);

}  // namespace mfbdsde
