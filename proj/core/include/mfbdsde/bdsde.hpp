#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfbdsde/common.hpp"
#include "mfbdsde/paths.hpp"
#include "mfbdsde/regression.hpp"

namespace mfbdsde {

struct StepContext {
  double t = 0;
  int step = 0;
  int particle = 0;
};

// Empirical law of the unknown fields at one grid point, support rows aligned
// with particle indices so pairwise sums can pick up exogenous per-particle
// data by index. Blocks may be null when absent.
struct MfContext {
  const MatrixXd* Y = nullptr;
  const MatrixXd* Z = nullptr;
  const MatrixXd* U = nullptr;
  VectorXd my, mz, mu;  // column means of the present blocks
  int N = 0;
};

// Coefficient evaluated per particle; z is the ny x l block flattened
// column-major, u the control value (empty when no control is attached).
using Coefficient =
    std::function<VectorXd(const StepContext&, const VectorXd& y, const VectorXd& z,
                           const VectorXd& u, const MfContext&)>;

// -dy = f dt + g dB(backward) - z dW,  y_T = terminal(path).
struct BdsdeProblem {
  int ny = 1;  // unknown dimension
  int l = 1;   // forward driver dimension; z is ny x l
  int d = 1;   // backward driver dimension; g is ny x d
  Coefficient f;  // null means 0
  Coefficient g;  // null means 0
  std::function<VectorXd(const DriverPaths&, int particle)> terminal;
  bool uses_law = false;  // iterate the Picard loop on the (y, z) law
};

struct SolverConfig {
  RegressionConfig regression;
  int max_picard = 50;
  double picard_tol = 1e-8;
};

struct EnsembleSolution {
  // Column blocks indexed by grid point; z at point n duplicates point n-1.
  MatrixXd y;  // N x ((n+1) * ny)
  MatrixXd z;  // N x ((n+1) * ny * l)
  std::vector<double> picard_displacements;  // law displacement per iteration
  std::vector<double> regression_residuals;  // per-step rms, last iteration
  bool converged = true;
  std::string status;

  MatrixXd y_at(int point) const;
  MatrixXd z_at(int point) const;
  int ny = 1, l = 1;
};

// Backward regression scheme with the law frozen per Picard iteration:
//   target T_i = y_{i+1} + f_{i+1} dt + g_{i+1} dB_i          (right endpoint
//   for the backward integrand), then at the step-i sigma-field
//   z_i = E[(T_i - E[T_i]) dW_i^T | F_i] / dt,
//   y_i = E[T_i - z_i dW_i | F_i]                              (the martingale
//   part of the target is removed before fitting y; the conditional mean is
//   unchanged because dW_i is independent of F_i).
// control: N x ((n+1)*k) per-grid-point values, or null.
EnsembleSolution solve_mf_bdsde(const BdsdeProblem& problem, const DriverPaths& paths,
                                const MatrixXd* control, int k,
                                const SolverConfig& config);

// RMS over particles, per grid point, of the integrated identity
//   y_i - xi - sum_{j>=i} f_{j+1} dt - sum g_{j+1} dB_j + sum z_j dW_j.
VectorXd residual_check(const BdsdeProblem& problem, const EnsembleSolution& solution,
                        const DriverPaths& paths, const MatrixXd* control, int k);

// Builds the per-step MfContext over explicitly given support blocks.
MfContext make_mf_context(const MatrixXd* Y, const MatrixXd* Z, const MatrixXd* U);

}  // namespace mfbdsde
