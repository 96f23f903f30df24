#pragma once

#include <string>
#include <vector>

#include "mfbdsde/hamiltonian.hpp"

namespace mfbdsde {

// Driver swap under s = T - t: the backward driver's increments, re-indexed
// from the end, become the forward driver of the reversed clock and vice
// versa (dims l and d trade places). Cumulative fields are rebuilt, so the
// sigma-field at reversed point j is the original one at point n - j.
// Applying the transform twice returns the original arrays bit-exactly.
DriverPaths reverse_time_transform(const DriverPaths& paths);

// Reverses point-indexed column blocks (block i <-> block n - i).
MatrixXd reverse_point_blocks(const MatrixXd& m, int block);

struct AdjointSolution {
  // Column blocks indexed by grid point; q at point 0 duplicates point 1
  // (q is the backward integrand, defined per step at its right endpoint).
  MatrixXd p;  // N x ((n+1)*ny)
  MatrixXd q;  // N x ((n+1)*ny*d)
  std::vector<double> picard_displacements;
  std::vector<double> regression_residuals;
  bool converged = true;
  std::string status;
  int ny = 1, d = 1;

  MatrixXd p_at(int point) const;
  MatrixXd q_at(int point) const;
};

// Initial datum: p_0 = d_y Phi(y_0, law) + mean over particles j of
// d_mu Phi(y_0^(j), law)(y_0^(self)). y0 is N x ny.
MatrixXd adjoint_initial(const ProblemSpec& spec, const MatrixXd& y0);

// Solves dp = [d_y H + E~ d_muy H(other)(self)] dt
//           + [d_z H + E~ d_muz H(other)(self)] dW - q dB(backward),
// p_0 from adjoint_initial, by reversing time and delegating to the BDSDE
// solver (the reversed equation is a BDSDE with unknown (p, q) and terminal
// datum p_0). Mean-field terms are O(N^2) pairwise sums (N capped at 4096)
// with an O(N) shortcut for the linear-LQ kind.
AdjointSolution solve_adjoint(const ProblemSpec& spec, const EnsembleSolution& state,
                              const MatrixXd* control, const DriverPaths& paths,
                              const SolverConfig& config);

}  // namespace mfbdsde
