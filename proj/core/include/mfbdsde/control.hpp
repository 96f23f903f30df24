#pragma once

#include <string>
#include <vector>

#include "mfbdsde/adjoint.hpp"

namespace mfbdsde {

// Directional derivative (K, L) of the state in a control direction v; solves
// the linearized mean-field BDSDE with terminal value 0.
struct VariationalSolution {
  MatrixXd K;  // N x ((n+1)*ny)
  MatrixXd L;  // N x ((n+1)*ny*l), block n duplicates n-1
  bool converged = true;
  std::string status;
  int ny = 1, l = 1;

  MatrixXd K_at(int point) const;
  MatrixXd L_at(int point) const;
};

// J(u): left-endpoint time quadrature of h plus the terminal cost at t_0.
// control is N x ((n+1)*k) or null.
double evaluate_cost(const ProblemSpec& spec, const EnsembleSolution& state,
                     const MatrixXd* control, const TimeGrid& grid);

// Per-particle summands of J (their mean is evaluate_cost); used for paired
// standard errors under common random numbers.
VectorXd cost_contributions(const ProblemSpec& spec, const EnsembleSolution& state,
                            const MatrixXd* control, const TimeGrid& grid);

VariationalSolution solve_variational(const ProblemSpec& spec,
                                      const EnsembleSolution& state,
                                      const MatrixXd* control, const MatrixXd& v,
                                      const DriverPaths& paths,
                                      const SolverConfig& config);

// dJ(u; v) through the linearized state (cost expansion in (K, L, v)).
double gateaux_route1(const ProblemSpec& spec, const EnsembleSolution& state,
                      const MatrixXd* control, const VariationalSolution& var,
                      const MatrixXd& v, const TimeGrid& grid);

// dJ(u; v) through the adjoint: integrate <d_u H + pairwise d_muu H, v>.
double gateaux_route2(const ProblemSpec& spec, const EnsembleSolution& state,
                      const AdjointSolution& adjoint, const MatrixXd* control,
                      const MatrixXd& v, const TimeGrid& grid);

struct GateauxResult {
  double route1 = 0, route2 = 0, gap = 0;
};

// Computes both routes (route 1 solves the variational equation internally).
GateauxResult gateaux_derivative(const ProblemSpec& spec, const EnsembleSolution& state,
                                 const AdjointSolution& adjoint, const MatrixXd* control,
                                 const MatrixXd& v, const DriverPaths& paths,
                                 const SolverConfig& config);

// Coordinate-wise clipping to the box, block k per grid point. Idempotent.
MatrixXd project(const MatrixXd& u, const BoxSet& U, int k);

// d_u H + E~[d_muu H(other)(self)] per particle per grid point, N x ((n+1)*k).
MatrixXd gradient_field(const ProblemSpec& spec, const EnsembleSolution& state,
                        const AdjointSolution& adjoint, const MatrixXd* control,
                        const TimeGrid& grid);

// Gradient of the discrete cost differentiated through the scheme's own
// conditional-expectation operators. The identities used in the transposition
// only need the per-point projections to be self-adjoint, not nested, so the
// result stays exact under regression as well as on trees. With adapted=false
// the raw entrywise gradient with respect to the control matrix is returned
// (it matches per-entry difference quotients); with adapted=true each grid
// point's block is projected onto that point's information, which is the
// gradient over feedback controls in the projection span and the field whose
// stationarity the maximum principle asserts. Law channels are supported for
// the linear kind only.
MatrixXd discrete_gradient_field(const ProblemSpec& spec, const EnsembleSolution& state,
                                 const MatrixXd* control, const DriverPaths& paths,
                                 const SolverConfig& config, bool adapted = true);

// Pointwise violation of the variational inequality <grad, a - u> >= 0 over
// the box: per coordinate, the gradient's negative part at the lower bound,
// positive part at the upper bound, absolute value in the interior. Returns
// the per-(particle, point) Euclidean norm, N x (n+1).
MatrixXd smp_residual_field(const ProblemSpec& spec, const MatrixXd& grad,
                            const MatrixXd& u);

// Sup of smp_residual_field over particles and points 0..n-1.
double smp_residual(const ProblemSpec& spec, const MatrixXd& grad, const MatrixXd& u);

struct OptimizerConfig {
  SolverConfig solver;
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo = 1e-4;
  int max_halvings = 30;
  int max_iters = 50;
  double tol = 1e-3;
};

struct OptimizationReport {
  std::vector<double> cost_history;      // J at accepted iterates
  std::vector<double> gradient_norms;    // ensemble-time L2
  std::vector<double> step_sizes;        // accepted step lengths
  std::vector<double> smp_residuals;     // sup residual per iterate
  std::string termination;
};

struct OptimizeResult {
  MatrixXd u;
  OptimizationReport report;
  EnsembleSolution state;    // at the returned control
  AdjointSolution adjoint;
};

// Projected gradient with Armijo backtracking; state and adjoint re-solved at
// every accepted iterate. J never increases between accepted iterates.
OptimizeResult optimize(const ProblemSpec& spec, const MatrixXd& initial_u,
                        const DriverPaths& paths, const OptimizerConfig& config);

struct SufficiencyReport {
  bool convexity_pass = false;
  int convexity_violations = 0;
  double worst_convexity_gap = 0;  // most negative convexity margin observed
  bool dominance_pass = false;
  int dominance_violations = 0;
  double worst_margin = 0;  // most negative (J(pert) - J(u) + 3 SE) observed
};

// (a) samples segment pairs to probe convexity of H and Phi in (theta, mu);
// (b) checks J(u) <= J(project(u + eps v)) for random admissible directions
// under common random numbers, within 3 paired standard errors.
SufficiencyReport verify_sufficiency(const ProblemSpec& spec, const MatrixXd& u,
                                     const DriverPaths& paths,
                                     const SolverConfig& config,
                                     int m_directions = 100,
                                     const std::vector<double>& eps_grid = {0.1},
                                     std::uint64_t seed = 99);

}  // namespace mfbdsde
