#pragma once

#include <string>
#include <vector>

#include "mfbdsde/bdsde.hpp"
#include "mfbdsde/problem.hpp"

namespace mfbdsde {

// Law of the quadruple zeta = (y, p, z, q) at one grid point, reduced to the
// block means (every shipped coupling is through expectations).
struct ZetaLaw {
  VectorXd my, mp, mz, mq;
};

// Coefficient of the coupled system evaluated per particle.
using ZetaCoefficient =
    std::function<VectorXd(const StepContext&, const VectorXd& y, const VectorXd& p,
                           const VectorXd& z, const VectorXd& q, const ZetaLaw&)>;

// Fully coupled time-symmetric system
//   -dy = f(zeta, law) dt + g(zeta, law) dB(backward) - z dW,   y_T = xi,
//    dp = F(zeta, law) dt + G(zeta, law) dW - q dB(backward),   p_0 = Psi(y_0, E[y_0]).
// Offsets (f0, g0, F0, G0, Psi0) enter additively as in the homotopy family.
struct FbdsdeSpec {
  int ny = 1, l = 1, d = 1;
  ZetaCoefficient f, g;  // y-equation, R^ny and R^(ny*d); null = 0
  ZetaCoefficient F, G;  // p-equation, R^ny and R^(ny*l); null = 0
  std::function<VectorXd(const VectorXd& y0, const VectorXd& mean_y0)> Psi;  // null = 0
  std::function<VectorXd(const DriverPaths&, int particle)> xi;

  // Deterministic time offsets; null = 0. Psi0 empty = 0.
  std::function<VectorXd(const StepContext&)> f0, g0, F0, G0;
  VectorXd Psi0;

  // Declared constants for the assumption probes and the homotopy.
  double k1 = 0, k2 = 0, k3 = 0, k4 = 0;
  double lambda1 = 0, lambda2 = 0;

  // Variant with damped (p, q) coupling through C p + D q (requires l = d = 1
  // and square C, D); empty C selects the plain homotopy in (k2, k3).
  MatrixXd C, D;
  double c1 = 0, c2 = 0, c3 = 0;

  bool b_variant() const { return C.size() > 0; }
};

struct ZetaFields {
  MatrixXd y, p;  // N x ((n+1)*ny)
  MatrixXd z;     // N x ((n+1)*ny*l)
  MatrixXd q;     // N x ((n+1)*ny*d)
};

struct ZetaSolution {
  ZetaFields fields;
  std::vector<double> displacements;  // inner alternation displacement per sweep
  bool converged = true;
  std::string status;
  int ny = 1, l = 1, d = 1;

  MatrixXd y_at(int point) const;
  MatrixXd p_at(int point) const;
  MatrixXd z_at(int point) const;
  MatrixXd q_at(int point) const;
};

struct ContinuationConfig {
  SolverConfig solver;
  double delta = 0.1;
  double delta_min = 1e-3;
  double fixed_point_tol = 1e-8;
  int max_fixed_point = 60;
  int max_inner = 300;     // alternation sweeps per linear solve
  double inner_tol = 1e-10;
};

struct ContinuationState {
  double alpha = 0;
  double delta = 0;
  ZetaFields iterate;
  std::vector<double> alpha_history;       // accepted alpha values
  std::vector<double> delta_history;       // delta used at each accepted step
  std::vector<double> contraction_ratios;  // per accepted step: worst ratio seen
  std::vector<double> displacement_history;  // fixed-point displacements, flat
  bool success = false;
  std::string status;
};

// Ensemble metric of the continuation fixed point: sqrt of E[|y_0 gap|^2] plus
// the dt-weighted ensemble mean square gap of all four fields.
double zeta_distance(const ZetaFields& a, const ZetaFields& b, const TimeGrid& grid,
                     int ny, int l, int d);

// The alpha = 0 base system: -dy = (-k3 p + f0)dt + (-k3 q + g0)dB - z dW,
// dp = (k2 y + F0)dt + (k2 z + G0)dW - q dB, p_0 = y_0 + Psi0 (plain variant);
// the C/D variant replaces the relaxation terms by -(C^T C p + C^T D q) and
// -(D^T C p + D^T D q) in the y-equation and drops them in the p-equation,
// with p_0 = Psi0.
ZetaSolution solve_alpha0(const FbdsdeSpec& spec, const DriverPaths& paths,
                          const ContinuationConfig& config);

// One application of the homotopy map at level alpha0: solves the alpha0
// system with delta-weighted forcing frozen at zbar.
ZetaSolution contraction_step(const FbdsdeSpec& spec, double alpha0, double delta,
                              const ZetaFields& zbar, const DriverPaths& paths,
                              const ContinuationConfig& config);

// Method of continuation from alpha = 0 to 1, advancing by delta with Picard
// iteration of contraction_step and halving delta on fixed-point failure.
ZetaSolution continuation_solve(const FbdsdeSpec& spec, const DriverPaths& paths,
                                const ContinuationConfig& config,
                                ContinuationState* state = nullptr,
                                const ZetaFields* initial = nullptr);

// RMS residuals of the two integrated identities at each grid point:
// backward: y_i - xi - sum_{j>=i}[f_{j+1} dt + g_{j+1} dB_j - z_j dW_j],
// forward:  p_i - p_0 - sum_{j<i}[F_j dt + G_j dW_j - q_{j+1} dB_j],
// with coefficients evaluated on the solved fields at the solver's endpoints.
struct FbdsdeResiduals {
  VectorXd backward;  // per grid point
  VectorXd forward;
};
FbdsdeResiduals fbdsde_residuals(const FbdsdeSpec& spec, const ZetaSolution& sol,
                                 const DriverPaths& paths);

struct AssumptionReport {
  bool a1_pass = false, a2_pass = false;
  bool b1_pass = false, b2_pass = false;
  double lipschitz_ratio = 0;    // worst |A - A'| / (|zeta gap| + W2)
  double psi_lipschitz_ratio = 0;
  double a2_k2 = 0, a2_k3 = 0, a2_k4 = 0;  // feasible constants found, if any
  double worst_monotonicity = 0;  // max normalized E<A - A', zeta gap>
  double b1_c1 = 0, b1_c2 = 0;
  double psi_margin = 0;  // min E<Psi gap, y0 gap> / E|y0 gap|^2
};

// Samples coupled ensembles and probes (A1)-(A2) and, when C/D are declared,
// (B1)-(B2). The monotonicity probes search a grid of candidate constants;
// the structured single-field perturbations are included so degenerate
// directions are exercised.
AssumptionReport probe_assumptions(const FbdsdeSpec& spec, int samples = 40,
                                   std::uint64_t seed = 5);

// LQ Hamiltonian system with the closed-form control substituted: without
// E[u] terms the control is u = -(f3 p + g3 q)/h3; with them the general
// pointwise formula and its mean relation are used. Solved by continuation.
struct LqSystemSolution {
  ZetaSolution zeta;
  MatrixXd u;            // N x (n+1), closed-form control on the solved fields
  double eu_gap = 0;     // worst gap between mean(u) and the mean relation
  ContinuationState trace;
};

// Builds the coupled-system spec for the LQ Hamiltonian system (control
// substituted). Requires h3 > 0 and, when E[u] terms are present, h3 + h3_bar > 0.
FbdsdeSpec make_lq_hamiltonian_spec(const LqCoefficients& c,
                                    std::function<VectorXd(const DriverPaths&, int)> xi);

LqSystemSolution solve_lq_hamiltonian_system(const LqCoefficients& c,
                                             std::function<VectorXd(const DriverPaths&, int)> xi,
                                             const DriverPaths& paths,
                                             const ContinuationConfig& config);

}  // namespace mfbdsde
