#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfbdsde/bdsde.hpp"
#include "mfbdsde/interaction.hpp"

namespace mfbdsde {

// Jacobian of a coefficient with respect to one local argument block,
// evaluated at (t, y, z, u, law): rows = coefficient output, cols = block dim.
using Partial = std::function<MatrixXd(const StepContext&, const VectorXd& y,
                                       const VectorXd& z, const VectorXd& u,
                                       const MfContext&)>;

// Law derivative d_mu c(base point, law)(evaluation point) for one coordinate
// block: rows = coefficient output, cols = block dim of the evaluation slot.
using PairwisePartial = std::function<MatrixXd(
    const StepContext&, const VectorXd& yb, const VectorXd& zb, const VectorXd& ub,
    const MfContext&, const VectorXd& ye, const VectorXd& ze, const VectorXd& ue)>;

// One coefficient (f, g or h) with every derivative the adjoint/variational
// machinery needs. Null evaluators mean identically zero.
struct CoefficientFn {
  Coefficient value;
  Partial dy, dz, du;
  PairwisePartial dmu_y, dmu_z, dmu_u;
};

// Terminal cost Phi(y_0, law(y_0)) with its y-gradient and law derivative.
struct TerminalCost {
  std::function<double(const VectorXd& y0, const MfContext&)> value;
  std::function<VectorXd(const VectorXd& y0, const MfContext&)> dy;
  // d_mu Phi(base, law)(eval); null = zero.
  std::function<VectorXd(const VectorXd& y_base, const MfContext&,
                         const VectorXd& y_eval)> dmu_y;
};

// Closed convex admissible set: a coordinate box, bounds possibly infinite.
struct BoxSet {
  VectorXd lo, hi;

  static BoxSet all_of(int k);  // (-inf, +inf)^k
  static BoxSet interval(double lo, double hi, int k = 1);
  bool contains(const VectorXd& u, double tol = 0.0) const;
  VectorXd clamp(const VectorXd& u) const;
};

// Scalar linear-quadratic data: every coefficient is linear in (y, z, u) and
// their means, the running and terminal costs are quadratic. Overlined
// constants weight the mean terms.
struct LqCoefficients {
  double f1 = 0, f2 = 0, f3 = 0, f1_bar = 0, f2_bar = 0, f3_bar = 0;
  double g1 = 0, g2 = 0, g3 = 0, g1_bar = 0, g2_bar = 0, g3_bar = 0;
  double h1 = 0, h2 = 0, h3 = 1, h1_bar = 0, h2_bar = 0, h3_bar = 0;
  double phi = 0, phi_bar = 0;
};

// Scalar-interaction building blocks: c(t, theta, mu) = chat(t, theta, r) with
// r = E[stat(theta)] under mu. All maps are on scalars (n = l = d = k = 1).
struct ScalarStatistic {
  std::function<double(double y, double z, double u)> value, dy, dz, du;
};
struct ScalarOuter {
  std::function<double(double t, double y, double z, double u, double r)> value,
      dy, dz, du, dr;
};
struct ScalarTerminal {
  // Phi(y0, mu) = phihat(y0, E[gamma(y0)]).
  std::function<double(double y, double r)> value, dy, dr;
  std::function<double(double y)> gamma, dgamma;
};

// First-order interaction: c(t, theta, mu) = E~[khat(t, theta, theta~)], with
// partials in the first (d1*) and second (d2*) argument blocks. Scalars only.
struct PairKernel {
  std::function<double(double t, double y, double z, double u, double yp,
                       double zp, double up)> value,
      d1y, d1z, d1u, d2y, d2z, d2u;
};
struct PairTerminal {
  // Phi(y0, mu) = E~[phihat(y0, y0~)].
  std::function<double(double y, double yp)> value, d1, d2;
};

// The full coefficient package of one control problem.
struct ProblemSpec {
  int ny = 1, l = 1, d = 1, k = 1;
  InteractionKind kind = InteractionKind::none;
  CoefficientFn f;  // drift, R^ny
  CoefficientFn g;  // backward integrand, R^(ny*d) flattened column-major
  CoefficientFn h;  // running cost, scalar (size-1 value)
  TerminalCost terminal_cost;
  std::function<VectorXd(const DriverPaths&, int particle)> xi;
  BoxSet U;
  std::optional<LqCoefficients> lq;
  bool uses_law = false;

  // State-equation view consumed by solve_mf_bdsde / solve_on_tree.
  BdsdeProblem state_problem() const;
};

ProblemSpec make_lq_problem(const LqCoefficients& c,
                            std::function<VectorXd(const DriverPaths&, int)> xi,
                            BoxSet U = BoxSet::all_of(1));

ProblemSpec make_scalar_problem(const ScalarOuter& f, const ScalarStatistic& phi_f,
                                const ScalarOuter& g, const ScalarStatistic& phi_g,
                                const ScalarOuter& h, const ScalarStatistic& psi_h,
                                const ScalarTerminal& Phi,
                                std::function<VectorXd(const DriverPaths&, int)> xi,
                                BoxSet U = BoxSet::all_of(1));

ProblemSpec make_first_order_problem(const PairKernel& f, const PairKernel& g,
                                     const PairKernel& h, const PairTerminal& Phi,
                                     std::function<VectorXd(const DriverPaths&, int)> xi,
                                     BoxSet U = BoxSet::all_of(1));

// Checks the standing assumptions numerically; returns the names of the
// violated conditions (empty = pass). For LQ data the closed-form constraints
// are checked exactly; otherwise the smallness constants of g are estimated
// over a Gaussian probe sample.
std::vector<std::string> validate_problem(const ProblemSpec& spec,
                                          int probe_samples = 64,
                                          std::uint64_t seed = 1);

}  // namespace mfbdsde
