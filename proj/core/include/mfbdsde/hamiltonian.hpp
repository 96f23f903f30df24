#pragma once

#include "mfbdsde/problem.hpp"

namespace mfbdsde {

// H(t, y, z, u, mu, p, q) = <f, p> + <g, q> + h, with z and q flattened
// column-major (ny*l and ny*d). dp and dq reproduce f and g by bilinearity.
struct HamiltonianEval {
  double value = 0;
  VectorXd dy;  // R^ny
  VectorXd dz;  // R^(ny*l)
  VectorXd du;  // R^k
  VectorXd dp;  // = f
  VectorXd dq;  // = g
};

HamiltonianEval hamiltonian(const ProblemSpec& spec, const StepContext& ctx,
                            const VectorXd& y, const VectorXd& z, const VectorXd& u,
                            const VectorXd& p, const VectorXd& q, const MfContext& law);

// Law derivative of H in one coordinate block (selected by 'y', 'z' or 'u'):
// d_mu H(base theta with its p, q, law)(eval theta). The result has the
// dimension of the selected block at the evaluation point.
VectorXd hamiltonian_dmu(const ProblemSpec& spec, char block, const StepContext& ctx,
                         const VectorXd& yb, const VectorXd& zb, const VectorXd& ub,
                         const VectorXd& p, const VectorXd& q, const MfContext& law,
                         const VectorXd& ye, const VectorXd& ze, const VectorXd& ue);

}  // namespace mfbdsde
