#pragma once

#include <functional>

#include "mfbdsde/common.hpp"

namespace mfbdsde {

// The three structured families of measure dependence that are implemented in
// closed form. The abstract lift-derivative definition is not executable here;
// these cover every coefficient shape the solvers ship.
enum class InteractionKind { none, scalar, first_order, linear_lq };

// Everything needed to evaluate the derivative of a coefficient with respect
// to the law in one coordinate block (y, z or u):
//   scalar:      c(theta, mu) = c_hat(theta, integral phi dmu)
//                d_mu c(theta, mu)(x) = dr_chat(theta, m) * dphi(x)
//   first_order: c(theta, mu) = integral c_hat(theta, x') dmu(x')
//                d_mu c(theta, mu)(x) = d_x' c_hat(theta, x)
//   linear_lq:   c depends on mu through E[x] with constant matrix weight.
struct LDerivativeSpec {
  InteractionKind kind = InteractionKind::none;

  // scalar kind
  std::function<double(const VectorXd&)> phi;
  std::function<VectorXd(const VectorXd&)> dphi;
  std::function<double(const VectorXd& base, double r)> dr_outer;

  // first_order kind: partial of the kernel in its second argument block
  std::function<VectorXd(const VectorXd& base, const VectorXd& eval)> dsecond;

  // linear_lq kind
  VectorXd constant;
};

// d_mu c at (base point, law)(evaluation point). `support` holds the law's
// points for the differentiated coordinate block, one per row.
VectorXd l_derivative(const LDerivativeSpec& spec, const VectorXd& base,
                      const MatrixXd& support, const VectorXd& eval);

struct CoefficientBounds {
  double alpha1 = 0.0;  // sup of the operator norm of dg/dz
  double alpha2 = 0.0;  // sup of the law-second-moment norm of d_{mu_z} g
  bool pass = false;    // alpha1 < 1 and alpha1 + alpha2 < 1
};

// Estimates the smallness constants of the backward integrand g over a probe
// sample (rows of probe_points are z-block arguments; dmuz_g may be empty).
CoefficientBounds validate_coefficient_bounds(
    const std::function<MatrixXd(const VectorXd&)>& dz_g,
    const std::function<MatrixXd(const VectorXd& base, const VectorXd& eval)>& dmuz_g,
    const MatrixXd& probe_points);

}  // namespace mfbdsde
