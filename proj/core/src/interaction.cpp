#include "mfbdsde/interaction.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

#include "mfbdsde/law.hpp"

namespace mfbdsde {

namespace {

double operator_norm(const MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<MatrixXd>(m).singularValues()(0);
}

}  // namespace

VectorXd l_derivative(const LDerivativeSpec& spec, const VectorXd& base,
                      const MatrixXd& support, const VectorXd& eval) {
  switch (spec.kind) {
    case InteractionKind::scalar: {
      double m = scalar_functional(support, spec.phi);
      return spec.dr_outer(base, m) * spec.dphi(eval);
    }
    case InteractionKind::first_order:
      return spec.dsecond(base, eval);
    case InteractionKind::linear_lq:
      return spec.constant;
    case InteractionKind::none:
      break;
  }
  throw std::logic_error("l_derivative: interaction kind none has no L-derivative");
}

CoefficientBounds validate_coefficient_bounds(
    const std::function<MatrixXd(const VectorXd&)>& dz_g,
    const std::function<MatrixXd(const VectorXd& base, const VectorXd& eval)>& dmuz_g,
    const MatrixXd& probe_points) {
  CoefficientBounds out;
  const int N = static_cast<int>(probe_points.rows());
  for (int i = 0; i < N; ++i) {
    VectorXd base = probe_points.row(i).transpose();
    if (dz_g) out.alpha1 = std::max(out.alpha1, operator_norm(dz_g(base)));
    if (dmuz_g) {
      double acc = 0;
      for (int j = 0; j < N; ++j) {
        double nrm = operator_norm(dmuz_g(base, probe_points.row(j).transpose()));
        acc += nrm * nrm;
      }
      out.alpha2 = std::max(out.alpha2, std::sqrt(acc / N));
    }
  }
  out.pass = out.alpha1 < 1.0 && out.alpha1 + out.alpha2 < 1.0;
  return out;
}

}  // namespace mfbdsde
