#include "mfbdsde/hamiltonian.hpp"

namespace mfbdsde {

namespace {

// Adds J^T * w to out, where J is the (possibly null) partial of a coefficient.
void accumulate(VectorXd& out, const Partial& partial, const StepContext& ctx,
                const VectorXd& y, const VectorXd& z, const VectorXd& u,
                const MfContext& law, const VectorXd& w) {
  if (!partial) return;
  MatrixXd jac = partial(ctx, y, z, u, law);
  if (out.size() == 0) out = VectorXd::Zero(jac.cols());
  out.noalias() += jac.transpose() * w;
}

}  // namespace

HamiltonianEval hamiltonian(const ProblemSpec& spec, const StepContext& ctx,
                            const VectorXd& y, const VectorXd& z, const VectorXd& u,
                            const VectorXd& p, const VectorXd& q, const MfContext& law) {
  HamiltonianEval out;
  out.dp = spec.f.value ? spec.f.value(ctx, y, z, u, law)
                        : VectorXd(VectorXd::Zero(spec.ny));
  out.dq = spec.g.value ? spec.g.value(ctx, y, z, u, law)
                        : VectorXd(VectorXd::Zero(spec.ny * spec.d));
  double h = spec.h.value ? spec.h.value(ctx, y, z, u, law)(0) : 0.0;
  out.value = out.dp.dot(p) + out.dq.dot(q) + h;

  const VectorXd one = VectorXd::Ones(1);
  out.dy = VectorXd::Zero(spec.ny);
  out.dz = VectorXd::Zero(spec.ny * spec.l);
  out.du = VectorXd::Zero(spec.k);
  accumulate(out.dy, spec.f.dy, ctx, y, z, u, law, p);
  accumulate(out.dy, spec.g.dy, ctx, y, z, u, law, q);
  accumulate(out.dy, spec.h.dy, ctx, y, z, u, law, one);
  accumulate(out.dz, spec.f.dz, ctx, y, z, u, law, p);
  accumulate(out.dz, spec.g.dz, ctx, y, z, u, law, q);
  accumulate(out.dz, spec.h.dz, ctx, y, z, u, law, one);
  accumulate(out.du, spec.f.du, ctx, y, z, u, law, p);
  accumulate(out.du, spec.g.du, ctx, y, z, u, law, q);
  accumulate(out.du, spec.h.du, ctx, y, z, u, law, one);
  return out;
}

VectorXd hamiltonian_dmu(const ProblemSpec& spec, char block, const StepContext& ctx,
                         const VectorXd& yb, const VectorXd& zb, const VectorXd& ub,
                         const VectorXd& p, const VectorXd& q, const MfContext& law,
                         const VectorXd& ye, const VectorXd& ze, const VectorXd& ue) {
  int dim = block == 'y' ? spec.ny : block == 'z' ? spec.ny * spec.l : spec.k;
  VectorXd out = VectorXd::Zero(dim);
  auto pick = [block](const CoefficientFn& c) -> const PairwisePartial& {
    return block == 'y' ? c.dmu_y : block == 'z' ? c.dmu_z : c.dmu_u;
  };
  const VectorXd one = VectorXd::Ones(1);
  const std::pair<const CoefficientFn*, const VectorXd*> parts[] = {
      {&spec.f, &p}, {&spec.g, &q}, {&spec.h, &one}};
  for (auto [coeff, weight] : parts) {
    const PairwisePartial& pw = pick(*coeff);
    if (!pw) continue;
    out.noalias() += pw(ctx, yb, zb, ub, law, ye, ze, ue).transpose() * (*weight);
  }
  return out;
}

}  // namespace mfbdsde
