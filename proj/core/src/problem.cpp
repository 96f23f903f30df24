#include "mfbdsde/problem.hpp"

#include <cmath>
#include <limits>

#include "mfbdsde/rng.hpp"

namespace mfbdsde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double at0(const VectorXd& v) { return v.size() > 0 ? v(0) : 0.0; }

double mean0(const VectorXd& m) { return m.size() > 0 ? m(0) : 0.0; }

double support_entry(const MatrixXd* block, int row) {
  return (block && block->cols() > 0) ? (*block)(row, 0) : 0.0;
}

// E[stat] over the support rows of a scalar law.
double law_statistic(const MfContext& law, const ScalarStatistic& stat) {
  if (law.N == 0) return 0.0;
  double acc = 0.0;
  for (int j = 0; j < law.N; ++j)
    acc += stat.value(support_entry(law.Y, j), support_entry(law.Z, j),
                      support_entry(law.U, j));
  return acc / law.N;
}

MatrixXd scalar1(double v) { return MatrixXd::Constant(1, 1, v); }

}  // namespace

BoxSet BoxSet::all_of(int k) {
  BoxSet b;
  b.lo = VectorXd::Constant(k, -kInf);
  b.hi = VectorXd::Constant(k, kInf);
  return b;
}

BoxSet BoxSet::interval(double lo, double hi, int k) {
  BoxSet b;
  b.lo = VectorXd::Constant(k, lo);
  b.hi = VectorXd::Constant(k, hi);
  return b;
}

bool BoxSet::contains(const VectorXd& u, double tol) const {
  for (int c = 0; c < u.size(); ++c)
    if (u(c) < lo(c) - tol || u(c) > hi(c) + tol) return false;
  return true;
}

VectorXd BoxSet::clamp(const VectorXd& u) const {
  return u.cwiseMax(lo).cwiseMin(hi);
}

BdsdeProblem ProblemSpec::state_problem() const {
  BdsdeProblem p;
  p.ny = ny;
  p.l = l;
  p.d = d;
  p.f = f.value;
  p.g = g.value;
  p.terminal = xi;
  p.uses_law = uses_law;
  return p;
}

ProblemSpec make_lq_problem(const LqCoefficients& c,
                            std::function<VectorXd(const DriverPaths&, int)> xi,
                            BoxSet U) {
  ProblemSpec spec;
  spec.kind = InteractionKind::linear_lq;
  spec.lq = c;
  spec.xi = std::move(xi);
  spec.U = std::move(U);
  spec.uses_law = c.f1_bar != 0 || c.f2_bar != 0 || c.f3_bar != 0 ||
                  c.g1_bar != 0 || c.g2_bar != 0 || c.g3_bar != 0;

  spec.f.value = [c](const StepContext&, const VectorXd& y, const VectorXd& z,
                     const VectorXd& u, const MfContext& law) {
    return VectorXd::Constant(
        1, c.f1 * at0(y) + c.f2 * at0(z) + c.f3 * at0(u) + c.f1_bar * mean0(law.my) +
               c.f2_bar * mean0(law.mz) + c.f3_bar * mean0(law.mu));
  };
  spec.g.value = [c](const StepContext&, const VectorXd& y, const VectorXd& z,
                     const VectorXd& u, const MfContext& law) {
    return VectorXd::Constant(
        1, c.g1 * at0(y) + c.g2 * at0(z) + c.g3 * at0(u) + c.g1_bar * mean0(law.my) +
               c.g2_bar * mean0(law.mz) + c.g3_bar * mean0(law.mu));
  };
  spec.h.value = [c](const StepContext&, const VectorXd& y, const VectorXd& z,
                     const VectorXd& u, const MfContext& law) {
    double my = mean0(law.my), mz = mean0(law.mz), mu = mean0(law.mu);
    return VectorXd::Constant(
        1, 0.5 * (c.h1 * at0(y) * at0(y) + c.h2 * at0(z) * at0(z) +
                  c.h3 * at0(u) * at0(u) + c.h1_bar * my * my +
                  c.h2_bar * mz * mz + c.h3_bar * mu * mu));
  };

  auto constant_partial = [](double v) -> Partial {
    return [v](const StepContext&, const VectorXd&, const VectorXd&, const VectorXd&,
               const MfContext&) { return scalar1(v); };
  };
  auto constant_pairwise = [](double v) -> PairwisePartial {
    return [v](const StepContext&, const VectorXd&, const VectorXd&, const VectorXd&,
               const MfContext&, const VectorXd&, const VectorXd&,
               const VectorXd&) { return scalar1(v); };
  };
  spec.f.dy = constant_partial(c.f1);
  spec.f.dz = constant_partial(c.f2);
  spec.f.du = constant_partial(c.f3);
  spec.f.dmu_y = constant_pairwise(c.f1_bar);
  spec.f.dmu_z = constant_pairwise(c.f2_bar);
  spec.f.dmu_u = constant_pairwise(c.f3_bar);
  spec.g.dy = constant_partial(c.g1);
  spec.g.dz = constant_partial(c.g2);
  spec.g.du = constant_partial(c.g3);
  spec.g.dmu_y = constant_pairwise(c.g1_bar);
  spec.g.dmu_z = constant_pairwise(c.g2_bar);
  spec.g.dmu_u = constant_pairwise(c.g3_bar);

  spec.h.dy = [c](const StepContext&, const VectorXd& y, const VectorXd&,
                  const VectorXd&, const MfContext&) { return scalar1(c.h1 * at0(y)); };
  spec.h.dz = [c](const StepContext&, const VectorXd&, const VectorXd& z,
                  const VectorXd&, const MfContext&) { return scalar1(c.h2 * at0(z)); };
  spec.h.du = [c](const StepContext&, const VectorXd&, const VectorXd&,
                  const VectorXd& u, const MfContext&) { return scalar1(c.h3 * at0(u)); };
  spec.h.dmu_y = [c](const StepContext&, const VectorXd&, const VectorXd&,
                     const VectorXd&, const MfContext& law, const VectorXd&,
                     const VectorXd&, const VectorXd&) {
    return scalar1(c.h1_bar * mean0(law.my));
  };
  spec.h.dmu_z = [c](const StepContext&, const VectorXd&, const VectorXd&,
                     const VectorXd&, const MfContext& law, const VectorXd&,
                     const VectorXd&, const VectorXd&) {
    return scalar1(c.h2_bar * mean0(law.mz));
  };
  spec.h.dmu_u = [c](const StepContext&, const VectorXd&, const VectorXd&,
                     const VectorXd&, const MfContext& law, const VectorXd&,
                     const VectorXd&, const VectorXd&) {
    return scalar1(c.h3_bar * mean0(law.mu));
  };

  spec.terminal_cost.value = [c](const VectorXd& y0, const MfContext& law) {
    double m = mean0(law.my);
    return 0.5 * (c.phi * at0(y0) * at0(y0) + c.phi_bar * m * m);
  };
  spec.terminal_cost.dy = [c](const VectorXd& y0, const MfContext&) {
    return VectorXd::Constant(1, c.phi * at0(y0));
  };
  spec.terminal_cost.dmu_y = [c](const VectorXd&, const MfContext& law,
                                 const VectorXd&) {
    return VectorXd::Constant(1, c.phi_bar * mean0(law.my));
  };
  return spec;
}

namespace {

CoefficientFn scalar_coefficient(const ScalarOuter& outer, const ScalarStatistic& stat) {
  CoefficientFn fn;
  fn.value = [outer, stat](const StepContext& ctx, const VectorXd& y, const VectorXd& z,
                           const VectorXd& u, const MfContext& law) {
    double r = law_statistic(law, stat);
    return VectorXd::Constant(1, outer.value(ctx.t, at0(y), at0(z), at0(u), r));
  };
  auto partial = [outer, stat](std::function<double(double, double, double, double,
                                                    double)> ScalarOuter::* member) {
    return [outer, stat, member](const StepContext& ctx, const VectorXd& y,
                                 const VectorXd& z, const VectorXd& u,
                                 const MfContext& law) {
      double r = law_statistic(law, stat);
      return scalar1((outer.*member)(ctx.t, at0(y), at0(z), at0(u), r));
    };
  };
  fn.dy = partial(&ScalarOuter::dy);
  fn.dz = partial(&ScalarOuter::dz);
  fn.du = partial(&ScalarOuter::du);

  // d_mu c(base, law)(eval) = dr_chat(base, r) * d stat(eval).
  auto pairwise = [outer, stat](std::function<double(double, double, double)>
                                    ScalarStatistic::* inner) {
    return [outer, stat, inner](const StepContext& ctx, const VectorXd& yb,
                                const VectorXd& zb, const VectorXd& ub,
                                const MfContext& law, const VectorXd& ye,
                                const VectorXd& ze, const VectorXd& ue) {
      double r = law_statistic(law, stat);
      double outer_slope = outer.dr(ctx.t, at0(yb), at0(zb), at0(ub), r);
      return scalar1(outer_slope * (stat.*inner)(at0(ye), at0(ze), at0(ue)));
    };
  };
  fn.dmu_y = pairwise(&ScalarStatistic::dy);
  fn.dmu_z = pairwise(&ScalarStatistic::dz);
  fn.dmu_u = pairwise(&ScalarStatistic::du);
  return fn;
}

CoefficientFn first_order_coefficient(const PairKernel& k) {
  CoefficientFn fn;
  auto average = [k](auto member, const StepContext& ctx, const VectorXd& y,
                     const VectorXd& z, const VectorXd& u, const MfContext& law) {
    if (law.N == 0) return 0.0;
    double acc = 0.0;
    for (int j = 0; j < law.N; ++j)
      acc += (k.*member)(ctx.t, at0(y), at0(z), at0(u), support_entry(law.Y, j),
                         support_entry(law.Z, j), support_entry(law.U, j));
    return acc / law.N;
  };
  fn.value = [k, average](const StepContext& ctx, const VectorXd& y, const VectorXd& z,
                          const VectorXd& u, const MfContext& law) {
    return VectorXd::Constant(1, average(&PairKernel::value, ctx, y, z, u, law));
  };
  auto partial = [k, average](std::function<double(double, double, double, double,
                                                   double, double, double)>
                                  PairKernel::* member) {
    return [k, average, member](const StepContext& ctx, const VectorXd& y,
                                const VectorXd& z, const VectorXd& u,
                                const MfContext& law) {
      return scalar1(average(member, ctx, y, z, u, law));
    };
  };
  fn.dy = partial(&PairKernel::d1y);
  fn.dz = partial(&PairKernel::d1z);
  fn.du = partial(&PairKernel::d1u);

  // d_mu c(base, law)(eval) = d2 khat(base, eval): no law average remains.
  auto pairwise = [k](std::function<double(double, double, double, double, double,
                                           double, double)> PairKernel::* member) {
    return [k, member](const StepContext& ctx, const VectorXd& yb, const VectorXd& zb,
                       const VectorXd& ub, const MfContext&, const VectorXd& ye,
                       const VectorXd& ze, const VectorXd& ue) {
      return scalar1((k.*member)(ctx.t, at0(yb), at0(zb), at0(ub), at0(ye), at0(ze),
                                 at0(ue)));
    };
  };
  fn.dmu_y = pairwise(&PairKernel::d2y);
  fn.dmu_z = pairwise(&PairKernel::d2z);
  fn.dmu_u = pairwise(&PairKernel::d2u);
  return fn;
}

}  // namespace

ProblemSpec make_scalar_problem(const ScalarOuter& f, const ScalarStatistic& phi_f,
                                const ScalarOuter& g, const ScalarStatistic& phi_g,
                                const ScalarOuter& h, const ScalarStatistic& psi_h,
                                const ScalarTerminal& Phi,
                                std::function<VectorXd(const DriverPaths&, int)> xi,
                                BoxSet U) {
  ProblemSpec spec;
  spec.kind = InteractionKind::scalar;
  spec.xi = std::move(xi);
  spec.U = std::move(U);
  spec.uses_law = true;
  spec.f = scalar_coefficient(f, phi_f);
  spec.g = scalar_coefficient(g, phi_g);
  spec.h = scalar_coefficient(h, psi_h);

  spec.terminal_cost.value = [Phi](const VectorXd& y0, const MfContext& law) {
    double r = 0.0;
    if (law.N > 0) {
      for (int j = 0; j < law.N; ++j) r += Phi.gamma(support_entry(law.Y, j));
      r /= law.N;
    }
    return Phi.value(at0(y0), r);
  };
  spec.terminal_cost.dy = [Phi](const VectorXd& y0, const MfContext& law) {
    double r = 0.0;
    if (law.N > 0) {
      for (int j = 0; j < law.N; ++j) r += Phi.gamma(support_entry(law.Y, j));
      r /= law.N;
    }
    return VectorXd::Constant(1, Phi.dy(at0(y0), r));
  };
  spec.terminal_cost.dmu_y = [Phi](const VectorXd& y_base, const MfContext& law,
                                   const VectorXd& y_eval) {
    double r = 0.0;
    if (law.N > 0) {
      for (int j = 0; j < law.N; ++j) r += Phi.gamma(support_entry(law.Y, j));
      r /= law.N;
    }
    return VectorXd::Constant(1, Phi.dr(at0(y_base), r) * Phi.dgamma(at0(y_eval)));
  };
  return spec;
}

ProblemSpec make_first_order_problem(const PairKernel& f, const PairKernel& g,
                                     const PairKernel& h, const PairTerminal& Phi,
                                     std::function<VectorXd(const DriverPaths&, int)> xi,
                                     BoxSet U) {
  ProblemSpec spec;
  spec.kind = InteractionKind::first_order;
  spec.xi = std::move(xi);
  spec.U = std::move(U);
  spec.uses_law = true;
  spec.f = first_order_coefficient(f);
  spec.g = first_order_coefficient(g);
  spec.h = first_order_coefficient(h);

  spec.terminal_cost.value = [Phi](const VectorXd& y0, const MfContext& law) {
    if (law.N == 0) return 0.0;
    double acc = 0.0;
    for (int j = 0; j < law.N; ++j) acc += Phi.value(at0(y0), support_entry(law.Y, j));
    return acc / law.N;
  };
  spec.terminal_cost.dy = [Phi](const VectorXd& y0, const MfContext& law) {
    double acc = 0.0;
    if (law.N > 0) {
      for (int j = 0; j < law.N; ++j) acc += Phi.d1(at0(y0), support_entry(law.Y, j));
      acc /= law.N;
    }
    return VectorXd::Constant(1, acc);
  };
  spec.terminal_cost.dmu_y = [Phi](const VectorXd& y_base, const MfContext&,
                                   const VectorXd& y_eval) {
    return VectorXd::Constant(1, Phi.d2(at0(y_base), at0(y_eval)));
  };
  return spec;
}

std::vector<std::string> validate_problem(const ProblemSpec& spec, int probe_samples,
                                          std::uint64_t seed) {
  std::vector<std::string> failures;
  if (spec.lq) {
    const LqCoefficients& c = *spec.lq;
    if (c.h3 <= 0) failures.push_back("h3 > 0");
    if (c.h3_bar < 0) failures.push_back("h3_bar >= 0");
    const std::pair<double, const char*> nonneg[] = {
        {c.h1, "h1 >= 0"},         {c.h2, "h2 >= 0"},
        {c.h1_bar, "h1_bar >= 0"}, {c.h2_bar, "h2_bar >= 0"},
        {c.phi, "phi >= 0"},       {c.phi_bar, "phi_bar >= 0"}};
    for (auto [v, name] : nonneg)
      if (v < 0) failures.emplace_back(name);
    if (std::abs(c.g2) + std::abs(c.g2_bar) >= 1)
      failures.push_back("|g2| + |g2_bar| < 1");
    return failures;
  }

  // Probe the smallness constants of g over a Gaussian sample. Works on the
  // scalar shape (the only non-LQ shape the factories produce).
  if (!spec.g.dz && !spec.g.dmu_z) return failures;
  const int M = probe_samples;
  MatrixXd pts(M, 3);
  for (int s = 0; s < M; ++s)
    for (int c = 0; c < 3; ++c)
      pts(s, c) = rng::normal(seed, s, 0, 0x67, c);
  MatrixXd ys = pts.col(0), zs = pts.col(1), us = pts.col(2);
  MfContext law = make_mf_context(&ys, &zs, &us);
  StepContext ctx{0.0, 0, 0};

  double alpha1 = 0.0, alpha2 = 0.0;
  for (int s = 0; s < M; ++s) {
    VectorXd y = ys.row(s), z = zs.row(s), u = us.row(s);
    if (spec.g.dz)
      alpha1 = std::max(std::abs(spec.g.dz(ctx, y, z, u, law)(0, 0)), alpha1);
    if (spec.g.dmu_z) {
      double acc = 0.0;
      for (int j = 0; j < M; ++j) {
        VectorXd ye = ys.row(j), ze = zs.row(j), ue = us.row(j);
        double v = spec.g.dmu_z(ctx, y, z, u, law, ye, ze, ue)(0, 0);
        acc += v * v;
      }
      alpha2 = std::max(acc / M, alpha2);
    }
  }
  if (alpha1 >= 1) failures.push_back("H1: alpha1 >= 1");
  if (alpha1 + alpha2 >= 1) failures.push_back("H2: alpha1 + alpha2 >= 1");
  return failures;
}

}  // namespace mfbdsde
