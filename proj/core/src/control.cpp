#include "mfbdsde/control.hpp"

#include <cmath>
#include <memory>

#include "mfbdsde/regression.hpp"
#include "mfbdsde/rng.hpp"

namespace mfbdsde {

namespace {

constexpr int kPairwiseCap = 4096;

struct FrozenTheta {
  MatrixXd y, z, u;
  MfContext law;
};

using FrozenEnsemble = std::vector<FrozenTheta>;

std::shared_ptr<FrozenEnsemble> freeze_state(const ProblemSpec& spec,
                                             const EnsembleSolution& state,
                                             const MatrixXd* control, int points) {
  auto frozen = std::make_shared<FrozenEnsemble>(points);
  for (int i = 0; i < points; ++i) {
    FrozenTheta& fz = (*frozen)[i];
    fz.y = state.y_at(i);
    fz.z = state.z_at(i);
    if (control && spec.k > 0) fz.u = control->middleCols(i * spec.k, spec.k);
    fz.law = make_mf_context(&fz.y, &fz.z, control ? &fz.u : nullptr);
  }
  return frozen;
}

VectorXd row_of(const MatrixXd& m, int particle) {
  return m.size() > 0 ? VectorXd(m.row(particle).transpose()) : VectorXd();
}

bool coefficient_pairwise(const ProblemSpec& spec) {
  for (const CoefficientFn* c : {&spec.f, &spec.g, &spec.h})
    if (c->dmu_y || c->dmu_z || c->dmu_u) return true;
  return false;
}

}  // namespace

MatrixXd VariationalSolution::K_at(int point) const {
  return K.middleCols(point * ny, ny);
}

MatrixXd VariationalSolution::L_at(int point) const {
  return L.middleCols(point * ny * l, ny * l);
}

VectorXd cost_contributions(const ProblemSpec& spec, const EnsembleSolution& state,
                            const MatrixXd* control, const TimeGrid& grid) {
  const int n = grid.n_steps;
  const int N = static_cast<int>(state.y.rows());
  auto frozen = freeze_state(spec, state, control, n + 1);
  VectorXd out = VectorXd::Zero(N);
  parallel_for(N, [&](int particle) {
    double acc = 0.0;
    if (spec.h.value) {
      for (int i = 0; i < n; ++i) {
        const FrozenTheta& fz = (*frozen)[i];
        StepContext ctx{grid.points[i], i, particle};
        acc += spec.h.value(ctx, row_of(fz.y, particle), row_of(fz.z, particle),
                            row_of(fz.u, particle), fz.law)(0) *
               grid.dt;
      }
    }
    if (spec.terminal_cost.value)
      acc += spec.terminal_cost.value(row_of((*frozen)[0].y, particle), (*frozen)[0].law);
    out(particle) = acc;
  });
  return out;
}

double evaluate_cost(const ProblemSpec& spec, const EnsembleSolution& state,
                     const MatrixXd* control, const TimeGrid& grid) {
  return cost_contributions(spec, state, control, grid).mean();
}

VariationalSolution solve_variational(const ProblemSpec& spec,
                                      const EnsembleSolution& state,
                                      const MatrixXd* control, const MatrixXd& v,
                                      const DriverPaths& paths,
                                      const SolverConfig& config) {
  const int n = paths.grid.n_steps;
  const int N = paths.N;
  const int k = spec.k;
  const bool linear = spec.kind == InteractionKind::linear_lq;
  const bool pairwise = coefficient_pairwise(spec);
  if (pairwise && !linear && N > kPairwiseCap)
    throw CapacityError("solve_variational: pairwise mean-field terms capped at N = " +
                        std::to_string(kPairwiseCap));
  auto frozen = freeze_state(spec, state, control, n + 1);
  LqCoefficients lqc = spec.lq.value_or(LqCoefficients{});
  auto vptr = std::make_shared<MatrixXd>(v);
  const std::vector<double> tpoints = paths.grid.points;

  // Linearized coefficient: local Jacobians against (K, L, v) plus the law
  // term E~[d_mu c(self)(other) applied to (K~, L~, v~)].
  auto linearized = [=, &spec](const CoefficientFn& c, bool is_g) -> Coefficient {
    const int rows = is_g ? spec.ny * spec.d : spec.ny;
    return [=, &c](const StepContext& sctx, const VectorXd& K, const VectorXd& L,
                   const VectorXd&, const MfContext& kl_law) -> VectorXd {
      const int point = sctx.step;
      const int particle = sctx.particle;
      const FrozenTheta& fz = (*frozen)[point];
      StepContext ctx{tpoints[point], point, particle};
      VectorXd y_self = row_of(fz.y, particle);
      VectorXd z_self = row_of(fz.z, particle);
      VectorXd u_self = row_of(fz.u, particle);
      VectorXd v_self = vptr->row(particle).segment(point * k, k).transpose();
      VectorXd out = VectorXd::Zero(rows);
      if (c.dy) out += c.dy(ctx, y_self, z_self, u_self, fz.law) * K;
      if (c.dz) out += c.dz(ctx, y_self, z_self, u_self, fz.law) * L;
      if (c.du) out += c.du(ctx, y_self, z_self, u_self, fz.law) * v_self;
      if (!pairwise) return out;
      if (linear) {
        double EK = kl_law.my.size() ? kl_law.my(0) : 0.0;
        double EL = kl_law.mz.size() ? kl_law.mz(0) : 0.0;
        double Ev = vptr->col(point).mean();
        if (is_g)
          out(0) += lqc.g1_bar * EK + lqc.g2_bar * EL + lqc.g3_bar * Ev;
        else
          out(0) += lqc.f1_bar * EK + lqc.f2_bar * EL + lqc.f3_bar * Ev;
        return out;
      }
      const int M = kl_law.N;
      VectorXd acc = VectorXd::Zero(rows);
      for (int j = 0; j < M; ++j) {
        VectorXd yj = row_of(fz.y, j), zj = row_of(fz.z, j), uj = row_of(fz.u, j);
        VectorXd Kj = kl_law.Y ? VectorXd(kl_law.Y->row(j).transpose())
                               : VectorXd(VectorXd::Zero(spec.ny));
        VectorXd Lj = kl_law.Z ? VectorXd(kl_law.Z->row(j).transpose())
                               : VectorXd(VectorXd::Zero(spec.ny * spec.l));
        VectorXd vj = vptr->row(j).segment(point * k, k).transpose();
        if (c.dmu_y)
          acc += c.dmu_y(ctx, y_self, z_self, u_self, fz.law, yj, zj, uj) * Kj;
        if (c.dmu_z)
          acc += c.dmu_z(ctx, y_self, z_self, u_self, fz.law, yj, zj, uj) * Lj;
        if (c.dmu_u)
          acc += c.dmu_u(ctx, y_self, z_self, u_self, fz.law, yj, zj, uj) * vj;
      }
      if (M > 0) out += acc / M;
      return out;
    };
  };

  BdsdeProblem linearized_problem;
  linearized_problem.ny = spec.ny;
  linearized_problem.l = spec.l;
  linearized_problem.d = spec.d;
  linearized_problem.f = linearized(spec.f, false);
  linearized_problem.g = linearized(spec.g, true);
  linearized_problem.uses_law = true;
  linearized_problem.terminal = [ny = spec.ny](const DriverPaths&, int) {
    return VectorXd(VectorXd::Zero(ny));
  };

  EnsembleSolution sol = solve_mf_bdsde(linearized_problem, paths, nullptr, 0, config);
  VariationalSolution out;
  out.ny = spec.ny;
  out.l = spec.l;
  out.K = std::move(sol.y);
  out.L = std::move(sol.z);
  out.converged = sol.converged;
  out.status = sol.status;
  return out;
}

double gateaux_route1(const ProblemSpec& spec, const EnsembleSolution& state,
                      const MatrixXd* control, const VariationalSolution& var,
                      const MatrixXd& v, const TimeGrid& grid) {
  const int n = grid.n_steps;
  const int N = static_cast<int>(state.y.rows());
  const int k = spec.k;
  const bool linear = spec.kind == InteractionKind::linear_lq;
  auto frozen = freeze_state(spec, state, control, n + 1);
  LqCoefficients lqc = spec.lq.value_or(LqCoefficients{});

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const FrozenTheta& fz = (*frozen)[i];
    MatrixXd Ki = var.K_at(i), Li = var.L_at(i);
    MatrixXd vi = v.middleCols(i * k, k);
    double step_sum = 0.0;
    // Law term of the running cost: for the linear kind it collapses to the
    // products of means; otherwise a pairwise double sum.
    double linear_law_term = 0.0;
    if (linear)
      linear_law_term = lqc.h1_bar * (fz.law.my.size() ? fz.law.my(0) : 0.0) *
                            Ki.col(0).mean() +
                        lqc.h2_bar * (fz.law.mz.size() ? fz.law.mz(0) : 0.0) *
                            Li.col(0).mean() +
                        lqc.h3_bar * (fz.law.mu.size() ? fz.law.mu(0) : 0.0) *
                            vi.col(0).mean();
    for (int p = 0; p < N; ++p) {
      StepContext ctx{grid.points[i], i, p};
      VectorXd y = row_of(fz.y, p), z = row_of(fz.z, p), u = row_of(fz.u, p);
      double val = 0.0;
      if (spec.h.dy) val += (spec.h.dy(ctx, y, z, u, fz.law) * Ki.row(p).transpose())(0);
      if (spec.h.dz) val += (spec.h.dz(ctx, y, z, u, fz.law) * Li.row(p).transpose())(0);
      if (spec.h.du) val += (spec.h.du(ctx, y, z, u, fz.law) * vi.row(p).transpose())(0);
      if (linear) {
        val += linear_law_term;
      } else {
        double acc = 0.0;
        for (int j = 0; j < N; ++j) {
          VectorXd yj = row_of(fz.y, j), zj = row_of(fz.z, j), uj = row_of(fz.u, j);
          if (spec.h.dmu_y)
            acc += (spec.h.dmu_y(ctx, y, z, u, fz.law, yj, zj, uj) *
                    Ki.row(j).transpose())(0);
          if (spec.h.dmu_z)
            acc += (spec.h.dmu_z(ctx, y, z, u, fz.law, yj, zj, uj) *
                    Li.row(j).transpose())(0);
          if (spec.h.dmu_u)
            acc += (spec.h.dmu_u(ctx, y, z, u, fz.law, yj, zj, uj) *
                    vi.row(j).transpose())(0);
        }
        val += acc / N;
      }
      step_sum += val;
    }
    total += step_sum / N * grid.dt;
  }

  // Terminal-cost expansion at t_0.
  const FrozenTheta& f0 = (*frozen)[0];
  MatrixXd K0 = var.K_at(0);
  double terminal = 0.0;
  for (int p = 0; p < N; ++p) {
    VectorXd y0 = row_of(f0.y, p);
    if (spec.terminal_cost.dy)
      terminal += spec.terminal_cost.dy(y0, f0.law).dot(K0.row(p).transpose());
    if (spec.terminal_cost.dmu_y) {
      if (linear) {
        terminal += lqc.phi_bar * (f0.law.my.size() ? f0.law.my(0) : 0.0) *
                    K0.col(0).mean();
      } else {
        double acc = 0.0;
        for (int j = 0; j < N; ++j)
          acc += spec.terminal_cost.dmu_y(y0, f0.law, row_of(f0.y, j))
                     .dot(K0.row(j).transpose());
        terminal += acc / N;
      }
    }
  }
  return total + terminal / N;
}

MatrixXd gradient_field(const ProblemSpec& spec, const EnsembleSolution& state,
                        const AdjointSolution& adjoint, const MatrixXd* control,
                        const TimeGrid& grid) {
  const int k = spec.k;
  const int points = static_cast<int>(state.y.cols()) / spec.ny;
  const int N = static_cast<int>(state.y.rows());
  const bool linear = spec.kind == InteractionKind::linear_lq;
  const bool pairwise = coefficient_pairwise(spec);
  if (pairwise && !linear && N > kPairwiseCap)
    throw CapacityError("gradient_field: pairwise mean-field terms capped at N = " +
                        std::to_string(kPairwiseCap));
  auto frozen = freeze_state(spec, state, control, points);
  LqCoefficients lqc = spec.lq.value_or(LqCoefficients{});

  // Endpoint structure of the discrete cost: the quadrature uses the left
  // endpoints, so u at point 0 enters only the running cost, while u at the
  // final point enters only the step-n coefficients of the state scheme.
  // Splitting the u-derivative accordingly makes the field the exact gradient
  // of the discrete cost at every grid point.
  MatrixXd grad(N, points * k);
  for (int i = 0; i < points; ++i) {
    const bool first = i == 0;
    const bool last = i == points - 1;
    const FrozenTheta& fz = (*frozen)[i];
    MatrixXd Pi = adjoint.p_at(i), Qi = adjoint.q_at(i);
    StepContext base_ctx{grid.points[i], i, 0};
    double lin_dyn = 0.0, lin_h = 0.0;
    if (linear && pairwise) {
      lin_dyn = lqc.f3_bar * Pi.col(0).mean() + lqc.g3_bar * Qi.col(0).mean();
      lin_h = lqc.h3_bar * (fz.law.mu.size() ? fz.law.mu(0) : 0.0);
    }
    parallel_for(N, [&](int p) {
      StepContext ctx{base_ctx.t, i, p};
      VectorXd y = row_of(fz.y, p), z = row_of(fz.z, p), u = row_of(fz.u, p);
      VectorXd pv = Pi.row(p).transpose(), qv = Qi.row(p).transpose();
      HamiltonianEval H = hamiltonian(spec, ctx, y, z, u, pv, qv, fz.law);
      VectorXd hu = VectorXd::Zero(k);
      if (spec.h.du) hu = spec.h.du(ctx, y, z, u, fz.law).row(0).transpose();
      VectorXd g = first ? hu : last ? VectorXd(H.du - hu) : H.du;
      if (pairwise) {
        if (linear) {
          g.array() += first ? lin_h : last ? lin_dyn : lin_dyn + lin_h;
        } else {
          VectorXd acc = VectorXd::Zero(k);
          for (int j = 0; j < N; ++j) {
            VectorXd yj = row_of(fz.y, j), zj = row_of(fz.z, j), uj = row_of(fz.u, j);
            VectorXd acc_h = VectorXd::Zero(k);
            if (spec.h.dmu_u)
              acc_h = spec.h.dmu_u(ctx, yj, zj, uj, fz.law, y, z, u).row(0).transpose();
            if (first) {
              acc += acc_h;
            } else {
              VectorXd full = hamiltonian_dmu(spec, 'u', ctx, yj, zj, uj,
                                              Pi.row(j).transpose(),
                                              Qi.row(j).transpose(), fz.law, y, z, u);
              acc += last ? VectorXd(full - acc_h) : full;
            }
          }
          g += acc / N;
        }
      }
      grad.row(p).segment(i * k, k) = g.transpose();
    });
  }
  return grad;
}

MatrixXd discrete_gradient_field(const ProblemSpec& spec, const EnsembleSolution& state,
                                 const MatrixXd* control, const DriverPaths& paths,
                                 const SolverConfig& config, bool adapted) {
  const int n = paths.grid.n_steps;
  const int N = paths.N;
  const int ny = spec.ny, l = spec.l, d = spec.d, k = spec.k;
  const int nz = ny * l;
  const double dt = paths.grid.dt;
  const bool linear = spec.kind == InteractionKind::linear_lq;
  if (coefficient_pairwise(spec) && !linear)
    throw CapacityError(
        "discrete_gradient_field: law channels beyond the linear kind are not supported");
  auto frozen = freeze_state(spec, state, control, n + 1);
  LqCoefficients lqc = spec.lq.value_or(LqCoefficients{});
  const std::vector<double>& tp = paths.grid.points;

  MatrixXd grad(N, (n + 1) * k);

  // Multipliers of the transposed linearized scheme at the current grid point,
  // before that point's projection: A pairs delta-y, C pairs delta-z.
  MatrixXd A(N, ny), C(N, nz);
  {
    const FrozenTheta& fz = (*frozen)[0];
    MatrixXd p0 = adjoint_initial(spec, fz.y);
    double Ey = fz.law.my.size() ? fz.law.my(0) : 0.0;
    double Ez = fz.law.mz.size() ? fz.law.mz(0) : 0.0;
    double Eu = fz.law.mu.size() ? fz.law.mu(0) : 0.0;
    parallel_for(N, [&](int p) {
      StepContext ctx{tp[0], 0, p};
      VectorXd y = row_of(fz.y, p), z = row_of(fz.z, p), u = row_of(fz.u, p);
      VectorXd a = p0.row(p).transpose();
      VectorXd c = VectorXd::Zero(nz);
      if (spec.h.dy) a += dt * spec.h.dy(ctx, y, z, u, fz.law).row(0).transpose();
      if (spec.h.dz) c += dt * spec.h.dz(ctx, y, z, u, fz.law).row(0).transpose();
      if (linear) {
        a(0) += dt * lqc.h1_bar * Ey;
        c(0) += dt * lqc.h2_bar * Ez;
      }
      A.row(p) = a.transpose();
      C.row(p) = c.transpose();
      VectorXd gu = VectorXd::Zero(k);
      if (spec.h.du) gu = spec.h.du(ctx, y, z, u, fz.law).row(0).transpose();
      if (linear) gu(0) += lqc.h3_bar * Eu;
      grad.row(p).segment(0, k) = gu.transpose();
    });
  }

  // delta-T multiplier at point i: the scheme centers the z-regression and
  // removes the fitted martingale part from the y-target, so the transpose is
  // W = P[A] + (P[M] dW - P[P[M] dW]) / dt with M = C - P[A] (x) dW. Under
  // exact conditioning the correction terms vanish and W = P[A] + P[C/dt] dW.
  auto wbar_field = [&](const MatrixXd& A, const MatrixXd& C,
                        const ConditionalExpectation& ce, int step) -> MatrixXd {
    MatrixXd pA = ce.apply(A);
    MatrixXd M(N, nz);
    for (int a = 0; a < l; ++a)
      for (int r = 0; r < ny; ++r)
        M.col(a * ny + r) = C.col(a * ny + r).array() -
                            pA.col(r).array() * paths.dw.col(step * l + a).array();
    MatrixXd PM = ce.apply(M);
    MatrixXd PMdW(N, nz);
    for (int a = 0; a < l; ++a)
      for (int r = 0; r < ny; ++r)
        PMdW.col(a * ny + r) =
            PM.col(a * ny + r).array() * paths.dw.col(step * l + a).array();
    MatrixXd V = ce.apply(PMdW);
    MatrixXd wbar = pA;
    for (int a = 0; a < l; ++a)
      for (int r = 0; r < ny; ++r)
        wbar.col(r) += (PMdW.col(a * ny + r) - V.col(a * ny + r)) / dt;
    return wbar;
  };

  std::optional<ConditionalExpectation> ce(std::in_place, paths, 0, config.regression);
  if (adapted) grad.leftCols(k) = ce->apply(grad.leftCols(k));
  for (int i = 0; i < n; ++i) {
    const int j = i + 1;
    const bool top = j == n;
    const FrozenTheta& fj = (*frozen)[j];
    double Ey = fj.law.my.size() ? fj.law.my(0) : 0.0;
    double Ez = fj.law.mz.size() ? fj.law.mz(0) : 0.0;
    double Eu = fj.law.mu.size() ? fj.law.mu(0) : 0.0;

    // Transpose of the point-j coefficients against a given W field.
    auto push = [&](const MatrixXd& wb, MatrixXd* Anew, MatrixXd* Cnew, bool with_h) {
      parallel_for(N, [&](int p) {
        StepContext ctx{tp[j], j, p};
        VectorXd y = row_of(fj.y, p), z = row_of(fj.z, p), u = row_of(fj.u, p);
        VectorXd wv = wb.row(p).transpose();
        VectorXd s(ny * d);
        for (int c = 0; c < d; ++c)
          for (int r = 0; r < ny; ++r)
            s(c * ny + r) = wv(r) * paths.db(p, i * d + c);
        if (Anew) {
          VectorXd a = wv;
          if (spec.f.dy) a += dt * spec.f.dy(ctx, y, z, u, fj.law).transpose() * wv;
          if (spec.g.dy) a += spec.g.dy(ctx, y, z, u, fj.law).transpose() * s;
          if (with_h && spec.h.dy)
            a += dt * spec.h.dy(ctx, y, z, u, fj.law).row(0).transpose();
          Anew->row(p) = a.transpose();
        }
        if (Cnew) {
          VectorXd c = VectorXd::Zero(nz);
          if (spec.f.dz) c += dt * spec.f.dz(ctx, y, z, u, fj.law).transpose() * wv;
          if (spec.g.dz) c += spec.g.dz(ctx, y, z, u, fj.law).transpose() * s;
          if (with_h && spec.h.dz)
            c += dt * spec.h.dz(ctx, y, z, u, fj.law).row(0).transpose();
          Cnew->row(p) = c.transpose();
        }
      });
    };
    auto bar_means = [&](const MatrixXd& wb) {
      double mW = wb.col(0).mean();
      double mWB =
          (wb.col(0).array() * paths.db.col(i * d).array()).mean();
      return std::pair<double, double>(mW, mWB);
    };

    MatrixXd wb = wbar_field(A, C, *ce, i);
    if (top) {
      // z at the last point aliases z at point n-1, so the top coefficients
      // feed back into this point's delta-z multiplier; the feedback is
      // linear and contracts under the standing smallness assumption on g.
      MatrixXd Cbase = C, Cext(N, nz);
      for (int it = 0; it < 500; ++it) {
        push(wb, nullptr, &Cext, false);
        if (linear) {
          auto [mW, mWB] = bar_means(wb);
          Cext.col(0).array() += dt * lqc.f2_bar * mW + lqc.g2_bar * mWB;
        }
        MatrixXd Cnew = Cbase + Cext;
        double delta = (Cnew - C).cwiseAbs().maxCoeff();
        C = std::move(Cnew);
        wb = wbar_field(A, C, *ce, i);
        if (delta <= 1e-13 * (1.0 + C.cwiseAbs().maxCoeff())) break;
      }
    }

    // Control gradient at point j: dynamics channel always, running cost only
    // while the point enters the quadrature.
    parallel_for(N, [&](int p) {
      StepContext ctx{tp[j], j, p};
      VectorXd y = row_of(fj.y, p), z = row_of(fj.z, p), u = row_of(fj.u, p);
      VectorXd wv = wb.row(p).transpose();
      VectorXd s(ny * d);
      for (int c = 0; c < d; ++c)
        for (int r = 0; r < ny; ++r)
          s(c * ny + r) = wv(r) * paths.db(p, i * d + c);
      VectorXd gu = VectorXd::Zero(k);
      if (spec.f.du) gu += spec.f.du(ctx, y, z, u, fj.law).transpose() * wv;
      if (spec.g.du) gu += spec.g.du(ctx, y, z, u, fj.law).transpose() * s / dt;
      if (!top && spec.h.du)
        gu += spec.h.du(ctx, y, z, u, fj.law).row(0).transpose();
      grad.row(p).segment(j * k, k) = gu.transpose();
    });
    if (linear) {
      auto [mW, mWB] = bar_means(wb);
      grad.col(j * k).array() += lqc.f3_bar * mW + lqc.g3_bar * mWB / dt +
                                 (top ? 0.0 : lqc.h3_bar * Eu);
    }

    if (!top) {
      MatrixXd Anew(N, ny), Cnew(N, nz);
      push(wb, &Anew, &Cnew, true);
      if (linear) {
        auto [mW, mWB] = bar_means(wb);
        Anew.col(0).array() += dt * (lqc.f1_bar * mW + lqc.h1_bar * Ey) + lqc.g1_bar * mWB;
        Cnew.col(0).array() += dt * (lqc.f2_bar * mW + lqc.h2_bar * Ez) + lqc.g2_bar * mWB;
      }
      A = std::move(Anew);
      C = std::move(Cnew);
      ce.emplace(paths, j, config.regression);
    } else if (adapted) {
      ce.emplace(paths, n, config.regression);
    }
    if (adapted)
      grad.middleCols(j * k, k) = ce->apply(grad.middleCols(j * k, k));
  }
  return grad;
}

double gateaux_route2(const ProblemSpec& spec, const EnsembleSolution& state,
                      const AdjointSolution& adjoint, const MatrixXd* control,
                      const MatrixXd& v, const TimeGrid& grid) {
  MatrixXd grad = gradient_field(spec, state, adjoint, control, grid);
  const int k = spec.k;
  double total = 0.0;
  // The final point carries the u-derivative of the step-n coefficients, so
  // it contributes to the derivative with the same dt weight.
  for (int i = 0; i <= grid.n_steps; ++i)
    total += (grad.middleCols(i * k, k).array() * v.middleCols(i * k, k).array())
                 .rowwise()
                 .sum()
                 .mean() *
             grid.dt;
  return total;
}

GateauxResult gateaux_derivative(const ProblemSpec& spec, const EnsembleSolution& state,
                                 const AdjointSolution& adjoint, const MatrixXd* control,
                                 const MatrixXd& v, const DriverPaths& paths,
                                 const SolverConfig& config) {
  GateauxResult out;
  VariationalSolution var = solve_variational(spec, state, control, v, paths, config);
  out.route1 = gateaux_route1(spec, state, control, var, v, paths.grid);
  out.route2 = gateaux_route2(spec, state, adjoint, control, v, paths.grid);
  out.gap = out.route1 - out.route2;
  return out;
}

MatrixXd project(const MatrixXd& u, const BoxSet& U, int k) {
  MatrixXd out = u;
  const int points = static_cast<int>(u.cols()) / k;
  for (int i = 0; i < points; ++i)
    for (int c = 0; c < k; ++c)
      out.col(i * k + c) =
          out.col(i * k + c).cwiseMax(U.lo(c)).cwiseMin(U.hi(c));
  return out;
}

MatrixXd smp_residual_field(const ProblemSpec& spec, const MatrixXd& grad,
                            const MatrixXd& u) {
  const int k = spec.k;
  const int points = static_cast<int>(u.cols()) / k;
  const int N = static_cast<int>(u.rows());
  MatrixXd out = MatrixXd::Zero(N, points);
  for (int i = 0; i < points; ++i) {
    for (int p = 0; p < N; ++p) {
      double norm2 = 0.0;
      for (int c = 0; c < k; ++c) {
        double uv = u(p, i * k + c), gv = grad(p, i * k + c);
        double lo = spec.U.lo(c), hi = spec.U.hi(c);
        double tol_lo = 1e-9 * (1 + std::abs(lo));
        double tol_hi = 1e-9 * (1 + std::abs(hi));
        double viol;
        if (std::isfinite(lo) && uv <= lo + tol_lo)
          viol = std::max(0.0, -gv);
        else if (std::isfinite(hi) && uv >= hi - tol_hi)
          viol = std::max(0.0, gv);
        else
          viol = std::abs(gv);
        norm2 += viol * viol;
      }
      out(p, i) = std::sqrt(norm2);
    }
  }
  return out;
}

double smp_residual(const ProblemSpec& spec, const MatrixXd& grad, const MatrixXd& u) {
  MatrixXd field = smp_residual_field(spec, grad, u);
  const int points = static_cast<int>(field.cols());
  // Points 0..n-1 enter the cost integral; the value at t_n does not.
  return field.leftCols(points - 1).maxCoeff();
}

OptimizeResult optimize(const ProblemSpec& spec, const MatrixXd& initial_u,
                        const DriverPaths& paths, const OptimizerConfig& config) {
  const int k = spec.k;
  const TimeGrid& grid = paths.grid;
  BdsdeProblem state_problem = spec.state_problem();

  // The descent direction is the exact gradient of the discrete cost whenever
  // the transposition supports the spec's law channels; pairwise interactions
  // fall back to the adjoint representation.
  const bool exact_grad =
      spec.kind == InteractionKind::linear_lq || !coefficient_pairwise(spec);
  auto compute_grad = [&](const EnsembleSolution& st, const MatrixXd& u,
                          AdjointSolution* adj_out) {
    if (exact_grad) return discrete_gradient_field(spec, st, &u, paths, config.solver);
    *adj_out = solve_adjoint(spec, st, &u, paths, config.solver);
    return gradient_field(spec, st, *adj_out, &u, grid);
  };

  OptimizeResult result;
  result.u = project(initial_u, spec.U, k);
  result.state = solve_mf_bdsde(state_problem, paths, &result.u, k, config.solver);
  double J = evaluate_cost(spec, result.state, &result.u, grid);
  MatrixXd grad = compute_grad(result.state, result.u, &result.adjoint);

  OptimizationReport& report = result.report;
  for (int iter = 0; iter < config.max_iters; ++iter) {
    double residual = smp_residual(spec, grad, result.u);
    double gnorm = 0.0;
    for (int i = 0; i <= grid.n_steps; ++i)
      gnorm += grad.middleCols(i * k, k).array().square().rowwise().sum().mean() *
               grid.dt;
    gnorm = std::sqrt(gnorm);
    report.cost_history.push_back(J);
    report.gradient_norms.push_back(gnorm);
    report.smp_residuals.push_back(residual);
    if (residual <= config.tol) {
      report.termination = "smp residual below tolerance";
      if (exact_grad)
        result.adjoint = solve_adjoint(spec, result.state, &result.u, paths, config.solver);
      return result;
    }

    double eta = config.initial_step;
    bool accepted = false;
    for (int h = 0; h <= config.max_halvings; ++h, eta *= config.shrink) {
      MatrixXd u_try = project(result.u - eta * grad, spec.U, k);
      double move2 = 0.0;
      for (int i = 0; i <= grid.n_steps; ++i)
        move2 += (u_try - result.u)
                     .middleCols(i * k, k)
                     .array()
                     .square()
                     .rowwise()
                     .sum()
                     .mean() *
                 grid.dt;
      if (move2 == 0.0) break;  // projection pinned every coordinate
      EnsembleSolution state_try =
          solve_mf_bdsde(state_problem, paths, &u_try, k, config.solver);
      double J_try = evaluate_cost(spec, state_try, &u_try, grid);
      if (J_try <= J - config.armijo / eta * move2) {
        result.u = std::move(u_try);
        result.state = std::move(state_try);
        J = J_try;
        report.step_sizes.push_back(eta);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      report.termination = "line search failed to decrease the cost";
      if (exact_grad)
        result.adjoint = solve_adjoint(spec, result.state, &result.u, paths, config.solver);
      return result;
    }
    grad = compute_grad(result.state, result.u, &result.adjoint);
  }
  report.termination = "max iterations reached";
  double residual = smp_residual(spec, grad, result.u);
  report.cost_history.push_back(J);
  report.smp_residuals.push_back(residual);
  if (exact_grad)
    result.adjoint = solve_adjoint(spec, result.state, &result.u, paths, config.solver);
  return result;
}

namespace {

// One convexity probe: coupled ensembles (A -> B), fixed (p, q); returns the
// worst pointwise margin of the displayed convexity inequality for H.
double hamiltonian_convexity_margin(const ProblemSpec& spec, const MatrixXd& yA,
                                    const MatrixXd& zA, const MatrixXd& uA,
                                    const MatrixXd& yB, const MatrixXd& zB,
                                    const MatrixXd& uB, const VectorXd& p,
                                    const VectorXd& q) {
  const int M = static_cast<int>(yA.rows());
  MfContext lawA = make_mf_context(&yA, &zA, &uA);
  MfContext lawB = make_mf_context(&yB, &zB, &uB);
  StepContext ctx{0.5, 0, 0};
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < M; ++i) {
    VectorXd y1 = yA.row(i), z1 = zA.row(i), u1 = uA.row(i);
    VectorXd y2 = yB.row(i), z2 = zB.row(i), u2 = uB.row(i);
    HamiltonianEval H1 = hamiltonian(spec, ctx, y1, z1, u1, p, q, lawA);
    HamiltonianEval H2 = hamiltonian(spec, ctx, y2, z2, u2, p, q, lawB);
    double rhs = H1.dy.dot(y2 - y1) + H1.dz.dot(z2 - z1) + H1.du.dot(u2 - u1);
    double law_part = 0.0;
    for (int j = 0; j < M; ++j) {
      VectorXd yj = yA.row(j), zj = zA.row(j), uj = uA.row(j);
      law_part += hamiltonian_dmu(spec, 'y', ctx, y1, z1, u1, p, q, lawA, yj, zj, uj)
                      .dot(VectorXd(yB.row(j) - yA.row(j)));
      law_part += hamiltonian_dmu(spec, 'z', ctx, y1, z1, u1, p, q, lawA, yj, zj, uj)
                      .dot(VectorXd(zB.row(j) - zA.row(j)));
      law_part += hamiltonian_dmu(spec, 'u', ctx, y1, z1, u1, p, q, lawA, yj, zj, uj)
                      .dot(VectorXd(uB.row(j) - uA.row(j)));
    }
    rhs += law_part / M;
    worst = std::min(worst, H2.value - H1.value - rhs);
  }
  return worst;
}

}  // namespace

SufficiencyReport verify_sufficiency(const ProblemSpec& spec, const MatrixXd& u,
                                     const DriverPaths& paths,
                                     const SolverConfig& config, int m_directions,
                                     const std::vector<double>& eps_grid,
                                     std::uint64_t seed) {
  SufficiencyReport report;
  const int k = spec.k;
  const int ny = spec.ny, nz = spec.ny * spec.l;

  // (a) convexity probe of H and Phi on sampled coupled ensembles.
  const int samples = 20, M = 8;
  report.worst_convexity_gap = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    auto draw = [&](int tag, int cols) {
      MatrixXd m(M, cols);
      for (int r = 0; r < M; ++r)
        for (int c = 0; c < cols; ++c)
          m(r, c) = rng::normal(seed, r, s, tag, c);
      return m;
    };
    MatrixXd yA = draw(1, ny), zA = draw(2, nz), uA = draw(3, k);
    MatrixXd yB = draw(4, ny), zB = draw(5, nz), uB = draw(6, k);
    VectorXd p(ny), q(spec.ny * spec.d);
    for (int c = 0; c < p.size(); ++c) p(c) = rng::normal(seed, 0, s, 7, c);
    for (int c = 0; c < q.size(); ++c) q(c) = rng::normal(seed, 1, s, 7, c);
    double margin =
        hamiltonian_convexity_margin(spec, yA, zA, uA, yB, zB, uB, p, q);

    // Terminal-cost convexity on the same y-ensembles.
    if (spec.terminal_cost.value) {
      MfContext lawA = make_mf_context(&yA, nullptr, nullptr);
      MfContext lawB = make_mf_context(&yB, nullptr, nullptr);
      for (int i = 0; i < M; ++i) {
        VectorXd y1 = yA.row(i), y2 = yB.row(i);
        double rhs = 0.0;
        if (spec.terminal_cost.dy)
          rhs += spec.terminal_cost.dy(y1, lawA).dot(y2 - y1);
        if (spec.terminal_cost.dmu_y) {
          double acc = 0.0;
          for (int j = 0; j < M; ++j)
            acc += spec.terminal_cost.dmu_y(y1, lawA, VectorXd(yA.row(j)))
                       .dot(VectorXd(yB.row(j) - yA.row(j)));
          rhs += acc / M;
        }
        margin = std::min(margin, spec.terminal_cost.value(y2, lawB) -
                                      spec.terminal_cost.value(y1, lawA) - rhs);
      }
    }
    report.worst_convexity_gap = std::min(report.worst_convexity_gap, margin);
    if (margin < -1e-9) ++report.convexity_violations;
  }
  report.convexity_pass = report.convexity_violations == 0;

  // (b) cost dominance under common random numbers.
  BdsdeProblem state_problem = spec.state_problem();
  EnsembleSolution base = solve_mf_bdsde(state_problem, paths, &u, k, config);
  VectorXd base_cost = cost_contributions(spec, base, &u, paths.grid);
  const int N = paths.N;
  report.worst_margin = std::numeric_limits<double>::infinity();
  for (int m = 0; m < m_directions; ++m) {
    MatrixXd noise(u.rows(), u.cols());
    for (int p = 0; p < noise.rows(); ++p)
      for (int c = 0; c < noise.cols(); ++c)
        noise(p, c) = rng::normal(seed + 1 + m, p, c, 0x75, 0);
    MatrixXd ubar = project(u + noise, spec.U, k);
    for (double eps : eps_grid) {
      MatrixXd u_eps = u + eps * (ubar - u);
      EnsembleSolution pert = solve_mf_bdsde(state_problem, paths, &u_eps, k, config);
      VectorXd diff = cost_contributions(spec, pert, &u_eps, paths.grid) - base_cost;
      double dJ = diff.mean();
      double se = std::sqrt((diff.array() - dJ).square().sum() /
                            std::max(1, N - 1) / N);
      double margin = dJ + 3 * se;
      report.worst_margin = std::min(report.worst_margin, margin);
      if (margin < -1e-12) ++report.dominance_violations;
    }
  }
  report.dominance_pass = report.dominance_violations == 0;
  return report;
}

}  // namespace mfbdsde
