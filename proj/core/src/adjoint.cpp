#include "mfbdsde/adjoint.hpp"

#include <memory>

namespace mfbdsde {

DriverPaths reverse_time_transform(const DriverPaths& p) {
  DriverPaths r;
  r.grid = p.grid;
  r.N = p.N;
  r.l = p.d;
  r.d = p.l;
  r.seed = p.seed;
  r.mode = p.mode;
  r.weights = p.weights;
  const int n = p.grid.n_steps;
  r.dw.resize(p.N, n * r.l);
  r.db.resize(p.N, n * r.d);
  for (int j = 0; j < n; ++j) {
    r.dw.middleCols(j * r.l, r.l) = p.db.middleCols((n - 1 - j) * p.d, p.d);
    r.db.middleCols(j * r.d, r.d) = p.dw.middleCols((n - 1 - j) * p.l, p.l);
  }
  r.w = MatrixXd::Zero(p.N, (n + 1) * r.l);
  for (int i = 0; i < n; ++i)
    r.w.middleCols((i + 1) * r.l, r.l) =
        r.w.middleCols(i * r.l, r.l) + r.dw.middleCols(i * r.l, r.l);
  r.btail = MatrixXd::Zero(p.N, (n + 1) * r.d);
  for (int i = n - 1; i >= 0; --i)
    r.btail.middleCols(i * r.d, r.d) =
        r.btail.middleCols((i + 1) * r.d, r.d) + r.db.middleCols(i * r.d, r.d);
  return r;
}

MatrixXd reverse_point_blocks(const MatrixXd& m, int block) {
  const int points = static_cast<int>(m.cols()) / block;
  MatrixXd out(m.rows(), m.cols());
  for (int i = 0; i < points; ++i)
    out.middleCols(i * block, block) = m.middleCols((points - 1 - i) * block, block);
  return out;
}

MatrixXd AdjointSolution::p_at(int point) const { return p.middleCols(point * ny, ny); }

MatrixXd AdjointSolution::q_at(int point) const {
  return q.middleCols(point * ny * d, ny * d);
}

MatrixXd adjoint_initial(const ProblemSpec& spec, const MatrixXd& y0) {
  const int N = static_cast<int>(y0.rows());
  MfContext law = make_mf_context(&y0, nullptr, nullptr);
  MatrixXd p0 = MatrixXd::Zero(N, spec.ny);
  const bool linear = spec.kind == InteractionKind::linear_lq;
  parallel_for(N, [&](int particle) {
    VectorXd self = y0.row(particle).transpose();
    VectorXd v = spec.terminal_cost.dy ? spec.terminal_cost.dy(self, law)
                                       : VectorXd(VectorXd::Zero(spec.ny));
    if (spec.terminal_cost.dmu_y) {
      if (linear) {
        // Constant in both slots: one evaluation stands for the average.
        v += spec.terminal_cost.dmu_y(self, law, self);
      } else {
        VectorXd acc = VectorXd::Zero(spec.ny);
        for (int j = 0; j < N; ++j)
          acc += spec.terminal_cost.dmu_y(y0.row(j).transpose(), law, self);
        v += acc / N;
      }
    }
    p0.row(particle) = v.transpose();
  });
  return p0;
}

namespace {

constexpr int kPairwiseCap = 4096;

// Frozen state data at one original grid point, owning the blocks its
// MfContext points into.
struct FrozenTheta {
  MatrixXd y, z, u;
  MfContext law;
};

bool has_pairwise(const ProblemSpec& spec) {
  for (const CoefficientFn* c : {&spec.f, &spec.g, &spec.h})
    if (c->dmu_y || c->dmu_z) return true;
  return false;
}

}  // namespace

AdjointSolution solve_adjoint(const ProblemSpec& spec, const EnsembleSolution& state,
                              const MatrixXd* control, const DriverPaths& paths,
                              const SolverConfig& config) {
  const int n = paths.grid.n_steps;
  const int N = paths.N;
  const int ny = spec.ny;
  const int k = spec.k;
  const bool linear = spec.kind == InteractionKind::linear_lq;
  const bool pairwise = has_pairwise(spec);
  if (pairwise && !linear && N > kPairwiseCap)
    throw CapacityError("solve_adjoint: pairwise mean-field terms capped at N = " +
                        std::to_string(kPairwiseCap));

  auto frozen = std::make_shared<std::vector<FrozenTheta>>(n + 1);
  for (int i = 0; i <= n; ++i) {
    FrozenTheta& fz = (*frozen)[i];
    fz.y = state.y_at(i);
    fz.z = state.z_at(i);
    if (control && k > 0) fz.u = control->middleCols(i * k, k);
    fz.law = make_mf_context(&fz.y, &fz.z, control ? &fz.u : nullptr);
  }

  MatrixXd p0 = adjoint_initial(spec, (*frozen)[0].y);

  // LQ fast path uses the overlined constants with the support means directly.
  LqCoefficients lqc = spec.lq.value_or(LqCoefficients{});

  const std::vector<double> tpoints = paths.grid.points;
  const double dt = paths.grid.dt;

  // Reversed clock: point jp corresponds to original point io = n - jp; the
  // unknown is (p, q), the drift is A = d_y H + pairwise, the new backward
  // integrand is C = d_z H + pairwise, and the law context carries the (p, q)
  // support of the previous Picard iterate in its (Y, Z) blocks.
  //
  // Two boundary cases make the scheme the exact transpose of the discrete
  // state recursion, so that the assembled control gradient is the exact
  // gradient of the discrete cost:
  // * at the original point 0 only the running cost enters the discrete
  //   Lagrangian (the state scheme never evaluates f, g there), so both
  //   blocks reduce to the h-derivatives;
  // * the state scheme evaluates the point-n coefficients with the
  //   duplicated z_{n-1}, so the dW-integrand of the last original interval
  //   gains the transposed z-Jacobians of f, g at point n applied to
  //   p + (drift) dt.  For the linear kind the E[z]-channel of that
  //   correction enters through two ensemble means and is applied as a
  //   closed-form constant on a second pass below; for pairwise kinds the
  //   law channel of this one step is dropped (it only perturbs (p, q) at
  //   the terminal grid point).
  auto eval_block = [=, &spec](char block, const StepContext& rctx, const VectorXd& p,
                               const VectorXd& q, const MfContext& pq_law) -> VectorXd {
    const int io = n - rctx.step;
    const FrozenTheta& fz = (*frozen)[io];
    const int particle = rctx.particle;
    StepContext ctx{tpoints[io], io, particle};
    VectorXd y_self = fz.y.row(particle).transpose();
    VectorXd z_self = fz.z.row(particle).transpose();
    VectorXd u_self = fz.u.size() > 0 ? VectorXd(fz.u.row(particle).transpose())
                                      : VectorXd();
    if (io == 0) {
      const Partial& hp = block == 'y' ? spec.h.dy : spec.h.dz;
      const int rows = block == 'y' ? ny : ny * spec.l;
      VectorXd out = VectorXd::Zero(rows);
      if (hp) out = hp(ctx, y_self, z_self, u_self, fz.law).row(0).transpose();
      if (!pairwise) return out;
      if (linear) {
        if (block == 'y')
          out(0) += lqc.h1_bar * (fz.law.my.size() ? fz.law.my(0) : 0.0);
        else
          out(0) += lqc.h2_bar * (fz.law.mz.size() ? fz.law.mz(0) : 0.0);
        return out;
      }
      const PairwisePartial& pw = block == 'y' ? spec.h.dmu_y : spec.h.dmu_z;
      if (pw && pq_law.N > 0) {
        VectorXd acc = VectorXd::Zero(rows);
        for (int j = 0; j < pq_law.N; ++j) {
          VectorXd yj = fz.y.row(j).transpose();
          VectorXd zj = fz.z.row(j).transpose();
          VectorXd uj = fz.u.size() > 0 ? VectorXd(fz.u.row(j).transpose()) : VectorXd();
          acc += pw(ctx, yj, zj, uj, fz.law, y_self, z_self, u_self).row(0).transpose();
        }
        out += acc / pq_law.N;
      }
      return out;
    }
    HamiltonianEval H = hamiltonian(spec, ctx, y_self, z_self, u_self, p, q, fz.law);
    VectorXd out = block == 'y' ? H.dy : H.dz;
    if (!pairwise) return out;
    if (linear) {
      double mp = pq_law.my.size() ? pq_law.my(0) : 0.0;
      double mq = pq_law.mz.size() ? pq_law.mz(0) : 0.0;
      if (block == 'y')
        out(0) += lqc.f1_bar * mp + lqc.g1_bar * mq +
                  lqc.h1_bar * (fz.law.my.size() ? fz.law.my(0) : 0.0);
      else
        out(0) += lqc.f2_bar * mp + lqc.g2_bar * mq +
                  lqc.h2_bar * (fz.law.mz.size() ? fz.law.mz(0) : 0.0);
      return out;
    }
    VectorXd acc = VectorXd::Zero(out.size());
    const int M = pq_law.N;
    for (int j = 0; j < M; ++j) {
      VectorXd yj = fz.y.row(j).transpose();
      VectorXd zj = fz.z.row(j).transpose();
      VectorXd uj = fz.u.size() > 0 ? VectorXd(fz.u.row(j).transpose()) : VectorXd();
      VectorXd pj = pq_law.Y ? VectorXd(pq_law.Y->row(j).transpose())
                             : VectorXd(VectorXd::Zero(ny));
      VectorXd qj = pq_law.Z ? VectorXd(pq_law.Z->row(j).transpose())
                             : VectorXd(VectorXd::Zero(ny * spec.d));
      acc += hamiltonian_dmu(spec, block, ctx, yj, zj, uj, pj, qj, fz.law, y_self,
                             z_self, u_self);
    }
    if (M > 0) out += acc / M;
    return out;
  };

  auto zbar_constant = std::make_shared<double>(0.0);
  auto coefficient = [=, &paths](char block) -> Coefficient {
    return [=, &paths](const StepContext& rctx, const VectorXd& p, const VectorXd& q,
                       const VectorXd&, const MfContext& pq_law) -> VectorXd {
      VectorXd out = eval_block(block, rctx, p, q, pq_law);
      const int io = n - rctx.step;
      if (block == 'z' && io == n - 1) {
        if (linear) out(0) += *zbar_constant / dt;
        // Duplicated-z correction for the last original interval.
        const int particle = rctx.particle;
        VectorXd A = p + dt * eval_block('y', rctx, p, q, pq_law);
        const FrozenTheta& fn = (*frozen)[n];
        StepContext ctxn{tpoints[n], n, particle};
        VectorXd yn = fn.y.row(particle).transpose();
        VectorXd zn = fn.z.row(particle).transpose();
        VectorXd un = fn.u.size() > 0 ? VectorXd(fn.u.row(particle).transpose())
                                      : VectorXd();
        if (spec.f.dz)
          out += spec.f.dz(ctxn, yn, zn, un, fn.law).transpose() * A;
        if (spec.g.dz) {
          VectorXd s(ny * spec.d);
          for (int c = 0; c < spec.d; ++c)
            for (int r = 0; r < ny; ++r)
              s(c * ny + r) = A(r) * paths.db(particle, (n - 1) * spec.d + c) / dt;
          out += spec.g.dz(ctxn, yn, zn, un, fn.law).transpose() * s;
        }
      }
      return out;
    };
  };

  BdsdeProblem reversed;
  reversed.ny = ny;
  reversed.l = spec.d;  // reversed forward driver is the original B
  reversed.d = spec.l;
  reversed.f = coefficient('y');
  reversed.g = coefficient('z');
  reversed.uses_law = true;
  reversed.terminal = [p0](const DriverPaths&, int particle) {
    return VectorXd(p0.row(particle).transpose());
  };

  DriverPaths rev = reverse_time_transform(paths);
  EnsembleSolution rsol = solve_mf_bdsde(reversed, rev, nullptr, 0, config);
  if (linear && (lqc.f2_bar != 0.0 || lqc.g2_bar != 0.0) && n >= 1) {
    // E[z]-channel of the duplicated-z correction: its coefficient is a
    // single scalar that depends on the ensemble means of the terminal
    // (p, q); the feedback through those means is affine, so one auxiliary
    // pass plus the closed-form fixed point is exact.
    double m1 = rsol.y.col(0).mean();        // reversed point 0 = original n
    double m2 = rsol.z.col(0).mean() * dt;
    double mw = paths.dw.col((n - 1) * paths.l).mean();
    double mwb = (paths.dw.col((n - 1) * paths.l).array() *
                  paths.db.col((n - 1) * paths.d).array())
                     .mean();
    double denom = 1.0 - lqc.f2_bar * mw - lqc.g2_bar * mwb / dt;
    *zbar_constant = (lqc.f2_bar * dt * m1 + lqc.g2_bar * m2) / denom;
    rsol = solve_mf_bdsde(reversed, rev, nullptr, 0, config);
  }

  AdjointSolution out;
  out.ny = ny;
  out.d = spec.d;
  out.p = reverse_point_blocks(rsol.y, ny);
  out.q = reverse_point_blocks(rsol.z, ny * spec.d);
  out.picard_displacements = rsol.picard_displacements;
  out.regression_residuals = rsol.regression_residuals;
  out.converged = rsol.converged;
  out.status = rsol.status;
  return out;
}

}  // namespace mfbdsde
