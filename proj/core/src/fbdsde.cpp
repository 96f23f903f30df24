#include "mfbdsde/fbdsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "mfbdsde/adjoint.hpp"
#include "mfbdsde/law.hpp"
#include "mfbdsde/rng.hpp"

namespace mfbdsde {

MatrixXd ZetaSolution::y_at(int point) const { return fields.y.middleCols(point * ny, ny); }
MatrixXd ZetaSolution::p_at(int point) const { return fields.p.middleCols(point * ny, ny); }
MatrixXd ZetaSolution::z_at(int point) const {
  return fields.z.middleCols(point * ny * l, ny * l);
}
MatrixXd ZetaSolution::q_at(int point) const {
  return fields.q.middleCols(point * ny * d, ny * d);
}

double zeta_distance(const ZetaFields& a, const ZetaFields& b, const TimeGrid& grid,
                     int ny, int l, int d) {
  const int n = grid.n_steps;
  const double N = static_cast<double>(a.y.rows());
  double acc = (a.y.leftCols(ny) - b.y.leftCols(ny)).squaredNorm() / N;
  auto add = [&](const MatrixXd& u, const MatrixXd& v, int blk) {
    acc += grid.dt * (u.leftCols(n * blk) - v.leftCols(n * blk)).squaredNorm() / N;
  };
  add(a.y, b.y, ny);
  add(a.p, b.p, ny);
  add(a.z, b.z, ny * l);
  add(a.q, b.q, ny * d);
  return std::sqrt(acc);
}

namespace {

VectorXd block_of(const MatrixXd& m, int row, int point, int dim) {
  return m.row(row).segment(point * dim, dim).transpose();
}

std::vector<VectorXd> point_means(const MatrixXd& m, int points, int dim) {
  std::vector<VectorXd> out(points);
  for (int i = 0; i < points; ++i)
    out[i] = m.middleCols(i * dim, dim).colwise().mean().transpose();
  return out;
}

double field_scale(const ZetaFields& f) {
  const double N = static_cast<double>(f.y.rows());
  return 1.0 + std::sqrt((f.y.squaredNorm() + f.p.squaredNorm() + f.z.squaredNorm() +
                          f.q.squaredNorm()) /
                         N);
}

ZetaFields zero_fields(int N, int points, int ny, int l, int d) {
  ZetaFields f;
  f.y = MatrixXd::Zero(N, points * ny);
  f.p = MatrixXd::Zero(N, points * ny);
  f.z = MatrixXd::Zero(N, points * ny * l);
  f.q = MatrixXd::Zero(N, points * ny * d);
  return f;
}

// Additive per-particle forcing at each grid point: the deterministic offsets
// plus the delta-weighted homotopy increment frozen at zbar.
struct Forcing {
  MatrixXd f, g;    // y-equation, N x ((n+1)*ny) and N x ((n+1)*ny*d)
  MatrixXd Fd, Gd;  // p-equation, N x ((n+1)*ny) and N x ((n+1)*ny*l)
  MatrixXd psi;     // initial datum, N x ny
};

Forcing build_forcing(const FbdsdeSpec& spec, double delta, const ZetaFields* zbar,
                      const DriverPaths& paths, const MatrixXd& CtC, const MatrixXd& CtD,
                      const MatrixXd& DtC, const MatrixXd& DtD) {
  const int N = paths.N;
  const int points = paths.grid.n_steps + 1;
  const int ny = spec.ny, zdim = ny * spec.l, qdim = ny * spec.d;

  Forcing fc;
  fc.f = MatrixXd::Zero(N, points * ny);
  fc.g = MatrixXd::Zero(N, points * qdim);
  fc.Fd = MatrixXd::Zero(N, points * ny);
  fc.Gd = MatrixXd::Zero(N, points * zdim);
  fc.psi = MatrixXd::Zero(N, ny);

  for (int i = 0; i < points; ++i) {
    StepContext ctx{paths.grid.points[i], i, 0};
    if (spec.f0) fc.f.middleCols(i * ny, ny).rowwise() += spec.f0(ctx).transpose();
    if (spec.g0) fc.g.middleCols(i * qdim, qdim).rowwise() += spec.g0(ctx).transpose();
    if (spec.F0) fc.Fd.middleCols(i * ny, ny).rowwise() += spec.F0(ctx).transpose();
    if (spec.G0) fc.Gd.middleCols(i * zdim, zdim).rowwise() += spec.G0(ctx).transpose();
  }
  if (spec.Psi0.size() > 0) fc.psi.rowwise() += spec.Psi0.transpose();

  if (zbar && delta != 0) {
    std::vector<VectorXd> ym = point_means(zbar->y, points, ny);
    std::vector<VectorXd> pm = point_means(zbar->p, points, ny);
    std::vector<VectorXd> zm = point_means(zbar->z, points, zdim);
    std::vector<VectorXd> qm = point_means(zbar->q, points, qdim);
    for (int i = 0; i < points; ++i) {
      ZetaLaw law{ym[i], pm[i], zm[i], qm[i]};
      const double t = paths.grid.points[i];
      parallel_for(N, [&](int a) {
        StepContext ctx{t, i, a};
        VectorXd y = block_of(zbar->y, a, i, ny);
        VectorXd p = block_of(zbar->p, a, i, ny);
        VectorXd z = block_of(zbar->z, a, i, zdim);
        VectorXd q = block_of(zbar->q, a, i, qdim);
        VectorXd df = spec.f ? spec.f(ctx, y, p, z, q, law) : VectorXd::Zero(ny);
        VectorXd dg = spec.g ? spec.g(ctx, y, p, z, q, law) : VectorXd::Zero(qdim);
        VectorXd dF = spec.F ? spec.F(ctx, y, p, z, q, law) : VectorXd::Zero(ny);
        VectorXd dG = spec.G ? spec.G(ctx, y, p, z, q, law) : VectorXd::Zero(zdim);
        if (spec.b_variant()) {
          df += CtC * p + CtD * q;
          dg += DtC * p + DtD * q;
        } else {
          df += spec.k3 * p;
          dg += spec.k3 * q;
          dF -= spec.k2 * y;
          dG -= spec.k2 * z;
        }
        fc.f.row(a).segment(i * ny, ny) += delta * df.transpose();
        fc.g.row(a).segment(i * qdim, qdim) += delta * dg.transpose();
        fc.Fd.row(a).segment(i * ny, ny) += delta * dF.transpose();
        fc.Gd.row(a).segment(i * zdim, zdim) += delta * dG.transpose();
      });
    }
    MatrixXd y0 = zbar->y.leftCols(ny);
    VectorXd my0 = y0.colwise().mean().transpose();
    for (int a = 0; a < N; ++a) {
      VectorXd y0a = y0.row(a).transpose();
      VectorXd dpsi = spec.Psi ? spec.Psi(y0a, my0) : VectorXd::Zero(ny);
      if (!spec.b_variant()) dpsi -= y0a;
      fc.psi.row(a) += delta * dpsi.transpose();
    }
  }
  return fc;
}

void validate_spec(const FbdsdeSpec& spec, const DriverPaths& paths) {
  if (!spec.xi) throw std::invalid_argument("fbdsde: terminal datum xi is required");
  if (paths.l != spec.l || paths.d != spec.d)
    throw std::invalid_argument("fbdsde: driver dimensions do not match the spec");
  if (spec.b_variant()) {
    if (spec.l != 1 || spec.d != 1)
      throw std::invalid_argument("fbdsde: the C/D variant requires l = d = 1");
    if (spec.C.rows() != spec.ny || spec.C.cols() != spec.ny ||
        spec.D.rows() != spec.ny || spec.D.cols() != spec.ny)
      throw std::invalid_argument("fbdsde: C and D must be ny x ny");
  }
}

// Solves the level-alpha0 linear system with the delta-weighted forcing frozen
// at zbar by alternating the (y, z) backward solve (p, q frozen) with the
// time-reversed (p, q) solve (y, z frozen). The alternation is damped by 1/2
// whenever both equations feed back on each other.
ZetaSolution solve_linearized(const FbdsdeSpec& spec, double alpha0, double delta,
                              const ZetaFields* zbar, const DriverPaths& paths,
                              const ContinuationConfig& config) {
  validate_spec(spec, paths);
  const int n = paths.grid.n_steps;
  const int N = paths.N;
  const int points = n + 1;
  const int ny = spec.ny, zdim = ny * spec.l, qdim = ny * spec.d;

  MatrixXd CtC, CtD, DtC, DtD;
  if (spec.b_variant()) {
    CtC = spec.C.transpose() * spec.C;
    CtD = spec.C.transpose() * spec.D;
    DtC = spec.D.transpose() * spec.C;
    DtD = spec.D.transpose() * spec.D;
  }
  Forcing fc = build_forcing(spec, delta, zbar, paths, CtC, CtD, DtC, DtD);
  DriverPaths rev = reverse_time_transform(paths);

  ZetaSolution out;
  out.ny = ny;
  out.l = spec.l;
  out.d = spec.d;

  ZetaFields cur = zbar ? *zbar : zero_fields(N, points, ny, spec.l, spec.d);
  // The plain variant couples p back to y through the initial datum p_0 = y_0
  // even at alpha = 0, so the alternation needs damping whenever y feeds on
  // (p, q) at all; the C/D variant is coupled in both directions by design.
  // The mixing weight adapts: it halves whenever a sweep fails to contract,
  // which keeps the iteration stable as the coupling gain grows with alpha0.
  const bool damped = spec.b_variant() || spec.k3 != 0 || alpha0 > 0;
  double w = damped ? 0.5 : 1.0;
  double prev_disp = std::numeric_limits<double>::infinity();

  bool settled = false;
  for (int sweep = 0; sweep < config.max_inner; ++sweep) {
    // Backward (y, z) with (p, q) frozen.
    auto pf = std::make_shared<MatrixXd>(cur.p);
    auto qf = std::make_shared<MatrixXd>(cur.q);
    auto pmv = std::make_shared<std::vector<VectorXd>>(point_means(cur.p, points, ny));
    auto qmv = std::make_shared<std::vector<VectorXd>>(point_means(cur.q, points, qdim));

    BdsdeProblem yprob;
    yprob.ny = ny;
    yprob.l = spec.l;
    yprob.d = spec.d;
    yprob.uses_law = true;
    yprob.terminal = spec.xi;
    auto ycoef = [&, pf, qf, pmv, qmv](bool is_g) -> Coefficient {
      return [&, pf, qf, pmv, qmv, is_g](const StepContext& ctx, const VectorXd& y,
                                         const VectorXd& z, const VectorXd&,
                                         const MfContext& mf) {
        const int i = ctx.step;
        VectorXd p = block_of(*pf, ctx.particle, i, ny);
        VectorXd q = block_of(*qf, ctx.particle, i, qdim);
        ZetaLaw law{mf.my, (*pmv)[i], mf.mz, (*qmv)[i]};
        const int dim = is_g ? qdim : ny;
        VectorXd val = block_of(is_g ? fc.g : fc.f, ctx.particle, i, dim);
        const ZetaCoefficient& base = is_g ? spec.g : spec.f;
        if (base && alpha0 != 0) val += alpha0 * base(ctx, y, p, z, q, law);
        if (spec.b_variant())
          val -= (1 - alpha0) * (is_g ? (DtC * p + DtD * q) : (CtC * p + CtD * q));
        else if (spec.k3 != 0)
          val -= (1 - alpha0) * spec.k3 * (is_g ? q : p);
        return val;
      };
    };
    yprob.f = ycoef(false);
    yprob.g = ycoef(true);
    EnsembleSolution ysol = solve_mf_bdsde(yprob, paths, nullptr, 0, config.solver);

    // Initial datum for p from the fresh y_0.
    MatrixXd y0 = ysol.y.leftCols(ny);
    VectorXd my0 = y0.colwise().mean().transpose();
    auto P0 = std::make_shared<MatrixXd>(fc.psi);
    for (int a = 0; a < N; ++a) {
      VectorXd row = P0->row(a).transpose();
      VectorXd y0a = y0.row(a).transpose();
      if (spec.Psi && alpha0 != 0) row += alpha0 * spec.Psi(y0a, my0);
      if (!spec.b_variant()) row += (1 - alpha0) * y0a;
      P0->row(a) = row.transpose();
    }

    // Forward (p, q) with (y, z) frozen: a BDSDE on the reversed clock with
    // terminal datum p_0; reversed point j is original point n - j.
    auto yf = std::make_shared<MatrixXd>(ysol.y);
    auto zf = std::make_shared<MatrixXd>(ysol.z);
    auto ymv = std::make_shared<std::vector<VectorXd>>(point_means(ysol.y, points, ny));
    auto zmv = std::make_shared<std::vector<VectorXd>>(point_means(ysol.z, points, zdim));

    BdsdeProblem pprob;
    pprob.ny = ny;
    pprob.l = spec.d;
    pprob.d = spec.l;
    pprob.uses_law = true;
    pprob.terminal = [P0](const DriverPaths&, int particle) {
      return VectorXd(P0->row(particle).transpose());
    };
    auto pcoef = [&, yf, zf, ymv, zmv](bool is_G) -> Coefficient {
      return [&, yf, zf, ymv, zmv, is_G](const StepContext& rctx, const VectorXd& p,
                                         const VectorXd& q, const VectorXd&,
                                         const MfContext& mf) {
        const int io = n - rctx.step;
        StepContext ctx{paths.grid.points[io], io, rctx.particle};
        VectorXd y = block_of(*yf, rctx.particle, io, ny);
        VectorXd z = block_of(*zf, rctx.particle, io, zdim);
        ZetaLaw law{(*ymv)[io], mf.my, (*zmv)[io], mf.mz};
        const int dim = is_G ? zdim : ny;
        VectorXd val = block_of(is_G ? fc.Gd : fc.Fd, rctx.particle, io, dim);
        const ZetaCoefficient& base = is_G ? spec.G : spec.F;
        if (base && alpha0 != 0) val += alpha0 * base(ctx, y, p, z, q, law);
        if (!spec.b_variant() && spec.k2 != 0)
          val += (1 - alpha0) * spec.k2 * (is_G ? z : y);
        return val;
      };
    };
    pprob.f = pcoef(false);
    pprob.g = pcoef(true);
    EnsembleSolution psol = solve_mf_bdsde(pprob, rev, nullptr, 0, config.solver);

    ZetaFields next;
    next.y = ysol.y;
    next.z = ysol.z;
    next.p = reverse_point_blocks(psol.y, ny);
    next.q = reverse_point_blocks(psol.z, qdim);

    double disp = zeta_distance(next, cur, paths.grid, ny, spec.l, spec.d);
    out.displacements.push_back(disp);
    if (!std::isfinite(disp)) {
      out.status = "alternation diverged";
      break;
    }
    if (disp > prev_disp && w > 1.0 / 64) w *= 0.5;
    ZetaFields delta_f;
    delta_f.y = w * (next.y - cur.y);
    delta_f.p = w * (next.p - cur.p);
    delta_f.z = w * (next.z - cur.z);
    delta_f.q = w * (next.q - cur.q);
    cur.y += delta_f.y;
    cur.p += delta_f.p;
    cur.z += delta_f.z;
    cur.q += delta_f.q;
    if (!ysol.converged || !psol.converged) out.status = "inner picard loop did not settle";
    if (disp <= config.inner_tol * field_scale(cur)) {
      settled = true;
      break;
    }
    prev_disp = disp;
  }
  if (!settled) {
    out.converged = false;
    if (out.status.empty()) out.status = "alternation hit max sweeps";
  }
  out.fields = std::move(cur);
  return out;
}

}  // namespace

ZetaSolution solve_alpha0(const FbdsdeSpec& spec, const DriverPaths& paths,
                          const ContinuationConfig& config) {
  return solve_linearized(spec, 0.0, 0.0, nullptr, paths, config);
}

ZetaSolution contraction_step(const FbdsdeSpec& spec, double alpha0, double delta,
                              const ZetaFields& zbar, const DriverPaths& paths,
                              const ContinuationConfig& config) {
  return solve_linearized(spec, alpha0, delta, &zbar, paths, config);
}

ZetaSolution continuation_solve(const FbdsdeSpec& spec, const DriverPaths& paths,
                                const ContinuationConfig& config, ContinuationState* state,
                                const ZetaFields* initial) {
  ZetaSolution sol = solve_alpha0(spec, paths, config);
  ZetaFields cur = initial ? *initial : sol.fields;
  double alpha = 0.0;
  double delta = config.delta;
  ContinuationState local;
  ContinuationState& st = state ? *state : local;
  st = ContinuationState{};

  while (alpha < 1.0 - 1e-12) {
    const double step = std::min(delta, 1.0 - alpha);
    ZetaFields zb = cur;
    bool fixed = false;
    double worst_ratio = 0.0;
    double prev_disp = -1.0;
    for (int m = 0; m < config.max_fixed_point; ++m) {
      sol = contraction_step(spec, alpha, step, zb, paths, config);
      double disp = zeta_distance(sol.fields, zb, paths.grid, spec.ny, spec.l, spec.d);
      st.displacement_history.push_back(disp);
      if (!std::isfinite(disp) || !sol.converged) break;
      if (prev_disp > 1e-300) worst_ratio = std::max(worst_ratio, disp / prev_disp);
      prev_disp = disp;
      zb = sol.fields;
      if (disp <= config.fixed_point_tol * field_scale(zb)) {
        fixed = true;
        break;
      }
    }
    if (fixed) {
      alpha += step;
      cur = zb;
      st.alpha_history.push_back(alpha);
      st.delta_history.push_back(step);
      st.contraction_ratios.push_back(worst_ratio);
    } else {
      delta *= 0.5;
      if (delta < config.delta_min) {
        st.alpha = alpha;
        st.delta = delta;
        st.iterate = cur;
        st.status = "continuation stalled: delta fell below delta_min";
        sol.fields = cur;
        sol.converged = false;
        sol.status = st.status;
        return sol;
      }
    }
  }
  st.alpha = alpha;
  st.delta = delta;
  st.iterate = cur;
  st.success = true;
  st.status = "continuation reached alpha = 1";
  sol.fields = cur;
  return sol;
}

FbdsdeResiduals fbdsde_residuals(const FbdsdeSpec& spec, const ZetaSolution& sol,
                                 const DriverPaths& paths) {
  const int n = paths.grid.n_steps;
  const int N = paths.N;
  const int points = n + 1;
  const int ny = sol.ny, zdim = ny * sol.l, qdim = ny * sol.d;
  const double dt = paths.grid.dt;

  std::vector<VectorXd> ym = point_means(sol.fields.y, points, ny);
  std::vector<VectorXd> pm = point_means(sol.fields.p, points, ny);
  std::vector<VectorXd> zm = point_means(sol.fields.z, points, zdim);
  std::vector<VectorXd> qm = point_means(sol.fields.q, points, qdim);

  // Full (alpha = 1) coefficients with offsets, per particle at one point.
  auto eval = [&](const ZetaCoefficient& base,
                  const std::function<VectorXd(const StepContext&)>& offset, int point,
                  int dim) {
    MatrixXd out = MatrixXd::Zero(N, dim);
    ZetaLaw law{ym[point], pm[point], zm[point], qm[point]};
    const double t = paths.grid.points[point];
    if (offset) out.rowwise() += offset(StepContext{t, point, 0}).transpose();
    if (base) {
      parallel_for(N, [&](int a) {
        StepContext ctx{t, point, a};
        out.row(a) += base(ctx, block_of(sol.fields.y, a, point, ny),
                           block_of(sol.fields.p, a, point, ny),
                           block_of(sol.fields.z, a, point, zdim),
                           block_of(sol.fields.q, a, point, qdim), law)
                          .transpose();
      });
    }
    return out;
  };

  FbdsdeResiduals res;
  res.backward = VectorXd::Zero(points);
  res.forward = VectorXd::Zero(points);

  MatrixXd xi(N, ny);
  for (int a = 0; a < N; ++a) xi.row(a) = spec.xi(paths, a).transpose();
  res.backward(n) =
      std::sqrt((sol.fields.y.middleCols(n * ny, ny) - xi).array().square().mean());

  MatrixXd acc = MatrixXd::Zero(N, ny);
  for (int j = n - 1; j >= 0; --j) {
    MatrixXd fv = eval(spec.f, spec.f0, j + 1, ny);
    MatrixXd gv = eval(spec.g, spec.g0, j + 1, qdim);
    acc += dt * fv;
    for (int r = 0; r < ny; ++r) {
      for (int c = 0; c < sol.d; ++c)
        acc.col(r).array() +=
            gv.col(c * ny + r).array() * paths.db.col(j * paths.d + c).array();
      for (int a = 0; a < sol.l; ++a)
        acc.col(r).array() -= sol.fields.z.col(j * zdim + a * ny + r).array() *
                              paths.dw.col(j * paths.l + a).array();
    }
    MatrixXd gap = sol.fields.y.middleCols(j * ny, ny) - xi - acc;
    res.backward(j) = std::sqrt(gap.array().square().mean());
  }

  // Initial-datum consistency at point 0, then the integrated p identity.
  MatrixXd p0 = sol.fields.p.leftCols(ny);
  {
    MatrixXd y0 = sol.fields.y.leftCols(ny);
    VectorXd my0 = y0.colwise().mean().transpose();
    MatrixXd target = MatrixXd::Zero(N, ny);
    if (spec.Psi0.size() > 0) target.rowwise() += spec.Psi0.transpose();
    if (spec.Psi)
      for (int a = 0; a < N; ++a)
        target.row(a) += spec.Psi(y0.row(a).transpose(), my0).transpose();
    res.forward(0) = std::sqrt((p0 - target).array().square().mean());
  }
  acc.setZero();
  for (int i = 1; i <= n; ++i) {
    const int j = i - 1;
    MatrixXd Fv = eval(spec.F, spec.F0, j, ny);
    MatrixXd Gv = eval(spec.G, spec.G0, j, zdim);
    acc += dt * Fv;
    for (int r = 0; r < ny; ++r) {
      for (int a = 0; a < sol.l; ++a)
        acc.col(r).array() +=
            Gv.col(a * ny + r).array() * paths.dw.col(j * paths.l + a).array();
      for (int c = 0; c < sol.d; ++c)
        acc.col(r).array() -= sol.fields.q.col(i * qdim + c * ny + r).array() *
                              paths.db.col(j * paths.d + c).array();
    }
    MatrixXd gap = sol.fields.p.middleCols(i * ny, ny) - p0 - acc;
    res.forward(i) = std::sqrt(gap.array().square().mean());
  }
  return res;
}

namespace {

struct ProbeSample {
  MatrixXd y1, p1, z1, q1, y2, p2, z2, q2;
};

MatrixXd probe_matrix(std::uint64_t seed, std::uint64_t s, std::uint64_t tag, int rows,
                      int cols) {
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng::normal(seed, s, r, tag, c);
  return m;
}

MatrixXd centered(MatrixXd m) {
  m.rowwise() -= m.colwise().mean();
  return m;
}

}  // namespace

AssumptionReport probe_assumptions(const FbdsdeSpec& spec, int samples,
                                   std::uint64_t seed) {
  const int ny = spec.ny, zdim = ny * spec.l, qdim = ny * spec.d;
  const int M = 16;

  std::vector<ProbeSample> set;
  std::uint64_t s = 0;
  auto base = [&](std::uint64_t key) {
    ProbeSample ps;
    ps.y1 = probe_matrix(seed, key, 1, M, ny);
    ps.p1 = probe_matrix(seed, key, 2, M, ny);
    ps.z1 = probe_matrix(seed, key, 3, M, zdim);
    ps.q1 = probe_matrix(seed, key, 4, M, qdim);
    ps.y2 = ps.y1;
    ps.p2 = ps.p1;
    ps.z2 = ps.z1;
    ps.q2 = ps.q1;
    return ps;
  };
  // Random joint displacements.
  for (int r = 0; r < samples; ++r) {
    ProbeSample ps = base(s);
    ps.y2 += 0.7 * probe_matrix(seed, s, 5, M, ny);
    ps.p2 += 0.7 * probe_matrix(seed, s, 6, M, ny);
    ps.z2 += 0.7 * probe_matrix(seed, s, 7, M, zdim);
    ps.q2 += 0.7 * probe_matrix(seed, s, 8, M, qdim);
    set.push_back(std::move(ps));
    ++s;
  }
  // Structured single-field displacements: a constant shift (moves the mean)
  // and a mean-zero perturbation (leaves it), for each of the four fields.
  for (int field = 0; field < 4; ++field) {
    for (int kind = 0; kind < 2; ++kind) {
      ProbeSample ps = base(s);
      MatrixXd* target[] = {&ps.y2, &ps.p2, &ps.z2, &ps.q2};
      const int dims[] = {ny, ny, zdim, qdim};
      MatrixXd d = kind == 0 ? MatrixXd::Ones(M, dims[field])
                             : centered(probe_matrix(seed, s, 9, M, dims[field]));
      *target[field] += d;
      set.push_back(std::move(ps));
      ++s;
    }
  }
  // Joint (p, q) rays q-gap = ratio * p-gap: these sweep through degenerate
  // directions where the coupling C p + D q (or its analogue) is annihilated.
  if (qdim == ny) {
    std::vector<double> ratios = {-4, -3, -2.5, -2, -1.5, -1, -0.5, 0.5, 1, 2, 3, 4};
    if (spec.b_variant() && ny == 1 && std::abs(spec.D(0, 0)) > 1e-12)
      ratios.push_back(-spec.C(0, 0) / spec.D(0, 0));
    for (double ratio : ratios) {
      for (int kind = 0; kind < 2; ++kind) {
        ProbeSample ps = base(s);
        MatrixXd dp = kind == 0 ? MatrixXd::Ones(M, ny)
                                : centered(probe_matrix(seed, s, 9, M, ny));
        ps.p2 += dp;
        ps.q2 += ratio * dp;
        set.push_back(std::move(ps));
        ++s;
      }
    }
  }

  AssumptionReport rep;
  std::vector<double> av, bv, cv, ev, tolv;
  StepContext base_ctx{0.5, 0, 0};
  for (const ProbeSample& ps : set) {
    auto law_of = [&](const MatrixXd& y, const MatrixXd& p, const MatrixXd& z,
                      const MatrixXd& q) {
      return ZetaLaw{y.colwise().mean().transpose(), p.colwise().mean().transpose(),
                     z.colwise().mean().transpose(), q.colwise().mean().transpose()};
    };
    ZetaLaw l1 = law_of(ps.y1, ps.p1, ps.z1, ps.q1);
    ZetaLaw l2 = law_of(ps.y2, ps.p2, ps.z2, ps.q2);
    double a_s = 0, b_s = 0, c_s = 0, e_s = 0, num2 = 0;
    for (int r = 0; r < M; ++r) {
      StepContext ctx{0.5, 0, r};
      auto coeff = [&](const ZetaCoefficient& c, const MatrixXd& y, const MatrixXd& p,
                       const MatrixXd& z, const MatrixXd& q, const ZetaLaw& law,
                       int dim) {
        if (!c) return VectorXd(VectorXd::Zero(dim));
        return c(ctx, y.row(r).transpose(), p.row(r).transpose(), z.row(r).transpose(),
                 q.row(r).transpose(), law);
      };
      VectorXd df = coeff(spec.f, ps.y2, ps.p2, ps.z2, ps.q2, l2, ny) -
                    coeff(spec.f, ps.y1, ps.p1, ps.z1, ps.q1, l1, ny);
      VectorXd dg = coeff(spec.g, ps.y2, ps.p2, ps.z2, ps.q2, l2, qdim) -
                    coeff(spec.g, ps.y1, ps.p1, ps.z1, ps.q1, l1, qdim);
      VectorXd dF = coeff(spec.F, ps.y2, ps.p2, ps.z2, ps.q2, l2, ny) -
                    coeff(spec.F, ps.y1, ps.p1, ps.z1, ps.q1, l1, ny);
      VectorXd dG = coeff(spec.G, ps.y2, ps.p2, ps.z2, ps.q2, l2, zdim) -
                    coeff(spec.G, ps.y1, ps.p1, ps.z1, ps.q1, l1, zdim);
      VectorXd dy = (ps.y2.row(r) - ps.y1.row(r)).transpose();
      VectorXd dp = (ps.p2.row(r) - ps.p1.row(r)).transpose();
      VectorXd dz = (ps.z2.row(r) - ps.z1.row(r)).transpose();
      VectorXd dq = (ps.q2.row(r) - ps.q1.row(r)).transpose();
      a_s += -dF.dot(dy) + df.dot(dp) - dG.dot(dz) + dg.dot(dq);
      b_s += dy.squaredNorm() + dz.squaredNorm();
      c_s += dp.squaredNorm() + dq.squaredNorm();
      if (spec.b_variant()) e_s += (spec.C * dp + spec.D * dq).squaredNorm();
      num2 += df.squaredNorm() + dg.squaredNorm() + dF.squaredNorm() + dG.squaredNorm();
    }
    a_s /= M;
    b_s /= M;
    c_s /= M;
    e_s /= M;
    num2 /= M;
    av.push_back(a_s);
    bv.push_back(b_s);
    cv.push_back(c_s);
    ev.push_back(e_s);
    tolv.push_back(1e-7 * (b_s + c_s));
    if (b_s + c_s > 1e-14)
      rep.worst_monotonicity = std::max(rep.worst_monotonicity, a_s / (b_s + c_s));
    MatrixXd stack1(M, ny + ny + zdim + qdim), stack2(M, ny + ny + zdim + qdim);
    stack1 << ps.y1, ps.p1, ps.z1, ps.q1;
    stack2 << ps.y2, ps.p2, ps.z2, ps.q2;
    double den = std::sqrt(b_s + c_s) + wasserstein2(stack1, stack2);
    if (den > 1e-12)
      rep.lipschitz_ratio = std::max(rep.lipschitz_ratio, std::sqrt(num2) / den);
  }

  // Initial-coupling map: monotonicity margin and Lipschitz ratio over y_0
  // ensembles with constant, mean-zero and random displacements.
  rep.psi_margin = std::numeric_limits<double>::infinity();
  for (int kind = 0; kind < 3; ++kind) {
    MatrixXd y1 = probe_matrix(seed, 1000 + kind, 1, M, ny);
    MatrixXd d = kind == 0   ? MatrixXd::Ones(M, ny)
                 : kind == 1 ? centered(probe_matrix(seed, 1000 + kind, 2, M, ny))
                             : MatrixXd(probe_matrix(seed, 1000 + kind, 2, M, ny));
    MatrixXd y2 = y1 + d;
    VectorXd m1 = y1.colwise().mean().transpose(), m2 = y2.colwise().mean().transpose();
    double inner = 0, gap2 = 0, dpsi2 = 0;
    for (int r = 0; r < M; ++r) {
      VectorXd psi1 = spec.Psi ? spec.Psi(y1.row(r).transpose(), m1) : VectorXd::Zero(ny);
      VectorXd psi2 = spec.Psi ? spec.Psi(y2.row(r).transpose(), m2) : VectorXd::Zero(ny);
      VectorXd dy = (y2.row(r) - y1.row(r)).transpose();
      inner += (psi2 - psi1).dot(dy);
      gap2 += dy.squaredNorm();
      dpsi2 += (psi2 - psi1).squaredNorm();
    }
    if (gap2 > 1e-14) rep.psi_margin = std::min(rep.psi_margin, inner / gap2);
    double den = std::sqrt(gap2 / M) + wasserstein2(y1, y2);
    if (den > 1e-12)
      rep.psi_lipschitz_ratio =
          std::max(rep.psi_lipschitz_ratio, std::sqrt(dpsi2 / M) / den);
  }
  if (!std::isfinite(rep.psi_margin)) rep.psi_margin = 0;

  rep.a1_pass = spec.k1 <= 0 || rep.lipschitz_ratio <= spec.k1 * (1 + 1e-6);

  // Monotonicity grids: every sampled pair must satisfy the declared decay.
  const std::vector<double> K = {0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5};
  bool a2_found = false;
  for (double k2 : K) {
    for (double k3 : K) {
      if (k2 + k3 <= 0) continue;
      bool ok = true;
      for (std::size_t i = 0; i < av.size() && ok; ++i)
        ok = av[i] + k2 * bv[i] + k3 * cv[i] <= tolv[i];
      if (ok && (!a2_found || k2 + k3 > rep.a2_k2 + rep.a2_k3)) {
        a2_found = true;
        rep.a2_k2 = k2;
        rep.a2_k3 = k3;
      }
    }
  }
  rep.a2_k4 = std::max(0.0, rep.psi_margin);
  rep.a2_pass = a2_found && rep.a2_k3 + rep.a2_k4 > 0 &&
                (rep.a2_k3 > 0 || spec.lambda1 + spec.lambda2 < 1) &&
                (rep.a2_k2 > 0 || spec.lambda1 + spec.lambda2 < 1);

  if (spec.b_variant()) {
    bool b1_found = false;
    for (double c1 : K) {
      for (double c2 : K) {
        if (c2 <= 0) continue;
        bool ok = true;
        for (std::size_t i = 0; i < av.size() && ok; ++i)
          ok = av[i] + c1 * bv[i] + c2 * ev[i] <= tolv[i];
        if (ok && (!b1_found || c2 > rep.b1_c2 || (c2 == rep.b1_c2 && c1 > rep.b1_c1))) {
          b1_found = true;
          rep.b1_c1 = c1;
          rep.b1_c2 = c2;
        }
      }
    }
    rep.b1_pass = b1_found && rep.psi_margin >= -1e-9;
    rep.b2_pass = spec.lambda1 + spec.lambda2 < 1 &&
                  (spec.c3 <= 0 || rep.lipschitz_ratio <= spec.c3 * (1 + 1e-6));
  }
  return rep;
}

FbdsdeSpec make_lq_hamiltonian_spec(const LqCoefficients& c,
                                    std::function<VectorXd(const DriverPaths&, int)> xi) {
  if (c.h3 <= 0) throw std::invalid_argument("lq hamiltonian system: h3 must be positive");
  if (c.h3 + c.h3_bar <= 0)
    throw std::invalid_argument("lq hamiltonian system: h3 + h3_bar must be positive");
  const double cf = (c.h3 * c.f3_bar - c.h3_bar * c.f3) / (c.h3 + c.h3_bar);
  const double cg = (c.h3 * c.g3_bar - c.h3_bar * c.g3) / (c.h3 + c.h3_bar);
  // Pointwise minimizer of the Hamiltonian and the induced mean relation.
  auto u_of = [c, cf, cg](double p, double q, double mp, double mq) {
    return -(c.f3 * p + cf * mp + c.g3 * q + cg * mq) / c.h3;
  };
  auto eu_of = [c](double mp, double mq) {
    return -((c.f3 + c.f3_bar) * mp + (c.g3 + c.g3_bar) * mq) / (c.h3 + c.h3_bar);
  };
  auto scalar = [](double v) { return (VectorXd(1) << v).finished(); };

  FbdsdeSpec spec;
  spec.ny = spec.l = spec.d = 1;
  spec.xi = std::move(xi);
  spec.f = [c, u_of, eu_of, scalar](const StepContext&, const VectorXd& y,
                                    const VectorXd& p, const VectorXd& z,
                                    const VectorXd& q, const ZetaLaw& law) {
    double u = u_of(p(0), q(0), law.mp(0), law.mq(0));
    double eu = eu_of(law.mp(0), law.mq(0));
    return scalar(c.f1 * y(0) + c.f2 * z(0) + c.f3 * u + c.f1_bar * law.my(0) +
                  c.f2_bar * law.mz(0) + c.f3_bar * eu);
  };
  spec.g = [c, u_of, eu_of, scalar](const StepContext&, const VectorXd& y,
                                    const VectorXd& p, const VectorXd& z,
                                    const VectorXd& q, const ZetaLaw& law) {
    double u = u_of(p(0), q(0), law.mp(0), law.mq(0));
    double eu = eu_of(law.mp(0), law.mq(0));
    return scalar(c.g1 * y(0) + c.g2 * z(0) + c.g3 * u + c.g1_bar * law.my(0) +
                  c.g2_bar * law.mz(0) + c.g3_bar * eu);
  };
  spec.F = [c, scalar](const StepContext&, const VectorXd& y, const VectorXd& p,
                       const VectorXd&, const VectorXd& q, const ZetaLaw& law) {
    return scalar(c.f1 * p(0) + c.g1 * q(0) + c.h1 * y(0) + c.f1_bar * law.mp(0) +
                  c.g1_bar * law.mq(0) + c.h1_bar * law.my(0));
  };
  spec.G = [c, scalar](const StepContext&, const VectorXd&, const VectorXd& p,
                       const VectorXd& z, const VectorXd& q, const ZetaLaw& law) {
    return scalar(c.f2 * p(0) + c.g2 * q(0) + c.h2 * z(0) + c.f2_bar * law.mp(0) +
                  c.g2_bar * law.mq(0) + c.h2_bar * law.mz(0));
  };
  spec.Psi = [c, scalar](const VectorXd& y0, const VectorXd& mean_y0) {
    return scalar(c.phi * y0(0) + c.phi_bar * mean_y0(0));
  };

  spec.C = (MatrixXd(1, 1) << c.f3).finished();
  spec.D = (MatrixXd(1, 1) << c.g3).finished();
  spec.c1 = std::min(c.h1, c.h2);
  spec.c2 = 1.0 / c.h3;
  double mag = std::abs(c.f1) + std::abs(c.f2) + std::abs(c.f3) + std::abs(c.g1) +
               std::abs(c.g2) + std::abs(c.g3) + std::abs(c.h1) + std::abs(c.h2) +
               std::abs(c.f1_bar) + std::abs(c.f2_bar) + std::abs(c.f3_bar) +
               std::abs(c.g1_bar) + std::abs(c.g2_bar) + std::abs(c.g3_bar) +
               std::abs(c.h1_bar) + std::abs(c.h2_bar) + std::abs(cf) + std::abs(cg) +
               (std::abs(c.f3) + std::abs(c.g3) + std::abs(c.f3_bar) + std::abs(c.g3_bar)) /
                   std::min(c.h3, c.h3 + c.h3_bar);
  spec.c3 = 10.0 * (1.0 + mag) * (1.0 + mag);
  spec.k1 = spec.c3;
  spec.k2 = spec.c1;
  spec.k4 = c.phi;
  spec.lambda1 = std::abs(c.g2);
  spec.lambda2 = std::abs(c.g2_bar);
  return spec;
}

LqSystemSolution solve_lq_hamiltonian_system(const LqCoefficients& c,
                                             std::function<VectorXd(const DriverPaths&, int)> xi,
                                             const DriverPaths& paths,
                                             const ContinuationConfig& config) {
  FbdsdeSpec spec = make_lq_hamiltonian_spec(c, std::move(xi));
  LqSystemSolution out;
  out.zeta = continuation_solve(spec, paths, config, &out.trace);

  const int points = paths.grid.n_steps + 1;
  const double cf = (c.h3 * c.f3_bar - c.h3_bar * c.f3) / (c.h3 + c.h3_bar);
  const double cg = (c.h3 * c.g3_bar - c.h3_bar * c.g3) / (c.h3 + c.h3_bar);
  out.u.resize(paths.N, points);
  for (int i = 0; i < points; ++i) {
    VectorXd p = out.zeta.fields.p.col(i);
    VectorXd q = out.zeta.fields.q.col(i);
    const double mp = p.mean(), mq = q.mean();
    out.u.col(i) =
        (-(c.f3 * p + c.g3 * q).array() - (cf * mp + cg * mq)) / c.h3;
    const double eu =
        -((c.f3 + c.f3_bar) * mp + (c.g3 + c.g3_bar) * mq) / (c.h3 + c.h3_bar);
    out.eu_gap = std::max(out.eu_gap, std::abs(out.u.col(i).mean() - eu));
  }
  return out;
}

}  // namespace mfbdsde
