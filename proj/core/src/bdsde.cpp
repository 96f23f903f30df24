#include "mfbdsde/bdsde.hpp"

#include <cmath>

#include "mfbdsde/law.hpp"

namespace mfbdsde {

MatrixXd EnsembleSolution::y_at(int point) const { return y.middleCols(point * ny, ny); }

MatrixXd EnsembleSolution::z_at(int point) const {
  return z.middleCols(point * ny * l, ny * l);
}

MfContext make_mf_context(const MatrixXd* Y, const MatrixXd* Z, const MatrixXd* U) {
  MfContext ctx;
  ctx.Y = Y;
  ctx.Z = Z;
  ctx.U = U;
  for (const MatrixXd* block : {Y, Z, U})
    if (block && block->rows() > 0) ctx.N = static_cast<int>(block->rows());
  if (Y && Y->size() > 0) ctx.my = Y->colwise().mean().transpose();
  if (Z && Z->size() > 0) ctx.mz = Z->colwise().mean().transpose();
  if (U && U->size() > 0) ctx.mu = U->colwise().mean().transpose();
  return ctx;
}

namespace {

VectorXd control_at(const MatrixXd* control, int k, int particle, int point) {
  if (!control || k == 0) return VectorXd();
  return control->row(particle).segment(point * k, k).transpose();
}

// f_{i+1} dt + g_{i+1} dB_i per particle, plus the raw g values (needed by the
// residual check); law evaluated on the supplied support blocks.
struct CoefficientEval {
  MatrixXd f;  // N x ny
  MatrixXd g;  // N x (ny*d)
};

CoefficientEval evaluate_coefficients(const BdsdeProblem& problem, const DriverPaths& paths,
                                      const MatrixXd& y_next, const MatrixXd& z_next,
                                      const MatrixXd* control, int k, int point,
                                      const MfContext& law) {
  const int N = paths.N;
  CoefficientEval out;
  out.f = MatrixXd::Zero(N, problem.ny);
  out.g = MatrixXd::Zero(N, problem.ny * problem.d);
  double t = paths.grid.points[point];
  parallel_for(N, [&](int particle) {
    StepContext ctx{t, point, particle};
    VectorXd yv = y_next.row(particle).transpose();
    VectorXd zv = z_next.row(particle).transpose();
    VectorXd uv = control_at(control, k, particle, point);
    if (problem.f) out.f.row(particle) = problem.f(ctx, yv, zv, uv, law).transpose();
    if (problem.g) out.g.row(particle) = problem.g(ctx, yv, zv, uv, law).transpose();
  });
  return out;
}

}  // namespace

EnsembleSolution solve_mf_bdsde(const BdsdeProblem& problem, const DriverPaths& paths,
                                const MatrixXd* control, int k,
                                const SolverConfig& config) {
  const int N = paths.N;
  const int n = paths.grid.n_steps;
  const int ny = problem.ny;
  const int nz = problem.ny * problem.l;
  const double dt = paths.grid.dt;

  // Conditioning operators are control/law independent; build them once.
  std::vector<ConditionalExpectation> ce;
  ce.reserve(n);
  for (int i = 0; i < n; ++i) ce.emplace_back(paths, i, config.regression);

  MatrixXd xi(N, ny);
  for (int particle = 0; particle < N; ++particle)
    xi.row(particle) = problem.terminal(paths, particle).transpose();
  if (!xi.allFinite()) throw NumericalError("solve_mf_bdsde: non-finite terminal datum");

  EnsembleSolution sol;
  sol.ny = ny;
  sol.l = problem.l;

  // First sweep freezes the law at (y = xi held flat, z = 0).
  MatrixXd prev_y = xi.replicate(1, n + 1);
  MatrixXd prev_z = MatrixXd::Zero(N, (n + 1) * nz);

  bool needs_iteration = problem.uses_law || static_cast<bool>(problem.f) ||
                         static_cast<bool>(problem.g);
  int max_iter = needs_iteration ? config.max_picard : 1;

  MatrixXd cur_y(N, (n + 1) * ny), cur_z(N, (n + 1) * nz);
  bool settled = max_iter == 1;
  for (int iter = 0; iter < max_iter; ++iter) {
    cur_y.middleCols(n * ny, ny) = xi;
    sol.regression_residuals.assign(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
      MatrixXd y_next = cur_y.middleCols((i + 1) * ny, ny);
      MatrixXd z_next = (i + 1 < n) ? MatrixXd(cur_z.middleCols((i + 1) * nz, nz))
                                    : MatrixXd(prev_z.middleCols((n - 1) * nz, nz));
      MatrixXd law_y = prev_y.middleCols((i + 1) * ny, ny);
      MatrixXd law_z = prev_z.middleCols((i + 1) * nz, nz);
      MatrixXd law_u;
      if (control && k > 0) law_u = control->middleCols((i + 1) * k, k);
      MfContext law = make_mf_context(&law_y, &law_z, control ? &law_u : nullptr);

      CoefficientEval coeff = evaluate_coefficients(problem, paths, y_next, z_next,
                                                    control, k, i + 1, law);

      // Combined target: y_{i+1} + f dt + g dB_i.
      MatrixXd target = y_next + dt * coeff.f;
      for (int r = 0; r < ny; ++r)
        for (int c = 0; c < problem.d; ++c)
          target.col(r).array() +=
              coeff.g.col(c * ny + r).array() * paths.db.col(i * paths.d + c).array();
      if (!target.allFinite())
        throw NumericalError("solve_mf_bdsde: non-finite target at step " +
                             std::to_string(i));

      MatrixXd mean = ce[i].apply(target);
      MatrixXd centered = target - mean;
      // z_i = E[(T - E T) dW^T | F_i] / dt, column block a holds z(:, a).
      MatrixXd zdw_targets(N, nz);
      for (int a = 0; a < problem.l; ++a)
        for (int r = 0; r < ny; ++r)
          zdw_targets.col(a * ny + r) =
              centered.col(r).array() * paths.dw.col(i * paths.l + a).array();
      MatrixXd z_i = ce[i].apply(zdw_targets) / dt;
      cur_z.middleCols(i * nz, nz) = z_i;

      // Remove the fitted martingale part before projecting y.
      MatrixXd y_target = target;
      for (int a = 0; a < problem.l; ++a)
        for (int r = 0; r < ny; ++r)
          y_target.col(r).array() -=
              z_i.col(a * ny + r).array() * paths.dw.col(i * paths.l + a).array();
      MatrixXd y_i = ce[i].apply(y_target);
      cur_y.middleCols(i * ny, ny) = y_i;
      sol.regression_residuals[i] =
          std::sqrt((y_target - y_i).array().square().mean());
    }
    cur_z.middleCols(n * nz, nz) = cur_z.middleCols((n - 1) * nz, nz);

    double displacement = 0.0;
    for (int i = 0; i <= n; ++i) {
      displacement = std::max(
          displacement, identity_coupling_rms(cur_y.middleCols(i * ny, ny),
                                              prev_y.middleCols(i * ny, ny)));
      displacement = std::max(
          displacement, identity_coupling_rms(cur_z.middleCols(i * nz, nz),
                                              prev_z.middleCols(i * nz, nz)));
    }
    sol.picard_displacements.push_back(displacement);
    prev_y = cur_y;
    prev_z = cur_z;
    double scale = std::sqrt(cur_y.array().square().mean());
    if (displacement < config.picard_tol * (1.0 + scale)) {
      settled = true;
      break;
    }
  }

  sol.y = std::move(prev_y);
  sol.z = std::move(prev_z);
  sol.converged = settled;
  if (!sol.converged) sol.status = "picard loop hit max iterations";
  return sol;
}

VectorXd residual_check(const BdsdeProblem& problem, const EnsembleSolution& solution,
                        const DriverPaths& paths, const MatrixXd* control, int k) {
  const int N = paths.N;
  const int n = paths.grid.n_steps;
  const int ny = problem.ny;
  const int nz = problem.ny * problem.l;
  const double dt = paths.grid.dt;

  MatrixXd xi = solution.y.middleCols(n * ny, ny);
  // Accumulate the identity backwards so each grid point reuses the suffix.
  MatrixXd acc = MatrixXd::Zero(N, ny);  // sum of f dt + g dB - z dW over steps >= i
  VectorXd rms = VectorXd::Zero(n + 1);
  for (int i = n - 1; i >= 0; --i) {
    MatrixXd y_next = solution.y.middleCols((i + 1) * ny, ny);
    MatrixXd z_next = solution.z.middleCols(std::min(i + 1, n - 1) * nz, nz);
    MatrixXd law_y = y_next;
    MatrixXd law_z = solution.z.middleCols((i + 1) * nz, nz);
    MatrixXd law_u;
    if (control && k > 0) law_u = control->middleCols((i + 1) * k, k);
    MfContext law = make_mf_context(&law_y, &law_z, control ? &law_u : nullptr);
    CoefficientEval coeff = evaluate_coefficients(problem, paths, y_next, z_next,
                                                  control, k, i + 1, law);
    acc += dt * coeff.f;
    for (int r = 0; r < ny; ++r) {
      for (int c = 0; c < problem.d; ++c)
        acc.col(r).array() +=
            coeff.g.col(c * ny + r).array() * paths.db.col(i * paths.d + c).array();
      for (int a = 0; a < problem.l; ++a)
        acc.col(r).array() -= solution.z.col(i * nz + a * ny + r).array() *
                              paths.dw.col(i * paths.l + a).array();
    }
    MatrixXd gap = solution.y.middleCols(i * ny, ny) - xi - acc;
    rms(i) = std::sqrt(gap.array().square().mean());
  }
  return rms;
}

}  // namespace mfbdsde
