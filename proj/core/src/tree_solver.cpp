#include "mfbdsde/tree_solver.hpp"

#include <cmath>
#include <map>
#include <vector>

#include "mfbdsde/law.hpp"

namespace mfbdsde {

namespace {

// Paths indistinguishable at grid point i: identical W signs before i and
// identical B signs from i on. Keys are built directly from the increments.
std::vector<std::vector<int>> group_members(const DriverPaths& paths, int step) {
  std::map<std::vector<int>, std::vector<int>> buckets;
  const int n = paths.grid.n_steps;
  for (int particle = 0; particle < paths.N; ++particle) {
    std::vector<int> key;
    key.reserve(step * paths.l + (n - step) * paths.d);
    for (int i = 0; i < step; ++i)
      for (int c = 0; c < paths.l; ++c)
        key.push_back(paths.dw(particle, i * paths.l + c) > 0 ? 1 : 0);
    for (int i = step; i < n; ++i)
      for (int c = 0; c < paths.d; ++c)
        key.push_back(paths.db(particle, i * paths.d + c) > 0 ? 1 : 0);
    buckets[key].push_back(particle);
  }
  std::vector<std::vector<int>> groups;
  groups.reserve(buckets.size());
  for (auto& [key, members] : buckets) groups.push_back(std::move(members));
  return groups;
}

MatrixXd group_average(const std::vector<std::vector<int>>& groups, const MatrixXd& values) {
  MatrixXd out(values.rows(), values.cols());
  for (const auto& members : groups) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(values.cols());
    for (int particle : members) mean += values.row(particle);
    mean /= static_cast<double>(members.size());
    for (int particle : members) out.row(particle) = mean;
  }
  return out;
}

}  // namespace

EnsembleSolution solve_on_tree(const BdsdeProblem& problem, const DriverPaths& paths,
                               const MatrixXd* control, int k, double law_tol,
                               int max_picard) {
  if (paths.mode != DriverMode::bernoulli_tree)
    throw NumericalError("solve_on_tree: bernoulli tree drivers required");
  const int N = paths.N;
  const int n = paths.grid.n_steps;
  const int ny = problem.ny;
  const int nz = problem.ny * problem.l;
  const double dt = paths.grid.dt;

  std::vector<std::vector<std::vector<int>>> groups(n);
  for (int i = 0; i < n; ++i) groups[i] = group_members(paths, i);

  MatrixXd xi(N, ny);
  for (int particle = 0; particle < N; ++particle)
    xi.row(particle) = problem.terminal(paths, particle).transpose();

  MatrixXd prev_y = xi.replicate(1, n + 1);
  MatrixXd prev_z = MatrixXd::Zero(N, (n + 1) * nz);

  EnsembleSolution sol;
  sol.ny = ny;
  sol.l = problem.l;

  MatrixXd cur_y(N, (n + 1) * ny), cur_z(N, (n + 1) * nz);
  for (int iter = 0; iter < max_picard; ++iter) {
    cur_y.middleCols(n * ny, ny) = xi;
    for (int i = n - 1; i >= 0; --i) {
      MatrixXd y_next = cur_y.middleCols((i + 1) * ny, ny);
      MatrixXd z_next = (i + 1 < n) ? MatrixXd(cur_z.middleCols((i + 1) * nz, nz))
                                    : MatrixXd(prev_z.middleCols((n - 1) * nz, nz));
      MatrixXd law_y = prev_y.middleCols((i + 1) * ny, ny);
      MatrixXd law_z = prev_z.middleCols((i + 1) * nz, nz);
      MatrixXd law_u;
      if (control && k > 0) law_u = control->middleCols((i + 1) * k, k);
      MfContext law = make_mf_context(&law_y, &law_z, control ? &law_u : nullptr);

      double t = paths.grid.points[i + 1];
      MatrixXd target = y_next;
      for (int particle = 0; particle < N; ++particle) {
        StepContext ctx{t, i + 1, particle};
        VectorXd yv = y_next.row(particle).transpose();
        VectorXd zv = z_next.row(particle).transpose();
        VectorXd uv;
        if (control && k > 0) uv = control->row(particle).segment((i + 1) * k, k).transpose();
        if (problem.f)
          target.row(particle) += dt * problem.f(ctx, yv, zv, uv, law).transpose();
        if (problem.g) {
          VectorXd gv = problem.g(ctx, yv, zv, uv, law);
          for (int r = 0; r < ny; ++r)
            for (int c = 0; c < problem.d; ++c)
              target(particle, r) += gv(c * ny + r) * paths.db(particle, i * paths.d + c);
        }
      }

      cur_y.middleCols(i * ny, ny) = group_average(groups[i], target);
      MatrixXd zdw(N, nz);
      for (int a = 0; a < problem.l; ++a)
        for (int r = 0; r < ny; ++r)
          zdw.col(a * ny + r) =
              target.col(r).array() * paths.dw.col(i * paths.l + a).array();
      cur_z.middleCols(i * nz, nz) = group_average(groups[i], zdw) / dt;
    }
    cur_z.middleCols(n * nz, nz) = cur_z.middleCols((n - 1) * nz, nz);

    double displacement =
        std::max(identity_coupling_rms(cur_y, prev_y), identity_coupling_rms(cur_z, prev_z));
    sol.picard_displacements.push_back(displacement);
    prev_y = cur_y;
    prev_z = cur_z;
    if (displacement < law_tol) break;
  }

  sol.y = std::move(prev_y);
  sol.z = std::move(prev_z);
  sol.converged = sol.picard_displacements.empty() || sol.picard_displacements.back() < law_tol;
  return sol;
}

}  // namespace mfbdsde
