#include "mfbdsde/law.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mfbdsde {

EmpiricalLaw make_law(const MatrixXd& y, const MatrixXd& z, const MatrixXd& u) {
  if (y.rows() == 0 && z.rows() == 0 && u.rows() == 0)
    throw std::invalid_argument("make_law: empty support");
  EmpiricalLaw law;
  law.y = y;
  law.z = z;
  law.u = u;
  long N = law.size();
  for (const MatrixXd* block : {&law.y, &law.z, &law.u})
    if (block->rows() != 0 && block->rows() != N)
      throw std::invalid_argument("make_law: blocks disagree on support size");
  return law;
}

VectorXd mean_of(const MatrixXd& points) {
  if (points.rows() == 0 || points.cols() == 0)
    throw std::invalid_argument("mean_of: empty selection");
  return points.colwise().mean().transpose();
}

double second_moment(const MatrixXd& points) {
  if (points.rows() == 0 || points.cols() == 0)
    throw std::invalid_argument("second_moment: empty selection");
  return points.array().square().rowwise().sum().mean();
}

std::vector<int> solve_assignment(const MatrixXd& cost) {
  // Jonker-Volgenant shortest augmenting path, O(n^3).
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: square cost required");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) match[p[j] - 1] = j - 1;
  return match;
}

double wasserstein2(const MatrixXd& a, const MatrixXd& b, int assignment_cap) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("wasserstein2: mismatched point dimensions");
  if (a.rows() != b.rows())
    throw std::invalid_argument("wasserstein2: support sizes differ (uniform weights)");
  const int N = static_cast<int>(a.rows());
  if (a.cols() == 1) {
    std::vector<double> xs(a.col(0).data(), a.col(0).data() + N);
    std::vector<double> ys(b.col(0).data(), b.col(0).data() + N);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    double acc = 0;
    for (int i = 0; i < N; ++i) {
      double gap = xs[i] - ys[i];
      acc += gap * gap;
    }
    return std::sqrt(acc / N);
  }
  if (N > assignment_cap)
    throw CapacityError("wasserstein2: support size " + std::to_string(N) +
                        " above exact-assignment cap " + std::to_string(assignment_cap));
  MatrixXd cost(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  auto match = solve_assignment(cost);
  double acc = 0;
  for (int i = 0; i < N; ++i) acc += cost(i, match[i]);
  return std::sqrt(acc / N);
}

double wasserstein2_marginal_diagnostic(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols() || a.rows() != b.rows())
    throw std::invalid_argument("wasserstein2_marginal_diagnostic: shape mismatch");
  double acc = 0;
  for (int c = 0; c < a.cols(); ++c) {
    double w = wasserstein2(a.col(c), b.col(c));
    acc += w * w;
  }
  return std::sqrt(acc);
}

double identity_coupling_rms(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("identity_coupling_rms: shape mismatch");
  if (a.rows() == 0) return 0.0;
  return std::sqrt((a - b).array().square().rowwise().sum().mean());
}

double scalar_functional(const MatrixXd& points,
                         const std::function<double(const VectorXd&)>& phi) {
  double acc = 0;
  for (int i = 0; i < points.rows(); ++i) acc += phi(points.row(i).transpose());
  return acc / points.rows();
}

double pairwise_average(
    const MatrixXd& points, const VectorXd& x,
    const std::function<double(const VectorXd&, const VectorXd&)>& kernel) {
  double acc = 0;
  for (int i = 0; i < points.rows(); ++i) acc += kernel(x, points.row(i).transpose());
  return acc / points.rows();
}

}  // namespace mfbdsde
