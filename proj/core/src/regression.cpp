#include "mfbdsde/regression.hpp"

#include <cmath>
#include <unordered_map>

#include <Eigen/Cholesky>

#include "mfbdsde/tree.hpp"

namespace mfbdsde {

std::vector<std::vector<int>> monomial_exponents(int vars, int degree) {
  std::vector<std::vector<int>> out;
  for (int total = 0; total <= degree; ++total) {
    // enumerate exponent tuples with the given total, lexicographic
    std::vector<int> expo(vars, 0);
    std::function<void(int, int)> rec = [&](int var, int remaining) {
      if (var == vars - 1) {
        expo[var] = remaining;
        out.push_back(expo);
        return;
      }
      for (int e = remaining; e >= 0; --e) {
        expo[var] = e;
        rec(var + 1, remaining - e);
      }
    };
    if (vars == 0) {
      if (total == 0) out.push_back({});
      continue;
    }
    rec(0, total);
  }
  return out;
}

struct ConditionalExpectation::Impl {
  bool tree_exact = false;

  // tree mode: particle -> group id, group id -> member list
  std::vector<int> group_of;
  std::vector<std::vector<int>> groups;

  // Monte Carlo mode
  MatrixXd design;  // N x m
  Eigen::LDLT<MatrixXd> gram;
};

ConditionalExpectation::~ConditionalExpectation() = default;
ConditionalExpectation::ConditionalExpectation(ConditionalExpectation&&) noexcept = default;

ConditionalExpectation::ConditionalExpectation(const DriverPaths& paths, int step,
                                               const RegressionConfig& cfg)
    : impl_(new Impl) {
  const int N = paths.N;
  if (cfg.tree_exact) {
    if (paths.mode != DriverMode::bernoulli_tree)
      throw NumericalError("tree-exact conditioning requires bernoulli drivers");
    impl_->tree_exact = true;
    impl_->group_of.resize(N);
    std::unordered_map<std::uint64_t, int> ids;
    for (int particle = 0; particle < N; ++particle) {
      std::uint64_t sig = info_signature(paths, particle, step);
      auto [it, fresh] = ids.try_emplace(sig, static_cast<int>(impl_->groups.size()));
      if (fresh) impl_->groups.emplace_back();
      impl_->group_of[particle] = it->second;
      impl_->groups[it->second].push_back(particle);
    }
    return;
  }

  // Features generating F_{t_i}: the W value at t_i and the B tail beyond it.
  const int raw = paths.l + paths.d;
  MatrixXd feats(N, raw);
  feats.leftCols(paths.l) = paths.w.middleCols(step * paths.l, paths.l);
  feats.rightCols(paths.d) = paths.btail.middleCols(step * paths.d, paths.d);

  // Standardize; constant features are dropped (their information is in the
  // intercept already).
  std::vector<int> active;
  for (int c = 0; c < raw; ++c) {
    double mean = feats.col(c).mean();
    double sd = std::sqrt((feats.col(c).array() - mean).square().sum() / std::max(1, N - 1));
    if (sd > 1e-12) {
      feats.col(c) = (feats.col(c).array() - mean) / sd;
      active.push_back(c);
    }
  }

  auto expos = monomial_exponents(static_cast<int>(active.size()), cfg.degree);
  const int m = static_cast<int>(expos.size());
  MatrixXd design = MatrixXd::Ones(N, m);
  for (int j = 0; j < m; ++j)
    for (size_t v = 0; v < active.size(); ++v)
      for (int e = 0; e < expos[j][v]; ++e)
        design.col(j).array() *= feats.col(active[v]).array();

  MatrixXd gram = design.transpose() * design;
  gram.diagonal().array() += cfg.ridge;
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success ||
      (cfg.ridge == 0.0 &&
       ldlt.vectorD().minCoeff() < 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff()))) {
    throw NumericalError(
        "cond_expect: normal equations are rank deficient; raise the ridge parameter");
  }
  impl_->design = std::move(design);
  impl_->gram = std::move(ldlt);
}

MatrixXd ConditionalExpectation::apply(const MatrixXd& targets) const {
  if (!targets.allFinite()) throw NumericalError("cond_expect: non-finite targets");
  if (impl_->tree_exact) {
    const long cols = targets.cols();
    MatrixXd group_means = MatrixXd::Zero(static_cast<long>(impl_->groups.size()), cols);
    for (size_t gid = 0; gid < impl_->groups.size(); ++gid) {
      for (int particle : impl_->groups[gid]) group_means.row(gid) += targets.row(particle);
      group_means.row(gid) /= static_cast<double>(impl_->groups[gid].size());
    }
    MatrixXd out(targets.rows(), cols);
    for (long particle = 0; particle < targets.rows(); ++particle)
      out.row(particle) = group_means.row(impl_->group_of[particle]);
    return out;
  }
  MatrixXd beta = impl_->gram.solve(impl_->design.transpose() * targets);
  return impl_->design * beta;
}

VectorXd ConditionalExpectation::residual_rms(const MatrixXd& targets) const {
  MatrixXd diff = targets - apply(targets);
  return (diff.array().square().colwise().mean()).sqrt().matrix().transpose();
}

}  // namespace mfbdsde
