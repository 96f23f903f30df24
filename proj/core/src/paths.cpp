#include "mfbdsde/paths.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mfbdsde/rng.hpp"

namespace mfbdsde {

namespace {

void finalize_cumulative(DriverPaths& p) {
  int n = p.grid.n_steps;
  p.w = MatrixXd::Zero(p.N, (n + 1) * p.l);
  p.btail = MatrixXd::Zero(p.N, (n + 1) * p.d);
  for (int i = 0; i < n; ++i) {
    p.w.middleCols((i + 1) * p.l, p.l) =
        p.w.middleCols(i * p.l, p.l) + p.dw.middleCols(i * p.l, p.l);
  }
  for (int i = n - 1; i >= 0; --i) {
    p.btail.middleCols(i * p.d, p.d) =
        p.btail.middleCols((i + 1) * p.d, p.d) + p.db.middleCols(i * p.d, p.d);
  }
}

}  // namespace

VectorXd DriverPaths::w_increment(int particle, int step) const {
  return dw.row(particle).segment(step * l, l).transpose();
}

VectorXd DriverPaths::b_increment(int particle, int step) const {
  return db.row(particle).segment(step * d, d).transpose();
}

VectorXd DriverPaths::w_value(int particle, int point) const {
  return w.row(particle).segment(point * l, l).transpose();
}

DriverPaths sample_paths(const TimeGrid& grid, int N, int l, int d,
                         std::uint64_t seed, DriverMode mode) {
  if (N < 1) throw std::invalid_argument("sample_paths: N must be >= 1");
  if (l < 1 || d < 1) throw std::invalid_argument("sample_paths: dims must be >= 1");
  DriverPaths p;
  p.grid = grid;
  p.N = N;
  p.l = l;
  p.d = d;
  p.seed = seed;
  p.mode = mode;
  int n = grid.n_steps;
  p.dw.resize(N, n * l);
  p.db.resize(N, n * d);
  double sd = std::sqrt(grid.dt);
  parallel_for(N, [&](int particle) {
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < l; ++c) {
        double v = (mode == DriverMode::gaussian)
                       ? rng::normal(seed, particle, i, rng::kTagW, c)
                       : rng::sign(seed, particle, i, rng::kTagW, c);
        p.dw(particle, i * l + c) = (mode == DriverMode::gaussian) ? sd * v : sd * v;
      }
      for (int c = 0; c < d; ++c) {
        double v = (mode == DriverMode::gaussian)
                       ? rng::normal(seed, particle, i, rng::kTagB, c)
                       : rng::sign(seed, particle, i, rng::kTagB, c);
        p.db(particle, i * d + c) = sd * v;
      }
    }
  });
  p.weights = VectorXd::Constant(N, 1.0 / N);
  finalize_cumulative(p);
  return p;
}

DriverPaths enumerate_tree_paths(const TimeGrid& grid, int l, int d, long cap) {
  int n = grid.n_steps;
  int bits = (l + d) * n;
  if (bits >= 63 || (1L << bits) > cap) {
    throw CapacityError("enumerate_tree_paths: 2^((l+d)*n_steps) exceeds cap " +
                        std::to_string(cap));
  }
  long N = 1L << bits;
  DriverPaths p;
  p.grid = grid;
  p.N = static_cast<int>(N);
  p.l = l;
  p.d = d;
  p.seed = 0;
  p.mode = DriverMode::bernoulli_tree;
  p.dw.resize(p.N, n * l);
  p.db.resize(p.N, n * d);
  double sd = std::sqrt(grid.dt);
  // Bit layout per leaf: W signs first (step-major), then B signs.
  parallel_for(p.N, [&](int leaf) {
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < l; ++c) {
        int bit = (leaf >> (i * l + c)) & 1;
        p.dw(leaf, i * l + c) = bit ? sd : -sd;
      }
      for (int c = 0; c < d; ++c) {
        int bit = (leaf >> (n * l + i * d + c)) & 1;
        p.db(leaf, i * d + c) = bit ? sd : -sd;
      }
    }
  });
  p.weights = VectorXd::Constant(p.N, 1.0 / static_cast<double>(N));
  finalize_cumulative(p);
  return p;
}

VectorXd backward_increment_tail(const DriverPaths& paths, int particle, int step) {
  if (particle < 0 || particle >= paths.N)
    throw std::invalid_argument("backward_increment_tail: particle out of range");
  if (step < 0 || step > paths.grid.n_steps)
    throw std::invalid_argument("backward_increment_tail: step out of range");
  return paths.btail.row(particle).segment(step * paths.d, paths.d).transpose();
}

}  // namespace mfbdsde
