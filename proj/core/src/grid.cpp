#include "mfbdsde/grid.hpp"

#include <stdexcept>

namespace mfbdsde {

TimeGrid build_grid(double T, int n_steps) {
  if (!(T > 0.0)) throw std::invalid_argument("build_grid: horizon T must be positive");
  if (n_steps < 1) throw std::invalid_argument("build_grid: n_steps must be >= 1");
  TimeGrid g;
  g.T = T;
  g.n_steps = n_steps;
  g.dt = T / n_steps;
  g.points.resize(n_steps + 1);
  for (int i = 0; i <= n_steps; ++i) g.points[i] = (T * i) / n_steps;
  g.points[0] = 0.0;
  g.points[n_steps] = T;
  return g;
}

}  // namespace mfbdsde
