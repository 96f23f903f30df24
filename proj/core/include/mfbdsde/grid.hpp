#pragma once

#include <vector>

namespace mfbdsde {

struct TimeGrid {
  double T = 1.0;
  int n_steps = 1;
  double dt = 1.0;
  std::vector<double> points;  // n_steps + 1 entries, points[0] = 0, points[n] = T
};

// Uniform partition of [0, T]. Throws std::invalid_argument on T <= 0 or n_steps < 1.
TimeGrid build_grid(double T, int n_steps);

}  // namespace mfbdsde
