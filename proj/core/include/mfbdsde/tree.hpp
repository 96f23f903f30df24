#pragma once

#include <cstdint>
#include <vector>

#include "mfbdsde/paths.hpp"

namespace mfbdsde {

// One full sign path of the Bernoulli tree. Sign vectors are step-major:
// entry i*dim + c is the step-i sign of coordinate c.
struct TreeNode {
  int step = 0;  // index of the node on its path (leaves carry step = n)
  std::vector<int> w_signs;
  std::vector<int> b_signs;
  double weight = 0.0;
};

// All leaves (full sign paths) with uniform weights.
std::vector<TreeNode> enumerate_tree(const TimeGrid& grid, int l, int d,
                                     long cap = (1L << 20));

// Information signature of a particle at grid point `step`: packs the signs
// that generate F_{t_i} = sigma(W up to t_i) v sigma(B increments from t_i on),
// i.e. W signs for steps < i and B signs for steps >= i. Two Bernoulli paths
// share a signature iff they are indistinguishable at t_i.
std::uint64_t info_signature(const DriverPaths& paths, int particle, int step);

}  // namespace mfbdsde
