#include "mfbdsde/tree.hpp"

#include <stdexcept>
#include <string>

namespace mfbdsde {

std::vector<TreeNode> enumerate_tree(const TimeGrid& grid, int l, int d, long cap) {
  int n = grid.n_steps;
  int bits = (l + d) * n;
  if (bits >= 63 || (1L << bits) > cap) {
    throw CapacityError("enumerate_tree: 2^((l+d)*n_steps) exceeds cap " +
                        std::to_string(cap));
  }
  long N = 1L << bits;
  std::vector<TreeNode> leaves(static_cast<size_t>(N));
  double weight = 1.0 / static_cast<double>(N);
  for (long leaf = 0; leaf < N; ++leaf) {
    TreeNode& node = leaves[static_cast<size_t>(leaf)];
    node.step = n;
    node.weight = weight;
    node.w_signs.resize(static_cast<size_t>(n) * l);
    node.b_signs.resize(static_cast<size_t>(n) * d);
    for (int i = 0; i < n * l; ++i) node.w_signs[i] = ((leaf >> i) & 1) ? 1 : -1;
    for (int i = 0; i < n * d; ++i)
      node.b_signs[i] = ((leaf >> (n * l + i)) & 1) ? 1 : -1;
  }
  return leaves;
}

std::uint64_t info_signature(const DriverPaths& paths, int particle, int step) {
  int n = paths.grid.n_steps;
  int bits = (paths.l + paths.d) * n;
  if (bits >= 63) throw CapacityError("info_signature: too many steps to pack");
  std::uint64_t sig = 0;
  int pos = 0;
  for (int i = 0; i < step; ++i)
    for (int c = 0; c < paths.l; ++c)
      sig |= static_cast<std::uint64_t>(paths.dw(particle, i * paths.l + c) > 0.0) << pos++;
  for (int i = step; i < n; ++i)
    for (int c = 0; c < paths.d; ++c)
      sig |= static_cast<std::uint64_t>(paths.db(particle, i * paths.d + c) > 0.0) << pos++;
  // Distinguish signatures of different step indices by the bit count used.
  return sig | (static_cast<std::uint64_t>(pos) << 56);
}

}  // namespace mfbdsde
