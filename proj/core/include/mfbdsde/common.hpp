#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>

namespace mfbdsde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Shape parameters exceed a configured enumeration/assignment cap.
class CapacityError : public std::runtime_error {
 public:
  explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

// Floating-point breakdown (NaN, rank deficiency without ridge, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Worker count for particle loops. Results are independent of this value:
// every worker writes to disjoint slots and reductions run in fixed order.
void set_thread_count(int threads);
int thread_count();

// Runs fn(i) for i in [0, count). Partitioned by contiguous blocks.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace mfbdsde
