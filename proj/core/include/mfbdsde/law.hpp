#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "mfbdsde/common.hpp"

namespace mfbdsde {

// Finitely supported law with uniform weights 1/N over points in a product
// space (y in R^n, z in R^{n x l} flattened column-major, u in R^k). Any block
// may be absent (zero columns).
struct EmpiricalLaw {
  MatrixXd y;  // N x n
  MatrixXd z;  // N x (n*l)
  MatrixXd u;  // N x k

  int size() const { return static_cast<int>(std::max({y.rows(), z.rows(), u.rows()})); }
};

EmpiricalLaw make_law(const MatrixXd& y, const MatrixXd& z = MatrixXd(),
                      const MatrixXd& u = MatrixXd());

// Uniform average of the selected coordinate block.
VectorXd mean_of(const MatrixXd& points);
// Uniform average of the squared Euclidean norm of the rows.
double second_moment(const MatrixXd& points);

// Exact W2 between equal-size uniformly weighted supports (rows are points).
// 1-D: sorted pairing; multi-D: exact assignment up to assignment_cap rows.
double wasserstein2(const MatrixXd& a, const MatrixXd& b, int assignment_cap = 64);

// Per-coordinate 1-D monotone W2, aggregated in quadrature. Diagnostic only:
// a lower bound on W2, not the exact distance in multiple dimensions.
double wasserstein2_marginal_diagnostic(const MatrixXd& a, const MatrixXd& b);

// Root-mean-square row gap under the identity coupling; an upper bound on W2
// for equal-size supports. Used as the cheap Picard displacement metric.
double identity_coupling_rms(const MatrixXd& a, const MatrixXd& b);

// Uniform average of phi over the support rows.
double scalar_functional(const MatrixXd& points,
                         const std::function<double(const VectorXd&)>& phi);

// Uniform average over rows x' of kernel(x, x').
double pairwise_average(
    const MatrixXd& points, const VectorXd& x,
    const std::function<double(const VectorXd&, const VectorXd&)>& kernel);

// Exact solver for the square assignment problem (minimize sum of
// cost(i, perm(i))). Returns the optimal column for each row.
std::vector<int> solve_assignment(const MatrixXd& cost);

}  // namespace mfbdsde
