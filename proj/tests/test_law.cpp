#include <cmath>
#include <random>

#include "doctest.h"
#include "mfbdsde/interaction.hpp"
#include "mfbdsde/law.hpp"

using namespace mfbdsde;

namespace {
MatrixXd column(std::initializer_list<double> xs) {
  MatrixXd m(static_cast<long>(xs.size()), 1);
  int i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}
}  // namespace

TEST_CASE("moments of small supports") {
  CHECK(mean_of(column({1, -1}))(0) == 0.0);
  CHECK(mean_of(column({0, 2, 4}))(0) == 2.0);
  CHECK(second_moment(column({1, -1})) == 1.0);
  CHECK_THROWS_AS(mean_of(MatrixXd()), std::invalid_argument);
}

TEST_CASE("wasserstein2 basics") {
  MatrixXd a = column({0, 2});
  CHECK(wasserstein2(a, a) == 0.0);
  CHECK(wasserstein2(column({0}), column({1})) == doctest::Approx(1.0));
  // brute force over the two pairings: monotone sqrt((1+1)/2)=1 beats
  // crossed sqrt((9+1)/2)
  CHECK(wasserstein2(column({0, 2}), column({1, 3})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(wasserstein2(column({0}), column({1, 2})), std::invalid_argument);
}

TEST_CASE("multi-dimensional W2 via exact assignment matches brute force") {
  std::mt19937 gen(7);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd a(4, 2), b(4, 2);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) {
        a(i, j) = normal(gen);
        b(i, j) = normal(gen);
      }
    // brute force over all 24 permutations
    std::vector<int> perm = {0, 1, 2, 3};
    double best = 1e300;
    do {
      double acc = 0;
      for (int i = 0; i < 4; ++i) acc += (a.row(i) - b.row(perm[i])).squaredNorm();
      best = std::min(best, acc);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(wasserstein2(a, b) == doctest::Approx(std::sqrt(best / 4)).epsilon(1e-12));
  }
  MatrixXd big = MatrixXd::Zero(65, 2);
  CHECK_THROWS_AS(wasserstein2(big, big), CapacityError);
}

TEST_CASE("W2 symmetry and triangle inequality on random triples") {
  std::mt19937 gen(11);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 30; ++trial) {
    MatrixXd a(5, 2), b(5, 2), c(5, 2);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 2; ++j) {
        a(i, j) = normal(gen);
        b(i, j) = normal(gen);
        c(i, j) = normal(gen);
      }
    double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
    double bc = wasserstein2(b, c), ac = wasserstein2(a, c);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ac <= ab + bc + 1e-12);
    // identity coupling dominates the optimal one
    CHECK(ab <= identity_coupling_rms(a, b) + 1e-12);
  }
}

TEST_CASE("scalar_functional and pairwise_average") {
  CHECK(scalar_functional(column({1, -1}), [](const VectorXd& y) { return y(0) * y(0); }) ==
        doctest::Approx(1.0));
  CHECK(scalar_functional(column({5, 9}), [](const VectorXd&) { return 3.0; }) ==
        doctest::Approx(3.0));
  CHECK(scalar_functional(column({0, 2, 4}), [](const VectorXd& y) { return y(0); }) ==
        doctest::Approx(mean_of(column({0, 2, 4}))(0)));

  MatrixXd sup = column({1, 3});
  VectorXd x(1);
  x << 2;
  CHECK(pairwise_average(sup, x, [](const VectorXd& a, const VectorXd& b) {
          return a(0) * b(0);
        }) == doctest::Approx(4.0));
  CHECK(pairwise_average(sup, x, [](const VectorXd& a, const VectorXd&) {
          return a(0) + 1;
        }) == doctest::Approx(3.0));
  // separable kernel k(x, x') = a(x) b(x') averages to a(x) * mean(b)
  auto bfun = [](const VectorXd& v) { return std::sin(v(0)); };
  double sep = pairwise_average(sup, x, [&](const VectorXd& a, const VectorXd& b) {
    return (a(0) * a(0)) * bfun(b);
  });
  CHECK(sep == doctest::Approx(4.0 * scalar_functional(sup, bfun)).epsilon(1e-13));
}

TEST_CASE("l_derivative for the three families") {
  VectorXd three(1);
  three << 3;
  MatrixXd sup = column({1, 2});

  LDerivativeSpec scalar;
  scalar.kind = InteractionKind::scalar;
  scalar.phi = [](const VectorXd& y) { return y(0) * y(0); };
  scalar.dphi = [](const VectorXd& y) { return VectorXd::Constant(1, 2 * y(0)); };
  scalar.dr_outer = [](const VectorXd&, double) { return 1.0; };  // outer = r
  CHECK(l_derivative(scalar, three, sup, three)(0) == doctest::Approx(6.0));

  LDerivativeSpec first;
  first.kind = InteractionKind::first_order;
  first.dsecond = [](const VectorXd&, const VectorXd& eval) {
    return VectorXd::Constant(1, 2 * eval(0));  // kernel y'^2
  };
  CHECK(l_derivative(first, three, sup, three)(0) == doctest::Approx(6.0));

  LDerivativeSpec lq;
  lq.kind = InteractionKind::linear_lq;
  lq.constant = VectorXd::Constant(1, 0.7);
  CHECK(l_derivative(lq, three, sup, three)(0) == doctest::Approx(0.7));

  LDerivativeSpec none;
  CHECK_THROWS_AS(l_derivative(none, three, sup, three), std::logic_error);
}

TEST_CASE("scalar l_derivative matches the finite-difference lift") {
  // Perturb one support point by h; the functional m = mean(phi) moves by
  // (phi(x+h) - phi(x))/N, so d/dh c_hat(theta, m) ~ dr * dphi(x) / N.
  LDerivativeSpec scalar;
  scalar.kind = InteractionKind::scalar;
  scalar.phi = [](const VectorXd& y) { return std::sin(y(0)) + y(0) * y(0); };
  scalar.dphi = [](const VectorXd& y) {
    return VectorXd::Constant(1, std::cos(y(0)) + 2 * y(0));
  };
  auto outer = [](double r) { return std::exp(0.3 * r); };
  scalar.dr_outer = [&](const VectorXd&, double r) { return 0.3 * std::exp(0.3 * r); };

  MatrixXd sup = column({0.3, -0.2, 1.1, 0.7});
  VectorXd base = VectorXd::Zero(1);
  const int N = 4;
  const double h = 1e-6;
  for (int idx = 0; idx < N; ++idx) {
    MatrixXd bumped = sup;
    bumped(idx, 0) += h;
    double m0 = scalar_functional(sup, scalar.phi);
    double m1 = scalar_functional(bumped, scalar.phi);
    double fd = (outer(m1) - outer(m0)) / (h / N);
    VectorXd eval = sup.row(idx).transpose();
    CHECK(fd == doctest::Approx(l_derivative(scalar, base, sup, eval)(0)).epsilon(1e-4));
  }
}

TEST_CASE("coefficient bound validator") {
  MatrixXd probes(5, 1);
  probes << -2, -1, 0, 1, 2;
  auto half = [](const VectorXd&) { return MatrixXd::Constant(1, 1, 0.5); };
  auto one = [](const VectorXd&) { return MatrixXd::Constant(1, 1, 1.0); };

  auto r1 = validate_coefficient_bounds(half, nullptr, probes);
  CHECK(r1.alpha1 == doctest::Approx(0.5));
  CHECK(r1.pass);

  auto r2 = validate_coefficient_bounds(one, nullptr, probes);
  CHECK(r2.alpha1 == doctest::Approx(1.0));
  CHECK_FALSE(r2.pass);

  // LQ-style: |g2| = 0.3 local slope, |g2bar| = 0.3 law slope -> 0.6 < 1
  auto g2 = [](const VectorXd&) { return MatrixXd::Constant(1, 1, 0.3); };
  auto g2bar = [](const VectorXd&, const VectorXd&) {
    return MatrixXd::Constant(1, 1, 0.3);
  };
  auto r3 = validate_coefficient_bounds(g2, g2bar, probes);
  CHECK(r3.alpha1 == doctest::Approx(0.3));
  CHECK(r3.alpha2 == doctest::Approx(0.3));
  CHECK(r3.pass);
}
