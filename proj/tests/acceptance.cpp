// End-to-end acceptance checks. Each criterion prints one pass/fail line with
// its measured quantities and pinned tolerances; the process exits nonzero if
// any line fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfbdsde/adjoint.hpp"
#include "mfbdsde/control.hpp"
#include "mfbdsde/experiment.hpp"
#include "mfbdsde/fbdsde.hpp"
#include "mfbdsde/io.hpp"
#include "mfbdsde/problem.hpp"
#include "mfbdsde/tree_solver.hpp"

using namespace mfbdsde;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("criterion %2d [%s]: %s (%s)\n", id, name.c_str(),
              pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v) { return format_double(v); }

std::function<VectorXd(const DriverPaths&, int)> xi_wt() {
  return [](const DriverPaths& p, int a) { return p.w_value(a, p.grid.n_steps); };
}

LqCoefficients shipped_lq() {
  LqCoefficients c;
  c.f1 = 0.5; c.f2 = 0.2; c.f3 = 1.0; c.f1_bar = 0.3;
  c.g1 = 0.2; c.g2 = 0.3; c.g3 = 0.5; c.g1_bar = 0.1; c.g2_bar = 0.2;
  c.h1 = 1.0; c.h2 = 0.5; c.h3 = 1.0; c.h1_bar = 0.5;
  c.phi = 1.0; c.phi_bar = 0.5;
  return c;
}

SolverConfig tree_solver() {
  SolverConfig cfg;
  cfg.regression.tree_exact = true;
  cfg.max_picard = 300;
  cfg.picard_tol = 1e-13;
  return cfg;
}

double rms(const Eigen::Ref<const MatrixXd>& m) {
  return std::sqrt(m.array().square().mean());
}

// 1. Martingale representation: with f = g = 0 and xi = W_T the solution is
// y = W, z = 1. Pinned: max-over-grid RMS(y - W) <= 0.02, RMS(z - 1) <= 0.05,
// wall time <= 10 s single-threaded at N = 10^4, n = 50.
void criterion1() {
  set_thread_count(1);
  auto t0 = std::chrono::steady_clock::now();
  TimeGrid grid = build_grid(1.0, 50);
  DriverPaths paths = sample_paths(grid, 10000, 1, 1, 101, DriverMode::gaussian);
  BdsdeProblem p;
  p.terminal = xi_wt();
  SolverConfig cfg;
  cfg.regression.degree = 1;  // both conditional targets are linear in the features
  EnsembleSolution sol = solve_mf_bdsde(p, paths, nullptr, 0, cfg);
  double ey = 0, ez = 0;
  for (int i = 0; i <= grid.n_steps; ++i) {
    ey = std::max(ey, rms(sol.y_at(i) - paths.w.col(i).eval()));
    ez = std::max(ez, rms(sol.z_at(i).array() - 1.0));
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  set_thread_count(0);
  record(1, "martingale ensemble", ey <= 0.02 && ez <= 0.05 && secs <= 10.0,
         "max rms y gap " + fmt(ey) + " <= 0.02, z gap " + fmt(ez) +
             " <= 0.05, wall " + fmt(secs) + " s <= 10");
}

// 2. Pure backward noise: f = 0, g = 0.7, xi = 2 gives y = 2 + 0.7 (B_T - B_t)
// pathwise and z = 0. Pinned: y and z to 1e-10 in tree-exact mode; in Monte
// Carlo mode y pathwise to 1e-10 (the target lies in the regression span, run
// with zero ridge) and z RMS <= 0.02.
void criterion2() {
  BdsdeProblem p;
  p.g = [](const StepContext&, const VectorXd&, const VectorXd&, const VectorXd&,
           const MfContext&) { return VectorXd::Constant(1, 0.7); };
  p.terminal = [](const DriverPaths&, int) { return VectorXd::Constant(1, 2.0); };

  auto pathwise_gap = [&](const EnsembleSolution& sol, const DriverPaths& paths) {
    double gap = 0;
    for (int i = 0; i <= paths.grid.n_steps; ++i) {
      MatrixXd expect = (2.0 + 0.7 * paths.btail.col(i).array()).matrix();
      gap = std::max(gap, (sol.y_at(i) - expect).cwiseAbs().maxCoeff());
    }
    return gap;
  };

  TimeGrid tg = build_grid(1.0, 4);
  DriverPaths tree = enumerate_tree_paths(tg, 1, 1);
  EnsembleSolution ts = solve_mf_bdsde(p, tree, nullptr, 0, tree_solver());
  double tree_y = pathwise_gap(ts, tree);
  double tree_z = rms(ts.z);

  TimeGrid mg = build_grid(1.0, 8);
  DriverPaths mc = sample_paths(mg, 2000, 1, 1, 102, DriverMode::gaussian);
  SolverConfig mcfg;
  mcfg.regression.ridge = 0.0;  // exact projection: target is in the span
  EnsembleSolution ms = solve_mf_bdsde(p, mc, nullptr, 0, mcfg);
  double mc_y = pathwise_gap(ms, mc);
  double mc_z = rms(ms.z);

  record(2, "pure backward noise",
         tree_y <= 1e-10 && tree_z <= 1e-10 && mc_y <= 1e-10 && mc_z <= 0.02,
         "tree y " + fmt(tree_y) + ", tree z rms " + fmt(tree_z) +
             " <= 1e-10; mc y " + fmt(mc_y) + " <= 1e-10, mc z rms " + fmt(mc_z) +
             " <= 0.02");
}

// 3. Mean-field linear drift f = y + 0.5 E[y], xi = 1: the mean solves a
// linear ODE backwards, mean(y_0) = e^{1.5}. Pinned: relative error <= 0.01
// at n = 200.
void criterion3() {
  TimeGrid grid = build_grid(1.0, 200);
  DriverPaths paths = sample_paths(grid, 256, 1, 1, 103, DriverMode::gaussian);
  BdsdeProblem p;
  p.uses_law = true;
  p.f = [](const StepContext&, const VectorXd& y, const VectorXd&, const VectorXd&,
           const MfContext& law) {
    double m = law.my.size() ? law.my(0) : 0.0;
    return VectorXd::Constant(1, y(0) + 0.5 * m);
  };
  p.terminal = [](const DriverPaths&, int) { return VectorXd::Constant(1, 1.0); };
  SolverConfig cfg;
  cfg.max_picard = 200;
  EnsembleSolution sol = solve_mf_bdsde(p, paths, nullptr, 0, cfg);
  double target = std::exp(1.5);
  double rel = std::abs(sol.y.col(0).mean() - target) / target;
  record(3, "mean-field linear growth", rel <= 0.01,
         "relative error of mean(y_0) vs e^1.5: " + fmt(rel) + " <= 0.01");
}

// 4. Tree-oracle equivalence: the regression engine in tree-exact mode agrees
// with independent exact backward induction (and hand closed forms) on every
// shipped 2-step instance. Pinned: every gap <= 1e-12.
void criterion4() {
  ParsedConfig parsed = parse_config("pipeline = oracle-check\n");
  parsed.config.lq = shipped_lq();
  fs::path dir = fs::temp_directory_path() / "mfbdsde_acceptance" / "oracle";
  fs::remove_all(dir);
  parsed.config.out_dir = dir.string();
  RunManifest man = run_experiment(parsed.config);
  std::ifstream in(dir / "oracle_check.json");
  auto rep = nlohmann::json::parse(in);
  double worst = 0;
  std::string worst_name;
  int rows = 0;
  for (auto& [name, gap] : rep["gaps"].items()) {
    ++rows;
    if (gap.get<double>() > worst) {
      worst = gap.get<double>();
      worst_name = name;
    }
  }
  record(4, "tree-oracle equivalence", rows >= 7 && worst <= 1e-12 && man.all_passed,
         std::to_string(rows) + " instances, worst gap " + fmt(worst) + " (" +
             worst_name + ") <= 1e-12");
}

// 5. Sign conventions of the calculus: with constant integrands the discrete
// square and product identities hold pathwise up to the quadratic-variation
// fluctuation, whose mean is exactly the claimed correction. Pinned: both
// residual means within 3 standard errors at N = 10^5 (and the sign test is
// sharp: flipping either correction shifts the mean by >> 3 se).
void criterion5() {
  const int N = 100000, n = 50;
  TimeGrid grid = build_grid(1.0, n);
  DriverPaths paths = sample_paths(grid, N, 1, 1, 105, DriverMode::gaussian);
  const double G = 0.7, g = 0.6, z = 0.8, q = 0.5, T = grid.T;

  // Square identity for dy = G dW + g dB(backward):
  //   y_T^2 - y_0^2 - 2 int y G dW(left) - 2 int y g dB(right) = (G^2-g^2) T.
  VectorXd res_sq(N);
  for (int a = 0; a < N; ++a) {
    double y = 0, stoch = 0;
    for (int i = 0; i < n; ++i) {
      double dw = paths.dw(a, i), db = paths.db(a, i);
      double ynext = y + G * dw + g * db;
      stoch += 2 * y * G * dw + 2 * ynext * g * db;
      y = ynext;
    }
    res_sq(a) = y * y - stoch - (G * G - g * g) * T;
  }

  // Product identity for a backward-equation solution paired with a forward
  // doubly stochastic process:
  //   y_t = g (B_T - B_t) - z (W_T - W_t),  p_t = G W_t - q B_t,
  //   y_T p_T - y_0 p_0 - int y dp - int p dy = (z G - g q) T
  // with dW integrands at the left endpoint and dB integrands at the right.
  VectorXd res_pr(N);
  for (int a = 0; a < N; ++a) {
    double stoch = 0;
    for (int i = 0; i < n; ++i) {
      double dw = paths.dw(a, i), db = paths.db(a, i);
      double yi = g * paths.btail(a, i) - z * (paths.w(a, n) - paths.w(a, i));
      double yn = g * paths.btail(a, i + 1) - z * (paths.w(a, n) - paths.w(a, i + 1));
      double pi = G * paths.w(a, i) - q * (paths.btail(a, 0) - paths.btail(a, i));
      double pn = G * paths.w(a, i + 1) - q * (paths.btail(a, 0) - paths.btail(a, i + 1));
      stoch += yi * G * dw - yn * q * db + pi * z * dw - pn * g * db;
    }
    // y_T = 0 and p_0 = 0, so the product difference vanishes pathwise.
    res_pr(a) = -stoch - (z * G - g * q) * T;
  }

  auto level = [N](const VectorXd& r) {
    double m = r.mean();
    double se = std::sqrt((r.array() - m).square().sum() / (N - 1.0) / N);
    return std::pair<double, double>(m, se);
  };
  auto [m1, se1] = level(res_sq);
  auto [m2, se2] = level(res_pr);
  record(5, "ito and product-rule sign checks",
         std::abs(m1) <= 3 * se1 && std::abs(m2) <= 3 * se2,
         "square residual " + fmt(m1) + " (3 se " + fmt(3 * se1) +
             "), product residual " + fmt(m2) + " (3 se " + fmt(3 * se2) + ")");
}

// 6. Gradient integrity on the shipped LQ instance with adapted directions:
// variational and adjoint Gateaux derivatives agree within 3 paired standard
// errors in Monte Carlo mode, and the adjoint route matches a central
// common-random-numbers finite difference (eps = 1e-4) to relative error
// <= 1e-3 on a Bernoulli ensemble, where the conditional expectations are
// exact and the adjoint gradient is the exact derivative of the discrete
// cost.
void criterion6() {
  const int N = 256, n = 256;
  TimeGrid grid = build_grid(1.0, n);
  DriverPaths paths = sample_paths(grid, N, 1, 1, 106, DriverMode::gaussian);
  LqCoefficients c = shipped_lq();
  ProblemSpec spec = make_lq_problem(c, xi_wt());
  SolverConfig cfg;
  cfg.picard_tol = 1e-12;
  cfg.max_picard = 200;

  MatrixXd u(N, n + 1), v(N, n + 1);
  for (int a = 0; a < N; ++a)
    for (int i = 0; i <= n; ++i) {
      double w = paths.w(a, i), bt = paths.btail(a, i);
      u(a, i) = 0.1 + 0.1 * std::sin(w) + 0.05 * bt;
      v(a, i) = 1.0 + 0.5 * std::cos(w) + 0.2 * bt + 0.1 * w;
    }

  EnsembleSolution state = solve_mf_bdsde(spec.state_problem(), paths, &u, 1, cfg);
  AdjointSolution adjoint = solve_adjoint(spec, state, &u, paths, cfg);
  VariationalSolution var = solve_variational(spec, state, &u, v, paths, cfg);
  double r1 = gateaux_route1(spec, state, &u, var, v, grid);
  double r2 = gateaux_route2(spec, state, adjoint, &u, v, grid);

  // Per-particle summands of both routes (mean-field terms attributed by
  // their ensemble means, which leaves the totals unchanged).
  MatrixXd grad = gradient_field(spec, state, adjoint, &u, grid);
  VectorXd r1p = VectorXd::Zero(N), r2p = VectorXd::Zero(N);
  for (int i = 0; i <= n; ++i) {
    for (int a = 0; a < N; ++a) r2p(a) += grid.dt * grad(a, i) * v(a, i);
    if (i == n) break;
    double my = state.y.col(i).mean(), mz = state.z.col(i).mean();
    double mk = var.K.col(i).mean(), ml = var.L.col(i).mean();
    double law_term = c.h1_bar * my * mk + c.h2_bar * mz * ml;
    for (int a = 0; a < N; ++a)
      r1p(a) += grid.dt * (c.h1 * state.y(a, i) * var.K(a, i) +
                           c.h2 * state.z(a, i) * var.L(a, i) +
                           c.h3 * u(a, i) * v(a, i) + law_term);
  }
  double my0 = state.y.col(0).mean(), mk0 = var.K.col(0).mean();
  for (int a = 0; a < N; ++a)
    r1p(a) += c.phi * state.y(a, 0) * var.K(a, 0) + c.phi_bar * my0 * mk0;
  double attrib_gap =
      std::max(std::abs(r1p.mean() - r1), std::abs(r2p.mean() - r2));

  VectorXd diff = r1p - r2p;
  double gap = diff.mean();
  double se = std::sqrt((diff.array() - gap).square().sum() / (N - 1.0) / N);

  // Finite-difference identity on a Bernoulli ensemble: with exact
  // conditioning the adjoint route is the exact derivative of the discrete
  // cost, so the common-random-numbers central quotient must agree.
  const int tn = 5;
  TimeGrid tg = build_grid(1.0, tn);
  DriverPaths tree = enumerate_tree_paths(tg, 1, 1);
  SolverConfig tcfg = tree_solver();
  MatrixXd tu(tree.N, tn + 1), tv(tree.N, tn + 1);
  for (int a = 0; a < tree.N; ++a)
    for (int i = 0; i <= tn; ++i) {
      double w = tree.w(a, i), bt = tree.btail(a, i);
      tu(a, i) = 0.1 + 0.1 * std::sin(w) + 0.05 * bt;
      tv(a, i) = 1.0 + 0.5 * std::cos(w) + 0.2 * bt + 0.1 * w;
    }
  EnsembleSolution tstate = solve_mf_bdsde(spec.state_problem(), tree, &tu, 1, tcfg);
  AdjointSolution tadj = solve_adjoint(spec, tstate, &tu, tree, tcfg);
  double tr2 = gateaux_route2(spec, tstate, tadj, &tu, tv, tg);
  const double eps = 1e-4;
  auto cost_at = [&](const MatrixXd& uu) {
    EnsembleSolution s = solve_mf_bdsde(spec.state_problem(), tree, &uu, 1, tcfg);
    return evaluate_cost(spec, s, &uu, tg);
  };
  double fd = (cost_at(tu + eps * tv) - cost_at(tu - eps * tv)) / (2 * eps);
  double rel = std::abs(tr2 - fd) / std::max(std::abs(fd), 1e-12);

  record(6, "gateaux derivative routes",
         std::abs(gap) <= 3 * se && rel <= 1e-3 && attrib_gap < 1e-9,
         "route gap " + fmt(gap) + " within 3 se " + fmt(3 * se) +
             "; route2 vs fd relative " + fmt(rel) + " <= 1e-3");
}

// 7. Maximum principle on LQ without E[u] terms, tree-exact so conditional
// expectations carry no sampling noise: projected gradient reaches sup-norm
// residual <= 1e-3, its cost matches the closed-form substituted control
// within 3 combined standard errors, and the candidate never beats 100 random
// admissible perturbations by less than -3 se.
void criterion7() {
  TimeGrid grid = build_grid(1.0, 4);
  DriverPaths tree = enumerate_tree_paths(grid, 1, 1);  // 256 leaves
  LqCoefficients c = shipped_lq();
  ProblemSpec spec = make_lq_problem(c, xi_wt());

  OptimizerConfig ocfg;
  ocfg.solver = tree_solver();
  ocfg.tol = 1e-3;
  ocfg.max_iters = 400;
  MatrixXd u0 = MatrixXd::Zero(tree.N, grid.n_steps + 1);
  OptimizeResult opt = optimize(spec, u0, tree, ocfg);
  double residual = opt.report.smp_residuals.empty() ? 1e9
                                                     : opt.report.smp_residuals.back();

  ContinuationConfig ccfg;
  ccfg.solver = tree_solver();
  ccfg.inner_tol = 1e-12;
  LqSystemSolution closed = solve_lq_hamiltonian_system(c, xi_wt(), tree, ccfg);
  EnsembleSolution closed_state =
      solve_mf_bdsde(spec.state_problem(), tree, &closed.u, 1, ocfg.solver);
  double j_closed = evaluate_cost(spec, closed_state, &closed.u, grid);
  double j_opt = evaluate_cost(spec, opt.state, &opt.u, grid);
  VectorXd c1 = cost_contributions(spec, closed_state, &closed.u, grid);
  VectorXd c2 = cost_contributions(spec, opt.state, &opt.u, grid);
  auto se_of = [&](const VectorXd& x) {
    double m = x.mean();
    return std::sqrt((x.array() - m).square().sum() / (x.size() - 1.0) / x.size());
  };
  double se = std::sqrt(se_of(c1) * se_of(c1) + se_of(c2) * se_of(c2));
  double jgap = std::abs(j_opt - j_closed);

  SufficiencyReport suff =
      verify_sufficiency(spec, opt.u, tree, ocfg.solver, 100, {0.1}, 107);

  record(7, "smp optimality on lq",
         residual <= 1e-3 && jgap <= 3 * se && suff.dominance_pass,
         "residual " + fmt(residual) + " <= 1e-3, |J gap| " + fmt(jgap) +
             " <= 3 se " + fmt(3 * se) + ", dominance violations " +
             std::to_string(suff.dominance_violations) + "/100");
}

// 8. Variational convergence: mean square of (y^eps - y)/eps - K for
// eps in {0.1, 0.05, 0.025}. The LQ state map is affine in the control, so
// the quotient coincides with K to machine precision at every eps (accepted
// when all levels are below 1e-18); a nonlinear drift exhibits the strict
// O(eps^2) decrease.
void criterion8() {
  TimeGrid grid = build_grid(1.0, 3);
  DriverPaths tree = enumerate_tree_paths(grid, 1, 1);
  SolverConfig cfg = tree_solver();
  const std::vector<double> eps_grid = {0.1, 0.05, 0.025};

  auto ms_profile = [&](const ProblemSpec& spec) {
    MatrixXd u0 = MatrixXd::Zero(tree.N, grid.n_steps + 1);
    MatrixXd v(tree.N, grid.n_steps + 1);
    for (int a = 0; a < tree.N; ++a)
      for (int i = 0; i <= grid.n_steps; ++i)
        v(a, i) = 1.0 + 0.5 * std::cos(tree.w(a, i));
    EnsembleSolution base = solve_mf_bdsde(spec.state_problem(), tree, &u0, 1, cfg);
    VariationalSolution var = solve_variational(spec, base, &u0, v, tree, cfg);
    std::vector<double> ms;
    for (double eps : eps_grid) {
      MatrixXd ue = u0 + eps * v;
      EnsembleSolution bumped = solve_mf_bdsde(spec.state_problem(), tree, &ue, 1, cfg);
      MatrixXd quot = (bumped.y - base.y) / eps - var.K;
      double acc = 0;
      for (int i = 0; i <= grid.n_steps; ++i)
        acc = std::max(acc, quot.col(i).array().square().mean());
      ms.push_back(acc);
    }
    return ms;
  };

  std::vector<double> lq = ms_profile(make_lq_problem(shipped_lq(), xi_wt()));
  bool lq_ok = (lq[0] > lq[1] && lq[1] > lq[2]) ||
               (lq[0] <= 1e-18 && lq[1] <= 1e-18 && lq[2] <= 1e-18);

  ScalarOuter f{[](double, double y, double, double u, double) {
                  return std::sin(y) + u;
                },
                [](double, double y, double, double, double) { return std::cos(y); },
                [](double, double, double, double, double) { return 0.0; },
                [](double, double, double, double, double) { return 1.0; },
                [](double, double, double, double, double) { return 0.0; }};
  ScalarOuter g{[](double, double, double z, double, double) { return 0.2 * z; },
                [](double, double, double, double, double) { return 0.0; },
                [](double, double, double, double, double) { return 0.2; },
                [](double, double, double, double, double) { return 0.0; },
                [](double, double, double, double, double) { return 0.0; }};
  ScalarOuter h{[](double, double y, double, double u, double) {
                  return 0.5 * (y * y + u * u);
                },
                [](double, double y, double, double, double) { return y; },
                [](double, double, double, double, double) { return 0.0; },
                [](double, double, double, double u, double) { return u; },
                [](double, double, double, double, double) { return 0.0; }};
  ScalarStatistic none{[](double, double, double) { return 0.0; },
                       [](double, double, double) { return 0.0; },
                       [](double, double, double) { return 0.0; },
                       [](double, double, double) { return 0.0; }};
  ScalarTerminal Phi{[](double y, double) { return 0.5 * y * y; },
                     [](double y, double) { return y; },
                     [](double, double) { return 0.0; },
                     [](double) { return 0.0; },
                     [](double) { return 0.0; }};
  std::vector<double> nl =
      ms_profile(make_scalar_problem(f, none, g, none, h, none, Phi, xi_wt()));
  bool nl_ok = nl[0] > nl[1] && nl[1] > nl[2];

  record(8, "variational convergence", lq_ok && nl_ok,
         "lq ms " + fmt(lq[0]) + " / " + fmt(lq[1]) + " / " + fmt(lq[2]) +
             " (affine: quotient equals K); nonlinear ms " + fmt(nl[0]) + " > " +
             fmt(nl[1]) + " > " + fmt(nl[2]));
}

// Sorted-coupling scalar W2 between two ensemble columns.
double w2_scalar(VectorXd a, VectorXd b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  return std::sqrt((a - b).array().square().mean());
}

double fields_w2(const ZetaSolution& s1, const ZetaSolution& s2, int points) {
  double worst = 0;
  for (int i = 0; i < points; ++i) {
    worst = std::max(worst, w2_scalar(s1.fields.y.col(i), s2.fields.y.col(i)));
    worst = std::max(worst, w2_scalar(s1.fields.p.col(i), s2.fields.p.col(i)));
    worst = std::max(worst, w2_scalar(s1.fields.z.col(i), s2.fields.z.col(i)));
    worst = std::max(worst, w2_scalar(s1.fields.q.col(i), s2.fields.q.col(i)));
  }
  return worst;
}

// 9. Continuation reaches alpha = 1 with every recorded contraction ratio
// below one on a monotone plain-variant system and on the LQ Hamiltonian
// system, and two different initial iterates land on the same solution
// (uniqueness probe, max per-point per-field sorted W2 <= 1e-6).
void criterion9() {
  TimeGrid grid = build_grid(1.0, 8);
  DriverPaths paths = sample_paths(grid, 256, 1, 1, 109, DriverMode::gaussian);
  ContinuationConfig cfg;

  auto run_pair = [&](const FbdsdeSpec& spec, const std::string& label,
                      bool& ok, std::string& detail) {
    ContinuationState tr1, tr2;
    ZetaSolution s1 = continuation_solve(spec, paths, cfg, &tr1);
    ZetaFields far;
    far.y = MatrixXd::Constant(paths.N, grid.n_steps + 1, 2.0);
    far.p = MatrixXd::Constant(paths.N, grid.n_steps + 1, -1.5);
    far.z = MatrixXd::Constant(paths.N, grid.n_steps + 1, 0.5);
    far.q = MatrixXd::Constant(paths.N, grid.n_steps + 1, 1.0);
    ZetaSolution s2 = continuation_solve(spec, paths, cfg, &tr2, &far);
    double worst_ratio = 0;
    for (double r : tr1.contraction_ratios) worst_ratio = std::max(worst_ratio, r);
    for (double r : tr2.contraction_ratios) worst_ratio = std::max(worst_ratio, r);
    double w2 = fields_w2(s1, s2, grid.n_steps + 1);
    ok = tr1.success && tr2.success && worst_ratio < 1.0 && w2 <= 1e-6;
    detail = label + ": worst ratio " + fmt(worst_ratio) + " < 1, uniqueness w2 " +
             fmt(w2) + " <= 1e-6";
  };

  FbdsdeSpec mono;
  mono.k1 = 10; mono.k2 = 1; mono.k3 = 1; mono.k4 = 1;
  mono.xi = xi_wt();
  mono.f = [](const StepContext&, const VectorXd&, const VectorXd& p,
              const VectorXd&, const VectorXd&, const ZetaLaw& law) {
    return VectorXd::Constant(1, -p(0) - 0.25 * (law.mp.size() ? law.mp(0) : 0.0));
  };
  mono.g = [](const StepContext&, const VectorXd&, const VectorXd&,
              const VectorXd&, const VectorXd& q, const ZetaLaw&) {
    return VectorXd::Constant(1, -q(0));
  };
  mono.F = [](const StepContext&, const VectorXd& y, const VectorXd&,
              const VectorXd&, const VectorXd&, const ZetaLaw& law) {
    return VectorXd::Constant(1, y(0) + 0.25 * (law.my.size() ? law.my(0) : 0.0));
  };
  mono.G = [](const StepContext&, const VectorXd&, const VectorXd&,
              const VectorXd& z, const VectorXd&, const ZetaLaw&) {
    return VectorXd(z);
  };
  mono.Psi = [](const VectorXd& y0, const VectorXd&) { return VectorXd(y0); };

  bool ok1 = false, ok2 = false;
  std::string d1, d2;
  run_pair(mono, "monotone", ok1, d1);
  run_pair(make_lq_hamiltonian_spec(shipped_lq(), xi_wt()), "lq hamiltonian", ok2, d2);
  record(9, "continuation and uniqueness", ok1 && ok2, d1 + "; " + d2);
}

// 10. Assumption probes: the LQ Hamiltonian system satisfies the damped-
// coupling conditions; adding a mean-control term that cancels the control
// weight along degenerate directions destroys the monotonicity, so both
// probe families must reject it.
void criterion10() {
  AssumptionReport good = probe_assumptions(make_lq_hamiltonian_spec(shipped_lq(), xi_wt()));
  LqCoefficients bad = shipped_lq();
  bad.h2 = 0;
  bad.f3_bar = -1.0;
  bad.g3_bar = 0.2;
  bad.h3_bar = 0.0;
  AssumptionReport mean_coupled =
      probe_assumptions(make_lq_hamiltonian_spec(bad, xi_wt()));
  record(10, "assumption probes",
         good.b1_pass && good.b2_pass && !mean_coupled.a2_pass && !mean_coupled.b1_pass,
         "lq hamiltonian: b1 " + std::string(good.b1_pass ? "pass" : "fail") +
             " (c2 " + fmt(good.b1_c2) + "), b2 " +
             (good.b2_pass ? "pass" : "fail") + "; mean-control variant: a2 " +
             (mean_coupled.a2_pass ? "pass" : "fail") + ", b1 " +
             (mean_coupled.b1_pass ? "pass" : "fail") + " (both must fail)");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 11. Determinism: every pipeline produces byte-identical numeric outputs
// under 1 and 4 worker threads at a fixed seed (manifest.json excluded: it is
// the only file carrying wall-clock time).
void criterion11() {
  struct Case {
    const char* pipeline;
    const char* extra;
  };
  const Case cases[] = {
      {"simulate", "[grid]\nn_steps = 6\n[ensemble]\nN = 128\nseed = 11\n"},
      {"optimize", "[grid]\nn_steps = 4\n[ensemble]\nN = 64\nseed = 11\n"
                   "[optimizer]\nmax_iters = 5\n"},
      {"continuation", "[grid]\nn_steps = 4\n[ensemble]\nN = 64\nseed = 11\n"},
      {"lq-verify", "[grid]\nn_steps = 4\n[ensemble]\nN = 64\nseed = 11\n"
                    "[optimizer]\nmax_iters = 5\n"},
      {"oracle-check", ""},
  };
  const std::string lq =
      "[lq]\nf1 = 0.5\nf2 = 0.2\nf3 = 1\nf1_bar = 0.3\ng1 = 0.2\ng2 = 0.3\n"
      "g3 = 0.5\ng1_bar = 0.1\ng2_bar = 0.2\nh1 = 1\nh2 = 0.5\nh3 = 1\n"
      "h1_bar = 0.5\nphi = 1\nphi_bar = 0.5\n";

  bool all_ok = true;
  std::string detail;
  fs::path root = fs::temp_directory_path() / "mfbdsde_acceptance" / "determinism";
  for (const Case& cs : cases) {
    ParsedConfig parsed = parse_config(std::string("pipeline = ") + cs.pipeline +
                                       "\n" + cs.extra + lq);
    if (!parsed.ok()) {
      all_ok = false;
      detail += std::string(cs.pipeline) + ": config error; ";
      continue;
    }
    fs::path d1 = root / (std::string(cs.pipeline) + "-t1");
    fs::path d4 = root / (std::string(cs.pipeline) + "-t4");
    fs::remove_all(d1);
    fs::remove_all(d4);
    set_thread_count(1);
    parsed.config.out_dir = d1.string();
    run_experiment(parsed.config);
    set_thread_count(4);
    parsed.config.out_dir = d4.string();
    run_experiment(parsed.config);
    set_thread_count(0);
    bool same = true;
    for (const auto& entry : fs::directory_iterator(d1)) {
      std::string name = entry.path().filename().string();
      if (name == "manifest.json") continue;
      if (slurp(entry.path()) != slurp(d4 / name)) same = false;
    }
    if (!same) {
      all_ok = false;
      detail += std::string(cs.pipeline) + ": outputs differ; ";
    }
  }
  if (detail.empty()) detail = "all 5 pipelines byte-identical under 1 and 4 threads";
  record(11, "thread-count determinism", all_ok, detail);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  criterion11();
  if (failures == 0) std::printf("acceptance: all 11 criteria passed\n");
  else std::printf("acceptance: %d criteria FAILED\n", failures);
  return failures == 0 ? 0 : 1;
}
