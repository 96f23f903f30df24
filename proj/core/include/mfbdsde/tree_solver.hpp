#pragma once

#include "mfbdsde/bdsde.hpp"

namespace mfbdsde {

// Exact backward induction on a fully enumerated Bernoulli tree: conditional
// expectations are plain within-group averages over paths sharing the known
// signs at each grid point. Independent of the regression engine; used as the
// oracle the Monte Carlo solver is compared against.
EnsembleSolution solve_on_tree(const BdsdeProblem& problem, const DriverPaths& tree_paths,
                               const MatrixXd* control, int k, double law_tol = 1e-13,
                               int max_picard = 200);

}  // namespace mfbdsde
