#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mfbdsde/control.hpp"
#include "mfbdsde/fbdsde.hpp"

namespace mfbdsde {

// Everything one experiment run needs, with defaults that parse and validate.
struct ExperimentConfig {
  std::string pipeline = "simulate";  // simulate | optimize | continuation |
                                      // lq-verify | oracle-check
  std::string problem = "lq";         // lq | scalar | first-order | custom-linear

  double T = 1.0;
  int n_steps = 8;

  int N = 256;
  std::uint64_t seed = 1;
  std::string mode = "gaussian";  // gaussian | tree

  SolverConfig solver;            // regression + picard settings
  OptimizerConfig optimizer;      // solver sub-config synced after parsing
  ContinuationConfig continuation;
  LqCoefficients lq;

  double control_lo = -std::numeric_limits<double>::infinity();
  double control_hi = std::numeric_limits<double>::infinity();

  std::string out_dir = "out";
  std::vector<std::string> formats = {"csv", "json"};
};

struct ParsedConfig {
  ExperimentConfig config;
  std::vector<std::string> errors;  // empty means fully validated
  bool ok() const { return errors.empty(); }
};

// TOML-style key/value document with [section] headers, '#'/';' comments.
// Unknown keys are errors (with a nearest-key suggestion); values are type
// checked; module validators run on the assembled config and report the
// violated constraint by name (e.g. "h3 > 0").
ParsedConfig parse_config(const std::string& text);

// Deterministic normalized dump of every setting (defaults included); this is
// what the run manifest records and what the config hash covers.
std::string canonical_config(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace mfbdsde
