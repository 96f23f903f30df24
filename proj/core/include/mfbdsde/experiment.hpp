#pragma once

#include <string>
#include <vector>

#include "mfbdsde/config.hpp"

namespace mfbdsde {

struct RunManifest {
  std::string config_hash;  // hex of the canonical-config hash
  std::uint64_t seed = 0;
  std::string version;
  std::string pipeline;
  double wall_seconds = 0;
  std::vector<std::string> files;     // outputs written, relative to out_dir
  std::vector<std::string> checks;    // "name: pass" / "name: fail (detail)"
  std::vector<std::string> failures;  // failed checks and solver statuses
  bool all_passed = true;
};

// Executes the configured pipeline, writes CSV/JSON outputs, plot-data series
// and manifest.json into config.out_dir. Numeric outputs are a pure function
// of the canonical config, so replaying a manifest's config reproduces them
// byte-exactly regardless of the worker count.
RunManifest run_experiment(const ExperimentConfig& config);

}  // namespace mfbdsde
