#include "mfbdsde/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "mfbdsde/io.hpp"

namespace mfbdsde {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double_value(const std::string& s, double* out) {
  std::string t = trim(s);
  if (t == "inf" || t == "+inf") { *out = std::numeric_limits<double>::infinity(); return true; }
  if (t == "-inf") { *out = -std::numeric_limits<double>::infinity(); return true; }
  const char* begin = t.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') return false;
  *out = v;
  return true;
}

bool parse_int_value(const std::string& s, long long* out) {
  std::string t = trim(s);
  const char* begin = t.c_str();
  char* end = nullptr;
  long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0') return false;
  *out = v;
  return true;
}

bool parse_bool_value(const std::string& s, bool* out) {
  std::string t = trim(s);
  if (t == "true" || t == "1") { *out = true; return true; }
  if (t == "false" || t == "0") { *out = false; return true; }
  return false;
}

// One configuration key: how to assign a raw string and how to print the
// current value for the canonical dump.
struct Key {
  std::string name;
  std::function<std::string(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

Key dkey(const std::string& name, double ExperimentConfig::* field) {
  return {name,
          [name, field](ExperimentConfig& c, const std::string& raw) -> std::string {
            double v;
            if (!parse_double_value(raw, &v)) return name + ": expected a number, got '" + trim(raw) + "'";
            c.*field = v;
            return "";
          },
          [field](const ExperimentConfig& c) { return format_double(c.*field); }};
}

template <typename Sub>
Key dsub(const std::string& name, Sub ExperimentConfig::* sub, double Sub::* field) {
  return {name,
          [name, sub, field](ExperimentConfig& c, const std::string& raw) -> std::string {
            double v;
            if (!parse_double_value(raw, &v)) return name + ": expected a number, got '" + trim(raw) + "'";
            c.*sub.*field = v;
            return "";
          },
          [sub, field](const ExperimentConfig& c) { return format_double(c.*sub.*field); }};
}

template <typename Sub>
Key isub(const std::string& name, Sub ExperimentConfig::* sub, int Sub::* field) {
  return {name,
          [name, sub, field](ExperimentConfig& c, const std::string& raw) -> std::string {
            long long v;
            if (!parse_int_value(raw, &v)) return name + ": expected an integer, got '" + trim(raw) + "'";
            c.*sub.*field = static_cast<int>(v);
            return "";
          },
          [sub, field](const ExperimentConfig& c) { return std::to_string(c.*sub.*field); }};
}

Key ikey(const std::string& name, int ExperimentConfig::* field) {
  return {name,
          [name, field](ExperimentConfig& c, const std::string& raw) -> std::string {
            long long v;
            if (!parse_int_value(raw, &v)) return name + ": expected an integer, got '" + trim(raw) + "'";
            c.*field = static_cast<int>(v);
            return "";
          },
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

Key skey(const std::string& name, std::string ExperimentConfig::* field) {
  return {name,
          [field](ExperimentConfig& c, const std::string& raw) -> std::string {
            c.*field = trim(raw);
            return "";
          },
          [field](const ExperimentConfig& c) { return c.*field; }};
}

Key lqkey(const std::string& suffix, double LqCoefficients::* field) {
  std::string name = "lq." + suffix;
  return {name,
          [name, field](ExperimentConfig& c, const std::string& raw) -> std::string {
            double v;
            if (!parse_double_value(raw, &v)) return name + ": expected a number, got '" + trim(raw) + "'";
            c.lq.*field = v;
            return "";
          },
          [field](const ExperimentConfig& c) { return format_double(c.lq.*field); }};
}

std::vector<Key> build_registry() {
  std::vector<Key> keys;
  keys.push_back(skey("pipeline", &ExperimentConfig::pipeline));
  keys.push_back(skey("problem", &ExperimentConfig::problem));

  keys.push_back(dkey("grid.T", &ExperimentConfig::T));
  keys.push_back(ikey("grid.n_steps", &ExperimentConfig::n_steps));

  keys.push_back(ikey("ensemble.N", &ExperimentConfig::N));
  keys.push_back({"ensemble.seed",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    long long v;
                    if (!parse_int_value(raw, &v) || v < 0)
                      return "ensemble.seed: expected a non-negative integer, got '" + trim(raw) + "'";
                    c.seed = static_cast<std::uint64_t>(v);
                    return "";
                  },
                  [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
  keys.push_back(skey("ensemble.mode", &ExperimentConfig::mode));

  keys.push_back({"regression.degree",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    long long v;
                    if (!parse_int_value(raw, &v)) return "regression.degree: expected an integer, got '" + trim(raw) + "'";
                    c.solver.regression.degree = static_cast<int>(v);
                    return "";
                  },
                  [](const ExperimentConfig& c) { return std::to_string(c.solver.regression.degree); }});
  keys.push_back({"regression.ridge",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    double v;
                    if (!parse_double_value(raw, &v)) return "regression.ridge: expected a number, got '" + trim(raw) + "'";
                    c.solver.regression.ridge = v;
                    return "";
                  },
                  [](const ExperimentConfig& c) { return format_double(c.solver.regression.ridge); }});
  keys.push_back({"regression.tree_exact",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    bool v;
                    if (!parse_bool_value(raw, &v)) return "regression.tree_exact: expected true/false, got '" + trim(raw) + "'";
                    c.solver.regression.tree_exact = v;
                    return "";
                  },
                  [](const ExperimentConfig& c) { return c.solver.regression.tree_exact ? "true" : "false"; }});
  keys.push_back({"solver.max_picard",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    long long v;
                    if (!parse_int_value(raw, &v)) return "solver.max_picard: expected an integer, got '" + trim(raw) + "'";
                    c.solver.max_picard = static_cast<int>(v);
                    return "";
                  },
                  [](const ExperimentConfig& c) { return std::to_string(c.solver.max_picard); }});
  keys.push_back({"solver.picard_tol",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    double v;
                    if (!parse_double_value(raw, &v)) return "solver.picard_tol: expected a number, got '" + trim(raw) + "'";
                    c.solver.picard_tol = v;
                    return "";
                  },
                  [](const ExperimentConfig& c) { return format_double(c.solver.picard_tol); }});

  keys.push_back(dsub("optimizer.initial_step", &ExperimentConfig::optimizer, &OptimizerConfig::initial_step));
  keys.push_back(dsub("optimizer.shrink", &ExperimentConfig::optimizer, &OptimizerConfig::shrink));
  keys.push_back(dsub("optimizer.armijo", &ExperimentConfig::optimizer, &OptimizerConfig::armijo));
  keys.push_back(isub("optimizer.max_halvings", &ExperimentConfig::optimizer, &OptimizerConfig::max_halvings));
  keys.push_back(isub("optimizer.max_iters", &ExperimentConfig::optimizer, &OptimizerConfig::max_iters));
  keys.push_back(dsub("optimizer.tol", &ExperimentConfig::optimizer, &OptimizerConfig::tol));

  keys.push_back(dsub("continuation.delta", &ExperimentConfig::continuation, &ContinuationConfig::delta));
  keys.push_back(dsub("continuation.delta_min", &ExperimentConfig::continuation, &ContinuationConfig::delta_min));
  keys.push_back(dsub("continuation.fixed_point_tol", &ExperimentConfig::continuation, &ContinuationConfig::fixed_point_tol));
  keys.push_back(isub("continuation.max_fixed_point", &ExperimentConfig::continuation, &ContinuationConfig::max_fixed_point));
  keys.push_back(isub("continuation.max_inner", &ExperimentConfig::continuation, &ContinuationConfig::max_inner));
  keys.push_back(dsub("continuation.inner_tol", &ExperimentConfig::continuation, &ContinuationConfig::inner_tol));

  keys.push_back(lqkey("f1", &LqCoefficients::f1));
  keys.push_back(lqkey("f2", &LqCoefficients::f2));
  keys.push_back(lqkey("f3", &LqCoefficients::f3));
  keys.push_back(lqkey("f1_bar", &LqCoefficients::f1_bar));
  keys.push_back(lqkey("f2_bar", &LqCoefficients::f2_bar));
  keys.push_back(lqkey("f3_bar", &LqCoefficients::f3_bar));
  keys.push_back(lqkey("g1", &LqCoefficients::g1));
  keys.push_back(lqkey("g2", &LqCoefficients::g2));
  keys.push_back(lqkey("g3", &LqCoefficients::g3));
  keys.push_back(lqkey("g1_bar", &LqCoefficients::g1_bar));
  keys.push_back(lqkey("g2_bar", &LqCoefficients::g2_bar));
  keys.push_back(lqkey("g3_bar", &LqCoefficients::g3_bar));
  keys.push_back(lqkey("h1", &LqCoefficients::h1));
  keys.push_back(lqkey("h2", &LqCoefficients::h2));
  keys.push_back(lqkey("h3", &LqCoefficients::h3));
  keys.push_back(lqkey("h1_bar", &LqCoefficients::h1_bar));
  keys.push_back(lqkey("h2_bar", &LqCoefficients::h2_bar));
  keys.push_back(lqkey("h3_bar", &LqCoefficients::h3_bar));
  keys.push_back(lqkey("phi", &LqCoefficients::phi));
  keys.push_back(lqkey("phi_bar", &LqCoefficients::phi_bar));

  keys.push_back(dkey("control.lo", &ExperimentConfig::control_lo));
  keys.push_back(dkey("control.hi", &ExperimentConfig::control_hi));

  keys.push_back(skey("output.dir", &ExperimentConfig::out_dir));
  keys.push_back({"output.formats",
                  [](ExperimentConfig& c, const std::string& raw) -> std::string {
                    std::vector<std::string> out;
                    std::stringstream ss(raw);
                    std::string item;
                    while (std::getline(ss, item, ',')) {
                      item = trim(item);
                      if (!item.empty()) out.push_back(item);
                    }
                    c.formats = out;
                    return "";
                  },
                  [](const ExperimentConfig& c) {
                    std::string joined;
                    for (const std::string& f : c.formats) {
                      if (!joined.empty()) joined += ",";
                      joined += f;
                    }
                    return joined;
                  }});
  return keys;
}

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = build_registry();
  return keys;
}

// Spelled-out synonyms accepted on input; the canonical dump uses the short
// names only.
const std::vector<std::pair<std::string, std::string>>& aliases() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"ensemble.particles", "ensemble.N"},
      {"ensemble.rng_seed", "ensemble.seed"},
      {"grid.steps", "grid.n_steps"},
  };
  return table;
}

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& name) {
  int best = 1 << 30;
  std::string who;
  for (const Key& k : registry()) {
    int d = edit_distance(name, k.name);
    if (d < best) {
      best = d;
      who = k.name;
    }
  }
  for (const auto& [alias, target] : aliases()) {
    int d = edit_distance(name, alias);
    if (d < best) {
      best = d;
      who = target;
    }
  }
  return best <= 3 ? who : "";
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(),
                     [&](const char* o) { return v == o; });
}

void validate(const ExperimentConfig& c, std::vector<std::string>& errors) {
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  require(one_of(c.pipeline, {"simulate", "optimize", "continuation", "lq-verify",
                              "oracle-check"}),
          "pipeline: must be one of simulate, optimize, continuation, lq-verify, "
          "oracle-check (got '" + c.pipeline + "')");
  require(one_of(c.problem, {"lq", "scalar", "first-order", "custom-linear"}),
          "problem: must be one of lq, scalar, first-order, custom-linear (got '" +
              c.problem + "')");
  require(c.T > 0, "grid.T: violates \"T > 0\"");
  require(c.n_steps >= 1, "grid.n_steps: violates \"n_steps >= 1\"");
  require(c.N >= 1, "ensemble.N: violates \"N >= 1\"");
  require(one_of(c.mode, {"gaussian", "tree"}),
          "ensemble.mode: must be gaussian or tree (got '" + c.mode + "')");
  require(c.solver.regression.degree >= 0, "regression.degree: violates \"degree >= 0\"");
  require(c.solver.regression.ridge >= 0, "regression.ridge: violates \"ridge >= 0\"");
  require(c.solver.max_picard >= 1, "solver.max_picard: violates \"max_picard >= 1\"");
  require(c.solver.picard_tol > 0, "solver.picard_tol: violates \"picard_tol > 0\"");
  require(c.optimizer.initial_step > 0, "optimizer.initial_step: violates \"initial_step > 0\"");
  require(c.optimizer.shrink > 0 && c.optimizer.shrink < 1,
          "optimizer.shrink: violates \"0 < shrink < 1\"");
  require(c.optimizer.armijo > 0 && c.optimizer.armijo < 1,
          "optimizer.armijo: violates \"0 < armijo < 1\"");
  require(c.optimizer.max_halvings >= 1, "optimizer.max_halvings: violates \"max_halvings >= 1\"");
  require(c.optimizer.max_iters >= 1, "optimizer.max_iters: violates \"max_iters >= 1\"");
  require(c.optimizer.tol > 0, "optimizer.tol: violates \"tol > 0\"");
  require(c.continuation.delta > 0 && c.continuation.delta <= 1,
          "continuation.delta: violates \"0 < delta <= 1\"");
  require(c.continuation.delta_min > 0, "continuation.delta_min: violates \"delta_min > 0\"");
  require(c.continuation.fixed_point_tol > 0,
          "continuation.fixed_point_tol: violates \"fixed_point_tol > 0\"");
  require(c.continuation.max_fixed_point >= 1,
          "continuation.max_fixed_point: violates \"max_fixed_point >= 1\"");
  require(c.continuation.max_inner >= 1, "continuation.max_inner: violates \"max_inner >= 1\"");
  require(c.continuation.inner_tol > 0, "continuation.inner_tol: violates \"inner_tol > 0\"");
  require(!(c.control_lo > c.control_hi), "control.lo: violates \"lo <= hi\"");
  for (const std::string& f : c.formats)
    require(one_of(f, {"csv", "json"}),
            "output.formats: must list csv and/or json (got '" + f + "')");

  const bool lq_used = c.problem == "lq" || c.pipeline == "continuation" ||
                       c.pipeline == "lq-verify";
  if (lq_used) {
    require(c.lq.h3 > 0, "lq.h3: violates \"h3 > 0\" (control weight of the running cost)");
    require(c.lq.h3 + c.lq.h3_bar > 0, "lq.h3_bar: violates \"h3 + h3_bar > 0\"");
    require(c.lq.h1 >= 0, "lq.h1: violates \"h1 >= 0\"");
    require(c.lq.h2 >= 0, "lq.h2: violates \"h2 >= 0\"");
    require(c.lq.phi >= 0, "lq.phi: violates \"phi >= 0\"");
  }
}

}  // namespace

ParsedConfig parse_config(const std::string& text) {
  ParsedConfig out;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        out.errors.push_back("line " + std::to_string(lineno) + ": malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      out.errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = line.substr(eq + 1);
    std::string full = section.empty() ? key : section + "." + key;
    for (const auto& [alias, target] : aliases())
      if (full == alias) full = target;
    const Key* found = nullptr;
    for (const Key& k : registry())
      if (k.name == full) {
        found = &k;
        break;
      }
    if (!found) {
      std::string hint = nearest_key(full);
      std::string msg = "unknown key '" + full + "'";
      if (!hint.empty()) msg += " (did you mean '" + hint + "'?)";
      out.errors.push_back(msg);
      continue;
    }
    std::string err = found->set(out.config, value);
    if (!err.empty()) out.errors.push_back(err);
  }
  out.config.optimizer.solver = out.config.solver;
  out.config.continuation.solver = out.config.solver;
  validate(out.config, out.errors);
  return out;
}

std::string canonical_config(const ExperimentConfig& config) {
  std::string out;
  for (const Key& k : registry()) {
    out += k.name;
    out += " = ";
    out += k.get(config);
    out += "\n";
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  // where outputs land does not change what they contain
  ExperimentConfig keyed = config;
  keyed.out_dir = "out";
  std::string text = canonical_config(keyed);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace mfbdsde
