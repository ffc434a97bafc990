#include "bpre/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bpre/experiments.hpp"
#include "bpre/format.hpp"
#include "bpre/offspring.hpp"
#include "bpre/rng.hpp"
#include "bpre/walk.hpp"

#ifndef BPRE_VERSION
#define BPRE_VERSION "0.0.0"
#endif

namespace bpre {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {
      "check-assumptions", "tail",           "limit-law",         "path-constancy",
      "cross-check",       "walk-constants", "renewal-tables",    "ratio-convergence"};
  return names;
}

json to_json(const ExperimentConfig& c) {
  json overrides = json::object();
  for (const auto& [k, v] : c.overrides) overrides[k] = v;
  return {{"command", c.command},
          {"model", {{"preset", c.model}, {"overrides", overrides}}},
          {"n_grid", c.n_grid ? json(*c.n_grid) : json(nullptr)},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"workers", c.workers},
          {"block_size", c.block_size},
          {"tolerances", c.tolerances},
          {"params", c.params},
          {"assertions", c.assertions}};
}

namespace {

template <class T>
bool read_unsigned(const json& doc, const char* key, T& out, std::vector<std::string>& errors) {
  if (!doc.contains(key)) return false;
  const json& v = doc.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    errors.push_back(std::string("field '") + key + "': expected a non-negative integer");
    return false;
  }
  out = v.get<T>();
  return true;
}

}  // namespace

ExperimentConfig config_from_json(const json& doc, std::vector<std::string>& errors) {
  ExperimentConfig c;
  if (!doc.is_object()) {
    errors.push_back("config: expected a JSON object at top level");
    return c;
  }
  static const std::vector<std::string> known = {"command",    "model",     "n_grid",
                                                 "replicates", "seed",      "output_dir",
                                                 "workers",    "block_size", "tolerances",
                                                 "params",     "assertions"};
  for (const auto& [key, _] : doc.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      errors.push_back("field '" + key + "': unknown field");
    }
  }
  if (doc.contains("command")) {
    if (doc["command"].is_string()) c.command = doc["command"].get<std::string>();
    else errors.push_back("field 'command': expected a string");
  }
  if (doc.contains("model")) {
    const json& m = doc["model"];
    if (m.is_string()) {
      c.model = m.get<std::string>();
    } else if (m.is_object()) {
      if (m.contains("preset")) {
        if (m["preset"].is_string()) c.model = m["preset"].get<std::string>();
        else errors.push_back("field 'model.preset': expected a string");
      }
      if (m.contains("overrides")) {
        if (!m["overrides"].is_object()) {
          errors.push_back("field 'model.overrides': expected an object of numbers");
        } else {
          for (const auto& [k, v] : m["overrides"].items()) {
            if (v.is_number()) c.overrides[k] = v.get<double>();
            else errors.push_back("field 'model.overrides." + k + "': expected a number");
          }
        }
      }
      for (const auto& [k, _] : m.items()) {
        if (k != "preset" && k != "overrides") errors.push_back("field 'model." + k + "': unknown field");
      }
    } else {
      errors.push_back("field 'model': expected a preset name or {preset, overrides}");
    }
  }
  if (doc.contains("n_grid")) {
    const json& g = doc["n_grid"];
    if (!g.is_array()) {
      errors.push_back("field 'n_grid': expected an array of positive integers");
    } else {
      c.n_grid.emplace();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i].is_number_integer() && g[i].get<std::int64_t>() >= 1) {
          c.n_grid->push_back(g[i].get<std::size_t>());
        } else {
          errors.push_back("field 'n_grid[" + std::to_string(i) + "]': expected a positive integer");
        }
      }
    }
  }
  read_unsigned(doc, "replicates", c.replicates, errors);
  read_unsigned(doc, "seed", c.seed, errors);
  read_unsigned(doc, "workers", c.workers, errors);
  read_unsigned(doc, "block_size", c.block_size, errors);
  if (doc.contains("output_dir")) {
    if (doc["output_dir"].is_string()) c.output_dir = doc["output_dir"].get<std::string>();
    else errors.push_back("field 'output_dir': expected a string");
  }
  for (const char* key : {"tolerances", "params"}) {
    if (!doc.contains(key)) continue;
    if (!doc[key].is_object()) {
      errors.push_back(std::string("field '") + key + "': expected an object");
      continue;
    }
    (std::string(key) == "tolerances" ? c.tolerances : c.params) = doc[key];
  }
  if (doc.contains("assertions")) {
    if (doc["assertions"].is_boolean()) c.assertions = doc["assertions"].get<bool>();
    else errors.push_back("field 'assertions': expected true or false");
  }
  return c;
}

std::optional<json> parse_config_text(const std::string& text, std::vector<std::string>& errors) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    errors.push_back("config: syntax error at line " + std::to_string(line) + ", column " +
                     std::to_string(col) + ": " + e.what());
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------

namespace {

/// Resolved run settings: command defaults merged with the config.
struct Settings {
  std::vector<std::size_t> n_grid;
  std::uint64_t replicates = 0;
  double delta = 0.25;
  double eps_factor = 0.2;
  std::uint64_t accepted = 2000;
  std::uint64_t max_trials = 100000000;
  std::uint64_t cap = 1000000000;
  std::vector<double> s_grid;
  std::uint64_t k_max = 20;
  std::vector<double> x_grid;
  std::uint64_t depth = 10000;
  std::vector<Side> sides;
  RatioFunctional functional;
  double tol_distance = 0.02;
  double slope_lo = -1.6;
  double slope_hi = -1.4;
  double ratio_band = 0.05;
  double sigmas = 3.0;
};

struct CommandDefaults {
  std::vector<std::size_t> n_grid;
  std::uint64_t replicates;
};

CommandDefaults defaults_for(const std::string& command) {
  if (command == "check-assumptions") return {{}, 100000};
  if (command == "tail") return {{64, 128, 256, 512, 1024}, 1000000};
  if (command == "limit-law") return {{256, 512}, 200000};
  if (command == "path-constancy") return {{32, 64, 128}, 0};
  if (command == "cross-check") return {{32}, 300000};
  if (command == "walk-constants") return {{1, 2, 256, 512, 1024}, 1000000};
  if (command == "renewal-tables") return {{}, 100000};
  if (command == "ratio-convergence") return {{256, 512, 1024}, 1000000};
  return {{}, 0};
}

bool uses_grid(const std::string& command) {
  return command != "check-assumptions" && command != "renewal-tables";
}

double param_number(const json& params, const char* key, double fallback,
                    std::vector<std::string>& errors) {
  if (!params.contains(key)) return fallback;
  if (!params[key].is_number()) {
    errors.push_back(std::string("field 'params.") + key + "': expected a number");
    return fallback;
  }
  return params[key].get<double>();
}

std::uint64_t param_count(const json& params, const char* key, std::uint64_t fallback,
                          std::vector<std::string>& errors) {
  if (!params.contains(key)) return fallback;
  const json& v = params[key];
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  if (v.is_number_float() && v.get<double>() >= 0 && v.get<double>() == std::floor(v.get<double>()) &&
      v.get<double>() < 1.8e19) {
    return static_cast<std::uint64_t>(v.get<double>());
  }
  errors.push_back(std::string("field 'params.") + key + "': expected a non-negative integer");
  return fallback;
}

std::vector<double> param_reals(const json& params, const char* key, std::vector<double> fallback,
                                std::vector<std::string>& errors) {
  if (!params.contains(key)) return fallback;
  const json& v = params[key];
  std::vector<double> out;
  if (!v.is_array()) {
    errors.push_back(std::string("field 'params.") + key + "': expected an array of numbers");
    return fallback;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) {
      errors.push_back(std::string("field 'params.") + key + "[" + std::to_string(i) +
                       "]': expected a number");
      return fallback;
    }
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::array<double, 2> pair_of(const json& f, const char* key, std::vector<std::string>& errors) {
  std::array<double, 2> out{1.0, 1.0};
  if (!f.contains(key)) return out;
  const json& v = f[key];
  if (v.is_number()) return {v.get<double>(), v.get<double>()};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) {
    return {v[0].get<double>(), v[1].get<double>()};
  }
  errors.push_back(std::string("field 'params.functional.") + key +
                   "': expected a number or two numbers");
  return out;
}

Settings resolve(const ExperimentConfig& c, std::vector<std::string>& errors) {
  Settings s;
  const CommandDefaults d = defaults_for(c.command);
  s.n_grid = c.n_grid ? *c.n_grid : d.n_grid;
  s.replicates = c.replicates == 0 ? d.replicates : c.replicates;
  const json& p = c.params;
  s.delta = param_number(p, "delta", s.delta, errors);
  s.eps_factor = param_number(p, "eps_factor", s.eps_factor, errors);
  s.accepted = param_count(p, "accepted", s.accepted, errors);
  s.max_trials = param_count(p, "max_trials", s.max_trials, errors);
  s.cap = param_count(p, "cap", s.cap, errors);
  std::vector<double> sg;
  for (int i = 0; i <= 10; ++i) sg.push_back(i / 10.0);
  s.s_grid = param_reals(p, "s_grid", sg, errors);
  s.k_max = param_count(p, "k_max", s.k_max, errors);
  const double x_max = param_number(p, "x_max", 5.0, errors);
  const double x_step = param_number(p, "x_step", 0.25, errors);
  std::vector<double> xg;
  if (x_step > 0.0 && x_max >= 0.0 && x_max / x_step < 1e6) {
    const auto steps = static_cast<std::size_t>(std::floor(x_max / x_step + 1e-9));
    for (std::size_t i = 0; i <= steps; ++i) xg.push_back(static_cast<double>(i) * x_step);
  } else {
    errors.push_back("field 'params.x_step': needs x_step > 0, x_max >= 0 and a grid under 1e6 points");
  }
  s.x_grid = param_reals(p, "x_grid", xg, errors);
  s.depth = param_count(p, "depth", s.depth, errors);

  std::string side = c.command == "renewal-tables" || c.command == "ratio-convergence" ? "both" : "left";
  if (p.contains("side")) {
    if (p["side"].is_string()) side = p["side"].get<std::string>();
    else errors.push_back("field 'params.side': expected \"left\", \"right\" or \"both\"");
  }
  // renewal tables call the sides u/v, ratio runs left/right
  if (side == "left" || side == "u" || side == "plus") s.sides = {Side::plus};
  else if (side == "right" || side == "v" || side == "minus") s.sides = {Side::minus};
  else if (side == "both") s.sides = {Side::plus, Side::minus};
  else errors.push_back("field 'params.side': unknown side '" + side + "'");

  if (p.contains("functional")) {
    const json& f = p["functional"];
    if (!f.is_object()) {
      errors.push_back("field 'params.functional': expected an object");
    } else {
      const std::string kind = f.value("kind", std::string("phi"));
      if (kind == "one") s.functional.kind = RatioFunctional::Kind::one;
      else if (kind == "phi") s.functional.kind = RatioFunctional::Kind::phi;
      else errors.push_back("field 'params.functional.kind': expected \"one\" or \"phi\"");
      s.functional.alpha = pair_of(f, "alpha", errors);
      s.functional.beta = pair_of(f, "beta", errors);
      s.functional.gamma = pair_of(f, "gamma", errors);
    }
  }

  const json& t = c.tolerances;
  s.tol_distance = param_number(t, "distance", s.tol_distance, errors);
  s.slope_lo = param_number(t, "slope_lo", s.slope_lo, errors);
  s.slope_hi = param_number(t, "slope_hi", s.slope_hi, errors);
  s.ratio_band = param_number(t, "ratio_band", s.ratio_band, errors);
  s.sigmas = param_number(t, "sigmas", s.sigmas, errors);
  return s;
}

}  // namespace

std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> errors;
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), c.command) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    errors.push_back("field 'command': unknown command '" + c.command + "' (expected one of " +
                     list + ")");
  }
  try {
    const EnvironmentModel model = make_model(c.model, c.overrides);
    for (const auto& d : model_diagnostics(model)) errors.push_back("field 'model': " + d);
  } catch (const ModelError& e) {
    errors.push_back(std::string("field 'model': ") + e.what());
  }
  if (c.workers < 1) errors.push_back("field 'workers': must be at least 1");
  if (c.block_size < 1) errors.push_back("field 'block_size': must be at least 1");
  if (c.output_dir.empty()) errors.push_back("field 'output_dir': must not be empty");

  const Settings s = resolve(c, errors);
  const std::string& cmd = c.command;
  if (uses_grid(cmd)) {
    if (s.n_grid.empty()) {
      errors.push_back("field 'n_grid': must not be empty");
    } else {
      bool increasing = true;
      for (std::size_t i = 1; i < s.n_grid.size(); ++i) increasing &= s.n_grid[i] > s.n_grid[i - 1];
      if (!increasing) errors.push_back("field 'n_grid': must be strictly increasing");
      if (s.n_grid.front() < 1) errors.push_back("field 'n_grid': entries must be >= 1");
      if (cmd == "tail" && (s.n_grid.size() < 2 ||
                            static_cast<double>(s.n_grid.back()) < 10.0 * static_cast<double>(s.n_grid.front()))) {
        errors.push_back("field 'n_grid': the tail fit needs a grid spanning at least one decade");
      }
      if (cmd == "limit-law" && s.n_grid.size() != 2) {
        errors.push_back("field 'n_grid': limit-law takes exactly two horizons (n, 2n)");
      }
      if ((cmd == "path-constancy" || cmd == "cross-check") && s.n_grid.back() > 256) {
        errors.push_back("field 'n_grid': rejection sampling is limited to n <= 256");
      }
      if (cmd == "cross-check" && s.n_grid.size() != 1) {
        errors.push_back("field 'n_grid': cross-check takes a single horizon");
      }
    }
  }
  if (cmd != "path-constancy" && s.replicates < 2) {
    errors.push_back("field 'replicates': must be at least 2");
  }
  if (cmd == "path-constancy" || cmd == "cross-check") {
    if (!(s.delta > 0.0 && s.delta < 0.5)) errors.push_back("field 'params.delta': must lie in (0, 1/2)");
    if (!(s.eps_factor > 0.0)) errors.push_back("field 'params.eps_factor': must be positive");
    if (s.accepted < 1) errors.push_back("field 'params.accepted': must be at least 1");
    if (s.max_trials < 1) errors.push_back("field 'params.max_trials': must be at least 1");
    if (s.cap < 1) errors.push_back("field 'params.cap': must be at least 1");
  }
  if (cmd == "limit-law") {
    if (s.s_grid.empty()) errors.push_back("field 'params.s_grid': must not be empty");
    for (double v : s.s_grid) {
      if (!(v >= 0.0 && v <= 1.0)) {
        errors.push_back("field 'params.s_grid': values must lie in [0, 1]");
        break;
      }
    }
    if (!(s.tol_distance > 0.0)) errors.push_back("field 'tolerances.distance': must be positive");
  }
  if (cmd == "renewal-tables") {
    if (s.x_grid.empty() || s.x_grid[0] != 0.0) {
      errors.push_back("field 'params.x_grid': must start at 0");
    }
    for (std::size_t i = 1; i < s.x_grid.size(); ++i) {
      if (!(s.x_grid[i] > s.x_grid[i - 1])) {
        errors.push_back("field 'params.x_grid': must be strictly increasing");
        break;
      }
    }
    if (s.depth < 1) errors.push_back("field 'params.depth': must be at least 1");
  }
  if (cmd == "ratio-convergence" && s.functional.kind == RatioFunctional::Kind::phi) {
    for (int i = 0; i < 2; ++i) {
      if (!(s.functional.alpha[i] > 0.0 && s.functional.beta[i] > 0.0 && s.functional.gamma[i] > 0.0)) {
        errors.push_back("field 'params.functional': alpha, beta, gamma must be positive");
        break;
      }
    }
  }
  if (!(s.sigmas > 0.0)) errors.push_back("field 'tolerances.sigmas': must be positive");
  return errors;
}

// ---------------------------------------------------------------------------

std::string run_directory_name(const std::string& command, std::uint64_t seed) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  char hash[16];
  std::snprintf(hash, sizeof hash, "%08x", static_cast<unsigned>(mix64(seed) >> 32));
  return command + "-" + stamp + "-" + hash;
}

namespace {

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Outcome {
  json result;
  std::vector<Assertion> assertions;
  bool partial = false;
  /// file name -> content
  std::vector<std::pair<std::string, std::string>> files;
};

std::string fmt(double v) { return format_real(v); }

Outcome run_check_assumptions(const EnvironmentModel& model, const Settings& s,
                              const ExperimentConfig& c) {
  Outcome o;
  const AssumptionReport r = check_assumptions(model, s.replicates, c.seed);
  json checks = json::array();
  std::ostringstream csv;
  csv << "check,passed,replicates\n";
  for (const auto& ch : r.checks) {
    checks.push_back({{"name", ch.name}, {"passed", ch.passed}, {"detail", ch.detail}});
    csv << ch.name << ',' << (ch.passed ? 1 : 0) << ',' << r.samples << '\n';
  }
  o.result = {{"samples", r.samples},
              {"f0_observed", {r.f0_observed_min, r.f0_observed_max}},
              {"eta_observed_min", r.eta_observed_min},
              {"mean_x", r.mean_x},
              {"mean_x_stderr", r.mean_x_se},
              {"var_x", r.var_x},
              {"var_x_stderr", r.var_x_se},
              {"var_x_exact", r.var_x_exact},
              {"a3_moment", r.a3_moment},
              {"a3_moment_stderr", r.a3_moment_se},
              {"checks", checks},
              {"all_passed", r.all_passed()}};
  o.assertions.push_back({"all assumption checks pass", r.all_passed(), ""});
  o.files.emplace_back("check-assumptions.csv", csv.str());
  return o;
}

Outcome run_tail(const EnvironmentModel& model, const Settings& s, const RunOptions& opt) {
  Outcome o;
  const TailFit fit = tail_fit(model, s.n_grid, s.replicates, opt);
  o.result = to_json(fit);
  o.assertions.push_back({"slope in [" + fmt(s.slope_lo) + ", " + fmt(s.slope_hi) + "]",
                          fit.slope >= s.slope_lo && fit.slope <= s.slope_hi,
                          "slope " + fmt(fit.slope) + " +- " + fmt(fit.slope_se) +
                              "; with n^-1/2 correction " + fmt(fit.corrected_slope) + " +- " +
                              fmt(fit.corrected_slope_se)});
  o.assertions.push_back({"n^1.5 P stabilizes over the last two points", fit.stabilized,
                          "z = " + fmt(fit.stabilization_z)});
  o.files.emplace_back("tail.csv", tail_fit_csv(fit));
  return o;
}

Outcome run_limit_law(const EnvironmentModel& model, const Settings& s, const RunOptions& opt) {
  Outcome o;
  const LimitLaw law = limit_law_Zn(model, s.n_grid[0], s.n_grid[1], s.s_grid, s.k_max,
                                    s.replicates, opt, s.tol_distance);
  o.result = to_json(law);
  o.assertions.push_back({"sup distance below max(tolerance, 3 sigma)", law.passed,
                          "sup " + fmt(law.sup_distance)});
  bool ends = true;
  for (std::size_t j = 0; j < law.s_grid.size(); ++j) {
    if (law.s_grid[j] == 0.0) ends &= law.first.pgf[j] == 0.0 && law.second.pgf[j] == 0.0;
    if (law.s_grid[j] == 1.0) ends &= law.first.pgf[j] == 1.0 && law.second.pgf[j] == 1.0;
  }
  o.assertions.push_back({"pgf is 0 at s=0 and 1 at s=1", ends, ""});
  o.files.emplace_back("limit-law.csv", limit_law_csv(law));
  o.files.emplace_back("limit-law-pmf.csv", limit_law_pmf_csv(law));
  return o;
}

Outcome run_path_constancy(const EnvironmentModel& model, const Settings& s,
                           const RunOptions& opt) {
  Outcome o;
  std::vector<AcceptedPaths> kept;
  const PathConstancy pc = path_constancy(model, s.n_grid, s.delta, s.eps_factor, s.accepted,
                                          s.max_trials, s.cap, opt, &kept);
  o.result = to_json(pc);
  o.partial = pc.partial;
  bool positive = true;
  for (const auto& pt : pc.points) positive &= pt.all_positive;
  o.assertions.push_back({"exceedance non-increasing within one combined sigma per step",
                          pc.non_increasing, ""});
  o.assertions.push_back({"acceptance target reached for every n", !pc.partial, ""});
  o.assertions.push_back({"Y_t > 0 on accepted paths", positive, ""});
  o.files.emplace_back("path-constancy.csv", path_constancy_csv(pc));
  for (const auto& k : kept) {
    o.files.emplace_back("paths-n" + std::to_string(k.n) + ".jsonl", paths_jsonl(k));
  }
  return o;
}

Outcome run_cross_check(const EnvironmentModel& model, const Settings& s, const RunOptions& opt) {
  Outcome o;
  const MarginalCrossCheck cc = cross_validate_marginal(model, s.n_grid[0], s.replicates,
                                                        s.accepted, s.max_trials, s.cap, opt);
  o.result = to_json(cc);
  o.partial = cc.partial;
  o.assertions.push_back({"every bin within 3 sigma", cc.per_bin_ok, ""});
  o.assertions.push_back({"chi-square p-value above 1%", cc.chi2_ok, "p = " + fmt(cc.p_value)});
  o.assertions.push_back({"acceptance target reached", !cc.partial, ""});
  o.files.emplace_back("cross-check.csv", cross_check_csv(cc));
  return o;
}

Outcome run_walk_constants(const EnvironmentModel& model, const Settings& s,
                           const RunOptions& opt) {
  Outcome o;
  const std::vector<StarRow> rows = star_constants(model, s.n_grid, s.replicates, opt);
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"n", r.n},
                   {"left", r.left},
                   {"right", r.right},
                   {"scaled_left", r.scaled_left},
                   {"scaled_left_stderr", r.scaled_left_se},
                   {"scaled_right", r.scaled_right},
                   {"scaled_right_stderr", r.scaled_right_se}});
  }
  o.result = {{"rows", out}};
  if (rows.size() >= 2) {
    const StarRow& last = rows.back();
    const bool ok = std::fabs(last.ratio_left - 1.0) <= s.ratio_band + s.sigmas * last.ratio_left_se;
    o.assertions.push_back({"last consecutive ratio of n^1.5 E[e^-S; L>=0] within 1 +- band +- 3 sigma",
                            ok, "ratio " + fmt(last.ratio_left) + " +- " + fmt(last.ratio_left_se)});
  }
  o.files.emplace_back("walk-constants.csv", star_constants_csv(rows));
  return o;
}

Outcome run_renewal_tables(const EnvironmentModel& model, const Settings& s,
                           const RunOptions& opt) {
  Outcome o;
  json out = json::object();
  for (Side side : s.sides) {
    const RenewalEstimate e =
        estimate_renewal(model, side, s.x_grid, s.depth, s.replicates, opt);
    const std::string tag = side == Side::plus ? "u" : "v";
    std::ostringstream h;
    h << "x,residual,stderr,truncation_remainder,K,N\n";
    for (std::size_t j = 0; j < e.harmonicity.grid.size(); ++j) {
      const double x = side == Side::plus ? e.harmonicity.grid[j] : -e.harmonicity.grid[j];
      h << fmt(x) << ',' << fmt(e.harmonicity.residual[j]) << ','
        << fmt(e.harmonicity.std_errors[j]) << ',' << fmt(e.harmonicity.truncation_remainder[j])
        << ',' << s.depth << ',' << s.replicates << '\n';
    }
    const bool within = e.harmonicity.within(s.sigmas);
    double worst = 0.0;
    for (std::size_t j = 0; j < e.harmonicity.grid.size(); ++j) {
      if (e.harmonicity.std_errors[j] > 0.0) {
        worst = std::max(worst, std::fabs(e.harmonicity.residual[j]) / e.harmonicity.std_errors[j]);
      }
    }
    out[tag] = {{"grid_points", e.table.grid.size()},
                {"K", s.depth},
                {"N", s.replicates},
                {"extrapolation", "linear beyond the last grid point"},
                {"harmonic_within_sigmas", within},
                {"max_abs_z", worst}};
    o.assertions.push_back({"harmonicity residual of " + tag + " within " + fmt(s.sigmas) + " sigma",
                            within, "max |z| = " + fmt(worst)});
    o.files.emplace_back("renewal-" + tag + ".csv", e.table.to_csv());
    o.files.emplace_back("harmonicity-" + tag + ".csv", h.str());
  }
  o.result = out;
  return o;
}

Outcome run_ratio_convergence(const EnvironmentModel& model, const Settings& s,
                              const RunOptions& opt) {
  Outcome o;
  json out = json::object();
  for (Side side : s.sides) {
    const RatioConvergence rc =
        ratio_convergence(model, side, s.functional, s.n_grid, s.replicates, opt);
    const std::string tag = side == Side::plus ? "left" : "right";
    out[tag] = to_json(rc);
    bool bounded = true;
    for (const auto& r : rc.rows) bounded &= r.within_bound;
    if (rc.rows.size() >= 2) {
      o.assertions.push_back({tag + " ratio stabilizes over the last two n", rc.stabilized,
                              "difference " + fmt(rc.last_difference) + " +- " +
                                  fmt(rc.last_difference_se)});
    }
    o.assertions.push_back({tag + " ratio within the pointwise bound", bounded, ""});
    o.files.emplace_back("ratio-convergence-" + tag + ".csv", ratio_convergence_csv(rc));
  }
  o.result = out;
  return o;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

RunResult run(const ExperimentConfig& config, const RunEnvironment& env) {
  RunResult res;
  res.messages = validate(config);
  if (!res.messages.empty()) {
    res.exit_code = kExitConfigError;
    return res;
  }
  std::vector<std::string> ignored;
  const Settings s = resolve(config, ignored);
  const EnvironmentModel model = make_model(config.model, config.overrides);
  RunOptions opt;
  opt.seed = config.seed;
  opt.workers = config.workers;
  opt.block_size = config.block_size;

  const auto started = std::chrono::steady_clock::now();
  const std::time_t wall = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  Outcome o;
  try {
    const std::string& cmd = config.command;
    if (cmd == "check-assumptions") o = run_check_assumptions(model, s, config);
    else if (cmd == "tail") o = run_tail(model, s, opt);
    else if (cmd == "limit-law") o = run_limit_law(model, s, opt);
    else if (cmd == "path-constancy") o = run_path_constancy(model, s, opt);
    else if (cmd == "cross-check") o = run_cross_check(model, s, opt);
    else if (cmd == "walk-constants") o = run_walk_constants(model, s, opt);
    else if (cmd == "renewal-tables") o = run_renewal_tables(model, s, opt);
    else if (cmd == "ratio-convergence") o = run_ratio_convergence(model, s, opt);
  } catch (const std::exception& e) {
    res.exit_code = kExitRuntimeError;
    res.messages.push_back(std::string("runtime error: ") + e.what());
    return res;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  bool all_ok = true;
  json assertions = json::array();
  for (const auto& a : o.assertions) {
    all_ok &= a.passed;
    assertions.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  }
  res.summary = {{"command", config.command},
                 {"model", config.model},
                 {"seed", config.seed},
                 {"partial", o.partial},
                 {"result", o.result},
                 {"assertions", assertions},
                 {"all_assertions_passed", all_ok}};

  try {
    res.run_dir = env.run_dir ? *env.run_dir
                              : fs::path(config.output_dir) /
                                    run_directory_name(config.command, config.seed);
    fs::create_directories(res.run_dir);
    json artifacts = json::array();
    for (const auto& [name, content] : o.files) {
      write_file(res.run_dir / name, content);
      artifacts.push_back(name);
    }
    write_file(res.run_dir / "summary.json", res.summary.dump(2) + "\n");
    artifacts.push_back("summary.json");
    char stamp[32];
    std::tm tm{};
    gmtime_r(&wall, &tm);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    const json manifest = {{"tool", "bpre"},
                           {"version", BPRE_VERSION},
                           {"command", config.command},
                           {"config", to_json(config)},
                           {"seed", config.seed},
                           {"model_note", "environment presets are modelling choices of this tool"},
                           {"started_utc", stamp},
                           {"wall_time_seconds", seconds},
                           {"partial", o.partial},
                           {"artifacts", artifacts}};
    write_file(res.run_dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    res.exit_code = kExitRuntimeError;
    res.messages.push_back(std::string("runtime error: ") + e.what());
    return res;
  }
  for (const auto& a : o.assertions) {
    res.messages.push_back(std::string(a.passed ? "PASS " : "FAIL ") + a.name +
                           (a.detail.empty() ? "" : " (" + a.detail + ")"));
  }
  if (o.partial) res.messages.push_back("partial: Monte Carlo budget exhausted before the target");
  res.exit_code = (config.assertions && !all_ok) ? kExitAssertionFailed : kExitOk;
  return res;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> parse_grid(const std::string& text, std::vector<std::string>& errors) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      errors.push_back("flag '--n': '" + item + "' is not a positive integer");
    }
  }
  return out;
}

bool split_assignment(const std::string& text, std::string& key, std::string& value) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) return false;
  key = text.substr(0, eq);
  value = text.substr(eq + 1);
  return true;
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"Branching processes in random environment: conditioned-extinction experiments"};
  app.set_version_flag("--version", BPRE_VERSION);
  app.require_subcommand(1);

  struct Flags {
    std::string config_path;
    std::string model;
    std::vector<std::string> sets;
    std::vector<std::string> params;
    std::vector<std::string> tolerances;
    std::string grid;
    std::uint64_t reps = 0;
    std::uint64_t seed = 0;
    std::string out;
    unsigned workers = 0;
    std::uint64_t block_size = 0;
    std::string run_dir;
    bool no_assert = false;
    std::string command;
  } f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON config file (flags override its fields)");
    sub->add_option("--model", f.model, "model preset: uniform-unit, truncated-gaussian, point-mass");
    sub->add_option("--set", f.sets, "model parameter override key=value (repeatable)");
    sub->add_option("--param", f.params, "command parameter key=<json value> (repeatable)");
    sub->add_option("--tol", f.tolerances, "tolerance key=value (repeatable)");
    sub->add_option("--n", f.grid, "comma-separated horizon grid");
    sub->add_option("--reps", f.reps, "replicate count");
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--workers", f.workers, "worker threads");
    sub->add_option("--block-size", f.block_size, "replicates per work block");
    sub->add_option("--run-dir", f.run_dir, "exact run directory instead of a generated name");
    sub->add_flag("--no-assert", f.no_assert, "exit 0 even if acceptance assertions fail");
  };
  std::vector<CLI::App*> subs;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    add_common(sub);
    subs.push_back(sub);
  }
  auto* val = app.add_subcommand("validate", "check a config without running it");
  add_common(val);
  val->add_option("--command", f.command, "command to validate the config for");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }
  CLI::App* chosen = app.get_subcommands().front();

  std::vector<std::string> errors;
  ExperimentConfig config;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) {
      std::cerr << "config: cannot read " << f.config_path << "\n";
      return kExitConfigError;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    if (auto doc = parse_config_text(buf.str(), errors)) config = config_from_json(*doc, errors);
  }
  const bool validating = chosen == val;
  if (!validating) config.command = chosen->get_name();
  else if (!f.command.empty()) config.command = f.command;

  if (!f.model.empty()) config.model = f.model;
  for (const auto& kv : f.sets) {
    std::string k, v;
    if (!split_assignment(kv, k, v)) {
      errors.push_back("flag '--set': expected key=value, got '" + kv + "'");
      continue;
    }
    try {
      std::size_t used = 0;
      config.overrides[k] = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      errors.push_back("flag '--set': '" + v + "' is not a number");
    }
  }
  auto json_assign = [&](const std::vector<std::string>& items, json& target, const char* flag) {
    for (const auto& kv : items) {
      std::string k, v;
      if (!split_assignment(kv, k, v)) {
        errors.push_back(std::string("flag '") + flag + "': expected key=value, got '" + kv + "'");
        continue;
      }
      try {
        target[k] = json::parse(v);
      } catch (const json::parse_error&) {
        target[k] = v;
      }
    }
  };
  json_assign(f.params, config.params, "--param");
  json_assign(f.tolerances, config.tolerances, "--tol");
  if (chosen->count("--n")) {
    config.n_grid = parse_grid(f.grid, errors);
  }
  if (chosen->count("--reps")) config.replicates = f.reps;
  if (chosen->count("--seed")) config.seed = f.seed;
  if (chosen->count("--out")) config.output_dir = f.out;
  if (chosen->count("--workers")) config.workers = f.workers;
  if (chosen->count("--block-size")) config.block_size = f.block_size;
  if (f.no_assert) config.assertions = false;

  for (const auto& e : validate(config)) errors.push_back(e);
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "error: " << e << "\n";
    return kExitConfigError;
  }
  if (validating) {
    std::cout << "config is valid for command '" << config.command << "'\n";
    return kExitOk;
  }

  RunEnvironment env;
  if (!f.run_dir.empty()) env.run_dir = fs::path(f.run_dir);
  const RunResult r = run(config, env);
  if (!r.run_dir.empty()) std::cout << "run directory: " << r.run_dir.string() << "\n";
  const bool failed = r.exit_code == kExitConfigError || r.exit_code == kExitRuntimeError;
  for (const auto& m : r.messages) (failed ? std::cerr : std::cout) << m << "\n";
  return r.exit_code;
}

}  // namespace bpre
