#pragma once

// One declarative JSON document drives every command.  Sections:
//
//   model     name (constant | linear | rotation | anharmonic | polynomial)
//             plus its parameters; polynomial takes per-component term tables
//             [{"c": coeff, "powers": [p1, ...]}, ...].
//   grid      dim, n (points per axis, even), L (half-width).
//   initial   family (uniform | gaussian | mixture | snapshot); gaussian and
//             mixture parameterize the probability density w, so q = sqrt(w);
//             optional "sign": {"axis": a, "below": x} flips q on a halfspace.
//   run       scheme, step_size, steps, monitors, verify_conserved,
//             snapshot_cadence, seed, and per-command knobs.
//   output    directory, formats.
//   automaton states, permutation or cycles, horizon, amplitudes or exact
//             probabilities with signs.
//   extended  modulus, horizon, epsilon, force ({"type":"shift","sites":k} or
//             {"type":"model"}), amplitudes.
//
// Errors carry the full dotted key path; parse errors keep the line and
// column reported by the JSON reader.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtrans/automaton.hpp"
#include "qtrans/evolution.hpp"
#include "qtrans/extended.hpp"
#include "qtrans/io.hpp"
#include "qtrans/model.hpp"
#include "qtrans/observables.hpp"
#include "qtrans/wavefunction.hpp"

namespace qtrans {

/// Malformed or inconsistent configuration; mapped to the usage exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  Json raw;
  std::string canonical;  // sorted-key dump; the hash input
  std::uint64_t hash = 0;
  std::uint64_t seed = 0;
  std::string output_dir = "qtrans-out";
  std::vector<std::string> formats = {"csv", "json", "snapshot"};

  ArtifactMeta meta() const { return ArtifactMeta{hash, seed}; }
  bool wants(const std::string& fmt) const {
    for (const auto& f : formats)
      if (f == fmt) return true;
    return false;
  }
};

namespace detail {

inline const Json* cfg_find(const Json& root, std::string_view path) {
  const Json* cur = &root;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (!cur->is_object()) return nullptr;
    const auto it = cur->find(key);
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return cur;
}

inline const Json& cfg_require(const Json& root, const std::string& path) {
  const Json* j = cfg_find(root, path);
  if (!j) throw ConfigError("config: missing key '" + path + "'");
  return *j;
}

inline double cfg_number(const Json& root, const std::string& path) {
  const Json& j = cfg_require(root, path);
  if (!j.is_number()) throw ConfigError("config: key '" + path + "' must be a number");
  return j.get<double>();
}

inline std::int64_t cfg_int(const Json& root, const std::string& path) {
  const Json& j = cfg_require(root, path);
  if (!j.is_number_integer()) throw ConfigError("config: key '" + path + "' must be an integer");
  return j.get<std::int64_t>();
}

inline std::string cfg_string(const Json& root, const std::string& path) {
  const Json& j = cfg_require(root, path);
  if (!j.is_string()) throw ConfigError("config: key '" + path + "' must be a string");
  return j.get<std::string>();
}

inline bool cfg_bool(const Json& root, const std::string& path) {
  const Json& j = cfg_require(root, path);
  if (!j.is_boolean()) throw ConfigError("config: key '" + path + "' must be a boolean");
  return j.get<bool>();
}

inline const Json& cfg_array(const Json& root, const std::string& path) {
  const Json& j = cfg_require(root, path);
  if (!j.is_array()) throw ConfigError("config: key '" + path + "' must be an array");
  return j;
}

inline double cfg_number_or(const Json& root, const std::string& path, double dflt) {
  return cfg_find(root, path) ? cfg_number(root, path) : dflt;
}

inline std::int64_t cfg_int_or(const Json& root, const std::string& path, std::int64_t dflt) {
  return cfg_find(root, path) ? cfg_int(root, path) : dflt;
}

inline std::string cfg_string_or(const Json& root, const std::string& path,
                                 const std::string& dflt) {
  return cfg_find(root, path) ? cfg_string(root, path) : dflt;
}

inline bool cfg_bool_or(const Json& root, const std::string& path, bool dflt) {
  return cfg_find(root, path) ? cfg_bool(root, path) : dflt;
}

inline std::vector<double> cfg_vector(const Json& root, const std::string& path,
                                      std::size_t want) {
  const Json& arr = cfg_array(root, path);
  if (want != 0 && arr.size() != want)
    throw ConfigError("config: key '" + path + "' must hold " + std::to_string(want) +
                      " numbers, got " + std::to_string(arr.size()));
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw ConfigError("config: key '" + path + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  try {
    cfg.raw = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!cfg.raw.is_object()) throw ConfigError("config: top level must be an object");
  cfg.canonical = cfg.raw.dump();
  cfg.hash = fnv1a(cfg.canonical);
  const std::int64_t seed = detail::cfg_int_or(cfg.raw, "run.seed", 0);
  if (seed < 0) throw ConfigError("config: key 'run.seed' must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.output_dir = detail::cfg_string_or(cfg.raw, "output.directory", "qtrans-out");
  if (detail::cfg_find(cfg.raw, "output.formats")) {
    cfg.formats.clear();
    for (const auto& f : detail::cfg_array(cfg.raw, "output.formats")) {
      if (!f.is_string()) throw ConfigError("config: key 'output.formats' must hold strings");
      const std::string fmt = f.get<std::string>();
      if (fmt != "csv" && fmt != "json" && fmt != "snapshot")
        throw ConfigError("config: key 'output.formats' allows csv, json, snapshot; got '" + fmt +
                          "'");
      cfg.formats.push_back(fmt);
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_bytes(path);
  } catch (const std::runtime_error&) {
    throw ConfigError("config: cannot open '" + path + "'");
  }
  return parse_config(text);
}

inline GridPtr grid_from_config(const RunConfig& cfg) {
  const std::int64_t dim = detail::cfg_int(cfg.raw, "grid.dim");
  if (dim < 1 || dim > 3) throw ConfigError("config: key 'grid.dim' must be 1, 2, or 3");
  const std::int64_t n = detail::cfg_int(cfg.raw, "grid.n");
  if (n < 2 || n % 2 != 0)
    throw ConfigError("config: key 'grid.n' must be a positive even integer");
  const double L = detail::cfg_number(cfg.raw, "grid.L");
  if (!(L > 0.0)) throw ConfigError("config: key 'grid.L' must be positive");
  return ConfigurationGrid::create(static_cast<int>(dim), static_cast<int>(n), L);
}

inline ForceField model_from_config(const RunConfig& cfg) {
  const std::string name = detail::cfg_string(cfg.raw, "model.name");
  if (name == "constant") {
    return make_constant(detail::cfg_vector(cfg.raw, "model.velocity", 0));
  }
  if (name == "linear") {
    return make_linear(detail::cfg_number_or(cfg.raw, "model.lambda", 1.0));
  }
  if (name == "rotation") {
    return make_rotation(detail::cfg_number_or(cfg.raw, "model.omega", 1.0));
  }
  if (name == "anharmonic") {
    return make_anharmonic(detail::cfg_number_or(cfg.raw, "model.coupling", 1.0));
  }
  if (name == "polynomial") {
    const std::int64_t dim = detail::cfg_int(cfg.raw, "model.dim");
    if (dim < 1 || dim > 3) throw ConfigError("config: key 'model.dim' must be 1, 2, or 3");
    const Json& comps = detail::cfg_array(cfg.raw, "model.force");
    if (comps.size() != static_cast<std::size_t>(dim))
      throw ConfigError("config: key 'model.force' needs one term table per component");
    std::vector<std::vector<PolyTerm>> tables(comps.size());
    for (std::size_t k = 0; k < comps.size(); ++k) {
      if (!comps[k].is_array())
        throw ConfigError("config: key 'model.force' components must be arrays of terms");
      for (const auto& term : comps[k]) {
        const std::string where = "model.force[" + std::to_string(k) + "]";
        if (!term.is_object() || !term.contains("c") || !term["c"].is_number())
          throw ConfigError("config: key '" + where + "' terms need a numeric 'c'");
        PolyTerm t{term["c"].get<double>(), {0, 0, 0}};
        if (term.contains("powers")) {
          const auto& p = term["powers"];
          if (!p.is_array() || p.size() > 3)
            throw ConfigError("config: key '" + where + "' powers must list at most 3 exponents");
          for (std::size_t a = 0; a < p.size(); ++a) {
            if (!p[a].is_number_integer() || p[a].get<std::int64_t>() < 0)
              throw ConfigError("config: key '" + where +
                                "' powers must be non-negative integers");
            t.powers[a] = p[a].get<int>();
          }
        }
        tables[k].push_back(t);
      }
    }
    return make_polynomial_field(static_cast<int>(dim),
                                 detail::cfg_string_or(cfg.raw, "model.label", "polynomial"),
                                 std::move(tables));
  }
  throw ConfigError("config: unknown model '" + name +
                    "' (known: constant, linear, rotation, anharmonic, polynomial)");
}

inline void check_model_grid(const ForceField& f, const GridPtr& g) {
  if (f.dim != g->dim())
    throw ConfigError("config: model '" + f.name + "' has dimension " + std::to_string(f.dim) +
                      " but grid.dim is " + std::to_string(g->dim()));
}

namespace detail {

inline void accumulate_gaussian(const GridPtr& g, const std::vector<double>& mean,
                                const std::vector<double>& cov, double weight,
                                std::vector<double>& w) {
  const int dim = g->dim();
  double pt[3];
  for (std::size_t i = 0; i < w.size(); ++i) {
    g->point(i, pt);
    double arg = 0.0;
    for (int a = 0; a < dim; ++a) {
      const double d = pt[a] - mean[static_cast<std::size_t>(a)];
      arg += d * d / (2.0 * cov[static_cast<std::size_t>(a)]);
    }
    w[i] += weight * std::exp(-arg);
  }
}

inline std::vector<double> cfg_covariance(const Json& root, const std::string& path,
                                          std::size_t dim) {
  std::vector<double> cov;
  const Json& j = cfg_require(root, path);
  if (j.is_number())
    cov.assign(dim, j.get<double>());
  else
    cov = cfg_vector(root, path, dim);
  for (double v : cov)
    if (!(v > 0.0)) throw ConfigError("config: key '" + path + "' must be positive");
  return cov;
}

}  // namespace detail

/// Builds the signed square-root state of the configured probability density.
inline RealWaveFunction initial_from_config(const RunConfig& cfg, const GridPtr& g) {
  const std::string family = detail::cfg_string(cfg.raw, "initial.family");
  const auto dim = static_cast<std::size_t>(g->dim());

  RealWaveFunction q{g, std::vector<double>(g->size(), 0.0), 0.0};
  if (family == "uniform") {
    std::fill(q.values.begin(), q.values.end(), 1.0);
  } else if (family == "gaussian") {
    const auto mean = detail::cfg_vector(cfg.raw, "initial.mean", dim);
    const auto cov = detail::cfg_covariance(cfg.raw, "initial.covariance", dim);
    std::vector<double> w(g->size(), 0.0);
    detail::accumulate_gaussian(g, mean, cov, 1.0, w);
    for (std::size_t i = 0; i < w.size(); ++i) q.values[i] = std::sqrt(w[i]);
  } else if (family == "mixture") {
    const Json& comps = detail::cfg_array(cfg.raw, "initial.components");
    if (comps.empty()) throw ConfigError("config: key 'initial.components' must not be empty");
    std::vector<double> w(g->size(), 0.0);
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const std::string where = "initial.components[" + std::to_string(k) + "]";
      const double weight = detail::cfg_number_or(comps[k], "weight", 1.0);
      if (!(weight > 0.0)) throw ConfigError("config: key '" + where + ".weight' must be positive");
      const auto mean = detail::cfg_vector(comps[k], "mean", dim);
      const auto cov = detail::cfg_covariance(comps[k], "covariance", dim);
      detail::accumulate_gaussian(g, mean, cov, weight, w);
    }
    for (std::size_t i = 0; i < w.size(); ++i) q.values[i] = std::sqrt(w[i]);
  } else if (family == "snapshot") {
    const std::string path = detail::cfg_string(cfg.raw, "initial.path");
    if (!std::filesystem::exists(path))
      throw ConfigError("config: initial.path '" + path + "' does not exist");
    const LoadedSnapshot snap = read_snapshot(path);
    if (snap.dtype != 0)
      throw ConfigError("config: initial snapshot '" + path + "' holds a complex field");
    if (snap.grid->dim() != g->dim() || snap.grid->points_per_axis() != g->points_per_axis() ||
        snap.grid->half_width() != g->half_width())
      throw ConfigError("config: initial snapshot grid (dim=" + std::to_string(snap.grid->dim()) +
                        ", n=" + std::to_string(snap.grid->points_per_axis()) +
                        ", L=" + format_double(snap.grid->half_width()) +
                        ") differs from the grid section");
    q.values = snap.reals;
    q.time = snap.time;
  } else {
    throw ConfigError("config: unknown initial family '" + family +
                      "' (known: uniform, gaussian, mixture, snapshot)");
  }

  if (detail::cfg_find(cfg.raw, "initial.sign")) {
    const std::int64_t axis = detail::cfg_int(cfg.raw, "initial.sign.axis");
    if (axis < 1 || axis > g->dim())
      throw ConfigError("config: key 'initial.sign.axis' must address a grid axis");
    const double below = detail::cfg_number(cfg.raw, "initial.sign.below");
    double pt[3];
    for (std::size_t i = 0; i < q.values.size(); ++i) {
      g->point(i, pt);
      if (pt[axis - 1] < below) q.values[i] = -q.values[i];
    }
  }

  normalize(q);
  return q;
}

/// Translates a monitor name from the config into an observable entry.
/// Catalog: H, H2, gamma2, gamma<axis>, L<axis>, sigma<axis>.
inline ObservableSpec spec_from_monitor_name(const std::string& name, int dim,
                                             bool conserved_hint = false) {
  const auto axis_of = [&](std::size_t prefix_len) -> int {
    if (name.size() != prefix_len + 1) return -1;
    const char c = name[prefix_len];
    return (c >= '1' && c <= '9') ? c - '0' : -1;
  };
  if (name == "H" || name == "H2") return statistical_spec(name, 0, conserved_hint);
  if (name == "gamma2") return statistical_spec("gamma2", 0, conserved_hint);
  if (name.rfind("gamma", 0) == 0 && axis_of(5) > 0)
    return statistical_spec("gamma", axis_of(5), conserved_hint);
  if (name.rfind("L", 0) == 0 && axis_of(1) > 0)
    return statistical_spec("L", axis_of(1), conserved_hint);
  if (name.rfind("sigma", 0) == 0 && axis_of(5) > 0) {
    const int axis = axis_of(5);
    if (axis > dim)
      throw ConfigError("config: monitor '" + name + "' needs a " + std::to_string(axis) +
                        "-axis grid");
    return classical_spec(
        name, [axis](const double* s) { return s[axis - 1]; }, conserved_hint);
  }
  throw ConfigError("config: unknown monitor '" + name +
                    "'; available: H, H2, gamma2, gamma<axis>, L<axis>, sigma<axis>");
}

struct MonitorSet {
  std::vector<ObservableSpec> specs;
  std::vector<Monitor> monitors;
};

inline MonitorSet monitors_from_config(const RunConfig& cfg, const ForceField& model,
                                       const GridPtr& g) {
  MonitorSet set;
  std::vector<std::string> conserved;
  if (detail::cfg_find(cfg.raw, "run.verify_conserved"))
    for (const auto& v : detail::cfg_array(cfg.raw, "run.verify_conserved")) {
      if (!v.is_string())
        throw ConfigError("config: key 'run.verify_conserved' must hold monitor names");
      conserved.push_back(v.get<std::string>());
    }
  if (detail::cfg_find(cfg.raw, "run.monitors")) {
    for (const auto& v : detail::cfg_array(cfg.raw, "run.monitors")) {
      if (!v.is_string()) throw ConfigError("config: key 'run.monitors' must hold monitor names");
      const std::string name = v.get<std::string>();
      const bool hint = std::find(conserved.begin(), conserved.end(), name) != conserved.end();
      set.specs.push_back(spec_from_monitor_name(name, g->dim(), hint));
    }
  }
  for (const auto& name : conserved) {
    const bool listed = std::any_of(set.specs.begin(), set.specs.end(),
                                    [&](const ObservableSpec& s) { return s.label == name; });
    if (!listed)
      throw ConfigError("config: key 'run.verify_conserved' names '" + name +
                        "' which is not in run.monitors");
  }
  for (const auto& spec : set.specs)
    set.monitors.push_back(Monitor{spec.label, build_operator(spec, model, g)});
  return set;
}

struct RunControls {
  bool rk4 = false;
  EvolutionScheme scheme = EvolutionScheme::unitary_midpoint;
  double step_size = 0.0;
  std::int64_t num_steps = 0;
  std::int64_t snapshot_cadence = 0;
};

inline RunControls run_from_config(const RunConfig& cfg) {
  RunControls rc;
  const std::string scheme = detail::cfg_string(cfg.raw, "run.scheme");
  if (scheme == "rk4")
    rc.rk4 = true;
  else if (scheme == "unitary_midpoint")
    rc.scheme = EvolutionScheme::unitary_midpoint;
  else if (scheme == "step_operator_sigma")
    rc.scheme = EvolutionScheme::step_operator_sigma;
  else if (scheme == "step_operator_gamma")
    rc.scheme = EvolutionScheme::step_operator_gamma;
  else if (scheme == "symmetric_alternating")
    rc.scheme = EvolutionScheme::symmetric_alternating;
  else
    throw ConfigError("config: unknown scheme '" + scheme +
                      "' (known: unitary_midpoint, step_operator_sigma, step_operator_gamma, "
                      "symmetric_alternating, rk4)");
  rc.step_size = detail::cfg_number(cfg.raw, "run.step_size");
  if (!(rc.step_size > 0.0)) throw ConfigError("config: key 'run.step_size' must be positive");
  rc.num_steps = detail::cfg_int(cfg.raw, "run.steps");
  if (rc.num_steps < 1) throw ConfigError("config: key 'run.steps' must be at least 1");
  rc.snapshot_cadence = detail::cfg_int_or(cfg.raw, "run.snapshot_cadence", 0);
  if (rc.snapshot_cadence < 0)
    throw ConfigError("config: key 'run.snapshot_cadence' must be non-negative");
  return rc;
}

inline DiscreteAutomaton automaton_from_config(const RunConfig& cfg) {
  const std::int64_t m = detail::cfg_int(cfg.raw, "automaton.states");
  if (m < 1 || m > 4096) throw ConfigError("config: key 'automaton.states' must be in [1, 4096]");
  if (detail::cfg_find(cfg.raw, "automaton.permutation")) {
    const Json& arr = detail::cfg_array(cfg.raw, "automaton.permutation");
    if (arr.size() != static_cast<std::size_t>(m))
      throw ConfigError("config: key 'automaton.permutation' must list " + std::to_string(m) +
                        " successors");
    std::vector<int> update;
    for (const auto& v : arr) {
      if (!v.is_number_integer())
        throw ConfigError("config: key 'automaton.permutation' must hold integers");
      update.push_back(v.get<int>());
    }
    return make_automaton(std::move(update));
  }
  if (detail::cfg_find(cfg.raw, "automaton.cycles")) {
    const Json& arr = detail::cfg_array(cfg.raw, "automaton.cycles");
    std::vector<std::vector<int>> cyc;
    for (const auto& c : arr) {
      if (!c.is_array()) throw ConfigError("config: key 'automaton.cycles' must hold arrays");
      std::vector<int> one;
      for (const auto& v : c) {
        if (!v.is_number_integer())
          throw ConfigError("config: key 'automaton.cycles' must hold integers");
        one.push_back(v.get<int>());
      }
      cyc.push_back(std::move(one));
    }
    return automaton_from_cycles(static_cast<int>(m), cyc);
  }
  throw ConfigError("config: automaton needs 'automaton.permutation' or 'automaton.cycles'");
}

/// Signed amplitudes for the discrete chain; normalized so the squares sum
/// to one.  Falls back to the uniform state.
inline DiscreteWaveFunction discrete_state_from_config(const RunConfig& cfg, int m) {
  DiscreteWaveFunction q;
  if (detail::cfg_find(cfg.raw, "automaton.amplitudes")) {
    q.values = detail::cfg_vector(cfg.raw, "automaton.amplitudes",
                                  static_cast<std::size_t>(m));
  } else {
    q.values.assign(static_cast<std::size_t>(m), 1.0);
  }
  double n2 = 0.0;
  for (double v : q.values) n2 += v * v;
  if (!(n2 > 0.0)) throw ConfigError("config: key 'automaton.amplitudes' must not be all zero");
  const double inv = 1.0 / std::sqrt(n2);
  for (double& v : q.values) v *= inv;
  return q;
}

/// Exact probabilities as [numerator, denominator] pairs, when present.
inline std::optional<std::vector<Rational>> exact_weights_from_config(const RunConfig& cfg,
                                                                      int m) {
  if (!detail::cfg_find(cfg.raw, "automaton.probabilities")) return std::nullopt;
  const Json& arr = detail::cfg_array(cfg.raw, "automaton.probabilities");
  if (arr.size() != static_cast<std::size_t>(m))
    throw ConfigError("config: key 'automaton.probabilities' must list " + std::to_string(m) +
                      " entries");
  std::vector<Rational> w;
  Rational total{0};
  for (const auto& v : arr) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
      throw ConfigError(
          "config: key 'automaton.probabilities' entries must be [numerator, denominator]");
    const auto num = v[0].get<long long>();
    const auto den = v[1].get<long long>();
    if (den <= 0 || num < 0)
      throw ConfigError("config: key 'automaton.probabilities' entries must be non-negative "
                        "with positive denominators");
    w.emplace_back(num, den);
    total += w.back();
  }
  if (total != Rational{1})
    throw ConfigError("config: key 'automaton.probabilities' must sum to exactly 1");
  return w;
}

/// Optional per-state signs attached to exact probabilities.
inline std::vector<int> signs_from_config(const RunConfig& cfg, int m) {
  std::vector<int> signs(static_cast<std::size_t>(m), 1);
  if (!detail::cfg_find(cfg.raw, "automaton.signs")) return signs;
  const Json& arr = detail::cfg_array(cfg.raw, "automaton.signs");
  if (arr.size() != static_cast<std::size_t>(m))
    throw ConfigError("config: key 'automaton.signs' must list " + std::to_string(m) + " entries");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number_integer() || std::abs(arr[i].get<int>()) != 1)
      throw ConfigError("config: key 'automaton.signs' must hold +1 or -1");
    signs[i] = arr[i].get<int>();
  }
  return signs;
}

struct ExtendedSetup {
  CyclicSpace space;
  CycleForce force;
  bool commensurate = false;  // force is an integer shift per step
  int shift_sites = 0;
  std::vector<double> amplitudes;  // normalized initial state on the cycle
  bool include_jacobian = true;
};

inline ExtendedSetup extended_from_config(const RunConfig& cfg) {
  ExtendedSetup setup;
  const std::int64_t m = detail::cfg_int(cfg.raw, "extended.modulus");
  if (m < 2) throw ConfigError("config: key 'extended.modulus' must be at least 2");
  const std::int64_t horizon = detail::cfg_int(cfg.raw, "extended.horizon");
  if (horizon < 1) throw ConfigError("config: key 'extended.horizon' must be at least 1");
  const double eps = detail::cfg_number_or(cfg.raw, "extended.epsilon", 1.0);
  if (!(eps > 0.0)) throw ConfigError("config: key 'extended.epsilon' must be positive");
  setup.space = CyclicSpace{static_cast<int>(m), horizon, eps};

  const std::string type = detail::cfg_string(cfg.raw, "extended.force.type");
  if (type == "shift") {
    setup.shift_sites = static_cast<int>(detail::cfg_int(cfg.raw, "extended.force.sites"));
    setup.force = shift_cycle_force(setup.space, setup.shift_sites);
    setup.commensurate = true;
  } else if (type == "model") {
    const ForceField f = model_from_config(cfg);
    if (f.dim != 1)
      throw ConfigError("config: extended.force.type 'model' needs a one-dimensional model");
    setup.force = sample_cycle_force(f, setup.space);
  } else if (type == "sine") {
    // F(sigma) = mean + amplitude sin(harmonic sigma): smooth and periodic
    // on the cycle, generically incommensurate with the lattice.
    const double mean = detail::cfg_number_or(cfg.raw, "extended.force.mean", 0.0);
    const double amp = detail::cfg_number(cfg.raw, "extended.force.amplitude");
    const std::int64_t hk = detail::cfg_int_or(cfg.raw, "extended.force.harmonic", 1);
    if (hk < 1) throw ConfigError("config: key 'extended.force.harmonic' must be positive");
    setup.force.force.resize(static_cast<std::size_t>(m));
    setup.force.slope.resize(static_cast<std::size_t>(m));
    for (int a = 0; a < m; ++a) {
      const double x = sigma_value(setup.space, a);
      setup.force.force[static_cast<std::size_t>(a)] = mean + amp * std::sin(hk * x);
      setup.force.slope[static_cast<std::size_t>(a)] = amp * hk * std::cos(hk * x);
    }
  } else {
    throw ConfigError("config: unknown extended.force.type '" + type +
                      "' (known: shift, model, sine)");
  }

  if (detail::cfg_find(cfg.raw, "extended.amplitudes")) {
    setup.amplitudes =
        detail::cfg_vector(cfg.raw, "extended.amplitudes", static_cast<std::size_t>(m));
  } else if (detail::cfg_find(cfg.raw, "extended.state")) {
    // q_a = 1 + sum_k cos_k cos(k sigma_a) + sum_k sin_k sin(k sigma_a):
    // a band-limited profile matching the step operators' smoothness needs.
    const auto cosv = detail::cfg_find(cfg.raw, "extended.state.cos")
                          ? detail::cfg_vector(cfg.raw, "extended.state.cos", 0)
                          : std::vector<double>{};
    const auto sinv = detail::cfg_find(cfg.raw, "extended.state.sin")
                          ? detail::cfg_vector(cfg.raw, "extended.state.sin", 0)
                          : std::vector<double>{};
    setup.amplitudes.resize(static_cast<std::size_t>(m));
    for (int a = 0; a < m; ++a) {
      const double x = sigma_value(setup.space, a);
      double v = 1.0;
      for (std::size_t k = 0; k < cosv.size(); ++k) v += cosv[k] * std::cos((k + 1.0) * x);
      for (std::size_t k = 0; k < sinv.size(); ++k) v += sinv[k] * std::sin((k + 1.0) * x);
      setup.amplitudes[static_cast<std::size_t>(a)] = v;
    }
  } else {
    setup.amplitudes.assign(static_cast<std::size_t>(m), 1.0);
  }
  double n2 = 0.0;
  for (double v : setup.amplitudes) n2 += v * v;
  if (!(n2 > 0.0)) throw ConfigError("config: key 'extended.amplitudes' must not be all zero");
  const double inv = 1.0 / std::sqrt(n2);
  for (double& v : setup.amplitudes) v *= inv;

  setup.include_jacobian = detail::cfg_bool_or(cfg.raw, "extended.include_jacobian", true);
  return setup;
}

}  // namespace qtrans
