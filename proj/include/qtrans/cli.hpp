#pragma once

// Command implementations behind the qtrans binary.  Each takes a parsed
// config, writes its artifacts under the output directory, and returns the
// process exit code: 0 success, 1 verification failure, 2 bad config or
// usage, 3 numerical abort (partial artifacts are still written).

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "qtrans/automaton.hpp"
#include "qtrans/config.hpp"
#include "qtrans/evolution.hpp"
#include "qtrans/extended.hpp"
#include "qtrans/io.hpp"
#include "qtrans/observables.hpp"
#include "qtrans/operators.hpp"

namespace qtrans {

namespace detail {

inline std::string padded_step_name(const char* stem, std::int64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06lld.qts", stem, static_cast<long long>(step));
  return buf;
}

/// Classical Runge-Kutta driver, mirroring the plan-based loop's norm
/// policy: warn and renormalize past the drift threshold, abort once the
/// accumulated drift is irrecoverable.  The scheme conserves nothing
/// exactly, so it lives here as an opt-in speed/accuracy comparison.
inline EvolutionRecord run_rk4(const ForceField& model, const GridPtr& g, double eps,
                               std::int64_t steps, const std::vector<Monitor>& monitors,
                               std::int64_t cadence, const RealWaveFunction& initial) {
  if (std::abs(norm(initial) - 1.0) > 1e-6)
    throw std::invalid_argument("evolve: initial state is not normalized");
  GridOperator H = hamiltonian(model, g);

  EvolutionRecord rec;
  rec.final_state = initial;
  for (const auto& m : monitors) rec.monitor_labels.push_back(m.label);
  rec.monitor_values.resize(monitors.size());

  constexpr double kWarnDrift = 1e-8;
  constexpr double kAbortDrift = 1e-3;
  constexpr std::size_t kMaxWarnings = 100;
  std::size_t suppressed = 0;
  auto warn = [&](std::string msg) {
    if (rec.warnings.size() < kMaxWarnings)
      rec.warnings.push_back(std::move(msg));
    else
      ++suppressed;
  };
  auto sample = [&](double t, double raw) {
    rec.times.push_back(t);
    rec.norms.push_back(raw);
    for (std::size_t m = 0; m < monitors.size(); ++m)
      rec.monitor_values[m].push_back(expectation(rec.final_state, monitors[m].op).real());
  };
  auto snapshot = [&](std::int64_t step) {
    if (cadence <= 0 || step % cadence != 0) return;
    rec.snapshot_steps.push_back(step);
    rec.snapshots.push_back(rec.final_state);
  };

  sample(initial.time, norm(initial));
  snapshot(0);

  double cum_log = 0.0;
  for (std::int64_t step = 1; step <= steps; ++step) {
    double raw = 1.0;
    try {
      rec.final_state = rk4_step(H, rec.final_state, eps);
      raw = norm(rec.final_state);
    } catch (const std::exception& ex) {
      warn("step " + std::to_string(step) + ": " + ex.what());
      rec.aborted = true;
      break;
    }
    cum_log += std::log(raw);
    if (std::abs(raw - 1.0) > kWarnDrift) {
      warn("step " + std::to_string(step) + ": norm drift " + std::to_string(raw - 1.0) +
           "; renormalized");
      normalize(rec.final_state);
    }
    sample(initial.time + step * eps, raw);
    snapshot(step);
    if (std::abs(cum_log) > kAbortDrift) {
      warn("step " + std::to_string(step) + ": accumulated norm drift |sum log| = " +
           std::to_string(std::abs(cum_log)) + " exceeds " + std::to_string(kAbortDrift) +
           "; aborting");
      rec.aborted = true;
      break;
    }
  }
  if (suppressed > 0) rec.warnings.push_back(std::to_string(suppressed) + " warnings suppressed");
  return rec;
}

}  // namespace detail

inline int cmd_evolve(const RunConfig& cfg, std::ostream& out, bool quiet) {
  const GridPtr g = grid_from_config(cfg);
  const ForceField model = model_from_config(cfg);
  check_model_grid(model, g);
  const RunControls rc = run_from_config(cfg);
  MonitorSet mons = monitors_from_config(cfg, model, g);
  const RealWaveFunction q0 = initial_from_config(cfg, g);
  const ArtifactMeta meta = cfg.meta();

  EvolutionRecord rec;
  if (rc.rk4) {
    rec = detail::run_rk4(model, g, rc.step_size, rc.num_steps, mons.monitors,
                          rc.snapshot_cadence, q0);
  } else {
    const EvolutionPlan plan = make_plan(model, g, rc.step_size, rc.num_steps, rc.scheme,
                                         mons.monitors, rc.snapshot_cadence);
    rec = evolve(plan, q0);
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);

  if (cfg.wants("csv")) write_bytes((dir / "record.csv").string(), record_to_csv(rec, meta));
  if (cfg.wants("json")) {
    Json report;
    if (rec.times.size() >= 2 && !mons.specs.empty()) {
      std::optional<double> tol;
      if (detail::cfg_find(cfg.raw, "run.conservation_tolerance"))
        tol = detail::cfg_number(cfg.raw, "run.conservation_tolerance");
      report = conservation_to_json(conservation_scan(rec, mons.specs, tol), meta);
    } else {
      report = conservation_to_json({}, meta);
    }
    report["scheme"] = rc.rk4 ? "rk4" : scheme_name(rc.scheme);
    report["step_size"] = rc.step_size;
    report["steps_completed"] = rec.times.empty() ? 0 : rec.times.size() - 1;
    report["aborted"] = rec.aborted;
    report["warnings"] = rec.warnings;
    write_json((dir / "conservation.json").string(), report);
  }
  if (cfg.wants("snapshot")) {
    for (std::size_t i = 0; i < rec.snapshot_steps.size(); ++i)
      write_snapshot((dir / detail::padded_step_name("snapshot", rec.snapshot_steps[i])).string(),
                     rec.snapshots[i], meta);
    write_snapshot((dir / "final.qts").string(), rec.final_state, meta);
  }

  if (!quiet) {
    double worst = 0.0;
    for (double n : rec.norms) worst = std::max(worst, std::abs(n - 1.0));
    out << "evolve: " << (rec.times.size() - 1) << " steps, max |norm-1| = "
        << format_double(worst) << "\n";
    for (const auto& w : rec.warnings) out << "warning: " << w << "\n";
    if (rec.aborted) out << "evolve: aborted; partial artifacts in " << cfg.output_dir << "\n";
  }
  return rec.aborted ? 3 : 0;
}

inline int cmd_spectrum(const RunConfig& cfg, std::ostream& out, bool quiet) {
  const GridPtr g = grid_from_config(cfg);
  const ForceField model = model_from_config(cfg);
  check_model_grid(model, g);
  const std::size_t N = g->size();

  const bool iterative = detail::cfg_bool_or(cfg.raw, "run.iterative", false);
  if (N > kDenseLimit && !iterative)
    throw ConfigError("config: grid has " + std::to_string(N) +
                      " points, over the dense-solver cap " + std::to_string(kDenseLimit) +
                      "; set run.iterative = true or coarsen the grid");
  const std::int64_t want = detail::cfg_int_or(cfg.raw, "run.eigenpairs",
                                               std::min<std::int64_t>(16, static_cast<std::int64_t>(N)));
  if (want < 1 || want > static_cast<std::int64_t>(N))
    throw ConfigError("config: key 'run.eigenpairs' must be in [1, " + std::to_string(N) + "]");

  SpectrumOptions opts;
  opts.force_iterative = iterative;
  opts.seed = cfg.seed;
  const std::string target = detail::cfg_string_or(cfg.raw, "run.target", "smallest");
  if (target == "smallest")
    opts.target = SpectrumTarget::SmallestMagnitude;
  else if (target == "largest")
    opts.target = SpectrumTarget::LargestMagnitude;
  else
    throw ConfigError("config: key 'run.target' must be 'smallest' or 'largest'");

  GridOperator gen_op;
  if (!model.generators.empty()) {
    gen_op = symmetry_generator(model.generators.front(), g);
    opts.degeneracy_generator = &gen_op;
  }

  const GridOperator H = hamiltonian(model, g);
  const SpectrumResult sp = spectrum(H, static_cast<std::size_t>(want), opts);

  std::vector<double> angular;
  if (opts.degeneracy_generator) {
    for (const auto& v : sp.eigenvectors) {
      const auto Lv = gen_op.apply(v);
      cplx num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        num += std::conj(v[i]) * Lv[i];
        den += std::norm(v[i]);
      }
      angular.push_back(num.real() / den);
    }
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  const ArtifactMeta meta = cfg.meta();

  if (cfg.wants("csv"))
    write_bytes((dir / "spectrum.csv").string(), spectrum_to_csv(sp, angular, meta));
  if (cfg.wants("snapshot")) {
    const std::int64_t keep =
        std::min<std::int64_t>(detail::cfg_int_or(cfg.raw, "run.eigenvector_snapshots", 4),
                               static_cast<std::int64_t>(sp.eigenvalues.size()));
    for (std::int64_t i = 0; i < keep; ++i) {
      const ComplexWaveFunction phi{g, sp.eigenvectors[static_cast<std::size_t>(i)], 0.0, false};
      write_snapshot((dir / detail::padded_step_name("eigvec", i)).string(), phi, meta);
    }
  }

  const double defect = pairing_defect(sp.eigenvalues);
  const double pair_tol = detail::cfg_number_or(cfg.raw, "run.pairing_tolerance", 1e-10);
  if (!quiet) {
    out << "spectrum: " << sp.eigenvalues.size() << " eigenpairs ("
        << (N <= kDenseLimit && !iterative ? "dense" : "iterative")
        << "), pairing defect = " << format_double(defect)
        << (defect <= pair_tol ? " (paired)" : " (PAIRING VIOLATED)") << "\n";
  }
  return 0;
}

inline int cmd_automaton(const RunConfig& cfg, std::ostream& out, bool quiet) {
  const DiscreteAutomaton a = automaton_from_config(cfg);
  const DiscreteWaveFunction q0 = discrete_state_from_config(cfg, a.num_states);
  const std::int64_t horizon = detail::cfg_int_or(cfg.raw, "automaton.horizon", 8);

  const OverallDistribution dist = overall_distribution(a, q0, horizon);
  const DiscreteWaveFunction qT = evolve_discrete(a, q0, horizon);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  const ArtifactMeta meta = cfg.meta();

  if (cfg.wants("csv")) {
    std::string csv = meta_comment(meta);
    csv += "trajectory,probability\n";
    double total = 0.0;
    for (const auto& pw : dist.support) {
      std::string traj;
      for (std::size_t t = 0; t < pw.trajectory.size(); ++t) {
        if (t) traj += '>';
        traj += std::to_string(pw.trajectory[t]);
      }
      csv += traj;
      csv += ',';
      csv += format_double(pw.probability);
      csv += '\n';
      total += pw.probability;
    }
    write_bytes((dir / "distribution.csv").string(), csv);
    if (!quiet)
      out << "automaton: " << dist.support.size() << " trajectories, total weight = "
          << format_double(total) << "\n";
  }
  if (cfg.wants("csv")) {
    std::string csv = meta_comment(meta);
    csv += "state,amplitude_in,amplitude_out\n";
    for (std::size_t i = 0; i < q0.values.size(); ++i) {
      csv += std::to_string(i);
      csv += ',';
      csv += format_double(q0.values[i]);
      csv += ',';
      csv += format_double(qT.values[i]);
      csv += '\n';
    }
    write_bytes((dir / "amplitudes.csv").string(), csv);
  }
  return 0;
}

namespace detail {

/// Little-endian base-m digits of a path index.
inline void path_digits(std::size_t index, int m, std::int64_t horizon, std::vector<int>& digits) {
  digits.resize(static_cast<std::size_t>(horizon) + 1);
  for (auto& d : digits) {
    d = static_cast<int>(index % static_cast<std::size_t>(m));
    index /= static_cast<std::size_t>(m);
  }
}

inline std::size_t path_index(const std::vector<int>& digits, int m) {
  std::size_t idx = 0;
  for (std::size_t t = digits.size(); t-- > 0;)
    idx = idx * static_cast<std::size_t>(m) + static_cast<std::size_t>(digits[t]);
  return idx;
}

inline std::vector<cplx> apply_step_chain(const std::vector<cplx>& S, int m,
                                          std::vector<cplx> phi, std::int64_t times) {
  std::vector<cplx> next(static_cast<std::size_t>(m));
  for (std::int64_t t = 0; t < times; ++t) {
    for (int to = 0; to < m; ++to) {
      cplx acc = 0.0;
      for (int from = 0; from < m; ++from)
        acc += S[static_cast<std::size_t>(to) * m + from] * phi[static_cast<std::size_t>(from)];
      next[static_cast<std::size_t>(to)] = acc;
    }
    phi = next;
  }
  return phi;
}

inline void check_joint_table_budget(const CyclicSpace& s) {
  double paths = 1.0;
  for (std::int64_t t = 0; t <= s.horizon; ++t) paths *= s.modulus;
  if (paths * paths > 2e6)
    throw ConfigError("config: the joint path table needs " + format_double(paths * paths) +
                      " entries, over the 2000000-entry cap; lower extended.modulus or "
                      "extended.horizon");
}

inline DiscreteAutomaton shift_automaton(int m, int sites) {
  std::vector<int> update(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) update[static_cast<std::size_t>(i)] = ((i + sites) % m + m) % m;
  return make_automaton(std::move(update));
}

}  // namespace detail

inline int cmd_verify(const RunConfig& cfg, std::ostream& out, bool quiet) {
  const double tol = detail::cfg_number_or(cfg.raw, "verify.tolerance", 1e-10);
  const bool corrupt = detail::cfg_bool_or(cfg.raw, "verify.corrupt_step", false);
  Json report{{"config_hash", hash_hex(cfg.hash)}, {"seed", cfg.seed}, {"tolerance", tol}};
  if (corrupt) report["corrupt_step"] = true;
  bool all_pass = true;

  // Part one: the wave rule on a discrete automaton against trajectory
  // enumeration, site observable checked at every time slice.
  if (detail::cfg_find(cfg.raw, "automaton")) {
    const DiscreteAutomaton a = automaton_from_config(cfg);
    const int m = a.num_states;
    const std::int64_t horizon = detail::cfg_int_or(cfg.raw, "automaton.horizon", 8);
    DiscreteAutomaton a_wave = a;
    if (corrupt && m >= 2) {
      std::vector<int> update = a.update;
      std::swap(update[0], update[1]);
      a_wave = make_automaton(std::move(update));
    }

    std::vector<double> site(static_cast<std::size_t>(m));
    std::iota(site.begin(), site.end(), 0.0);
    if (detail::cfg_find(cfg.raw, "verify.observable"))
      site = detail::cfg_vector(cfg.raw, "verify.observable", static_cast<std::size_t>(m));

    Json checks = Json::array();
    double max_residual = 0.0;
    double z_residual = 0.0;
    double min_weight = std::numeric_limits<double>::infinity();
    const auto exact = exact_weights_from_config(cfg, m);
    std::string mode;

    if (exact) {
      mode = "exact";
      std::vector<Rational> site_exact;
      for (int i = 0; i < m; ++i) site_exact.emplace_back(i);
      const ExactDistribution dist = overall_distribution_exact(a, *exact, horizon);
      Rational total{0};
      for (const auto& pw : dist.support) {
        total += pw.probability;
        min_weight = std::min(min_weight, boost::rational_cast<double>(pw.probability));
      }
      z_residual = std::abs(boost::rational_cast<double>(total - Rational{1}));
      for (std::int64_t t = 0; t <= horizon; ++t) {
        const auto wt = evolve_probabilities_exact(a_wave, *exact, t);
        const Rational wave = expectation_local_exact(site_exact, wt);
        const Rational paths = expectation_overall_exact(
            [&](const std::vector<int>& tr) {
              return site_exact[static_cast<std::size_t>(tr[static_cast<std::size_t>(t)])];
            },
            dist);
        const Rational diff = wave - paths;
        const double res = std::abs(boost::rational_cast<double>(diff));
        max_residual = std::max(max_residual, res);
        checks.push_back({{"time", t},
                          {"wave", boost::rational_cast<double>(wave)},
                          {"paths", boost::rational_cast<double>(paths)},
                          {"residual", res},
                          {"exact_match", diff == Rational{0}}});
      }
    } else {
      mode = "float";
      const DiscreteWaveFunction q0 = discrete_state_from_config(cfg, m);
      const OverallDistribution dist = overall_distribution(a, q0, horizon);
      double total = 0.0;
      for (const auto& pw : dist.support) {
        total += pw.probability;
        min_weight = std::min(min_weight, pw.probability);
      }
      z_residual = std::abs(total - 1.0);
      for (std::int64_t t = 0; t <= horizon; ++t) {
        const DiscreteWaveFunction qt = evolve_discrete(a_wave, q0, t);
        const double wave = expectation_local(site, a_wave, qt);
        const double paths = expectation_overall(
            [&](const std::vector<int>& tr) {
              return site[static_cast<std::size_t>(tr[static_cast<std::size_t>(t)])];
            },
            dist);
        const double res = std::abs(wave - paths);
        max_residual = std::max(max_residual, res);
        checks.push_back({{"time", t}, {"wave", wave}, {"paths", paths}, {"residual", res}});
      }
    }

    const bool pass = max_residual <= tol && z_residual <= tol && min_weight >= -tol;
    all_pass = all_pass && pass;
    report["automaton"] = {{"mode", mode},
                           {"states", m},
                           {"horizon", horizon},
                           {"checks", checks},
                           {"max_residual", max_residual},
                           {"z_residual", z_residual},
                           {"min_path_weight", min_weight},
                           {"pass", pass}};
    if (!quiet)
      out << "verify[automaton]: mode=" << mode << " max residual = "
          << format_double(max_residual) << (pass ? " (pass)" : " (FAIL)") << "\n";
  }

  // Part two: the dense joint-path weight on the cyclic space against both
  // step-operator chains and the trajectory picture.
  if (detail::cfg_find(cfg.raw, "extended")) {
    const ExtendedSetup ext = extended_from_config(cfg);
    detail::check_joint_table_budget(ext.space);
    const int m = ext.space.modulus;
    const std::int64_t horizon = ext.space.horizon;

    std::vector<double> q_in = ext.amplitudes;
    std::vector<double> q_f = q_in;
    DiscreteAutomaton shift = detail::shift_automaton(m, ext.shift_sites);
    if (ext.commensurate)
      q_f = evolve_discrete(shift, DiscreteWaveFunction{q_in, 0}, horizon).values;

    const ExtendedWeight w =
        extended_weight(ext.space, q_in, q_f, ext.force, ext.include_jacobian);

    const auto S = cycle_step_matrix(ext.space, ext.force, ext.include_jacobian);
    std::vector<cplx> phi(q_in.begin(), q_in.end());
    phi = detail::apply_step_chain(S, m, std::move(phi), horizon);
    cplx z = 0.0;
    for (int i = 0; i < m; ++i) z += q_f[static_cast<std::size_t>(i)] * phi[static_cast<std::size_t>(i)];
    const double total_residual = std::abs(weight_total(w) - z);

    double sigma_residual = -1.0;
    double min_sigma_weight = 0.0;
    if (ext.commensurate) {
      const auto ms = marginal_sigma(w);
      const OverallDistribution dist =
          overall_distribution(shift, DiscreteWaveFunction{q_in, 0}, horizon);
      std::vector<double> expected(ms.size(), 0.0);
      for (const auto& pw : dist.support)
        expected[detail::path_index(pw.trajectory, m)] = pw.probability;
      sigma_residual = 0.0;
      min_sigma_weight = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < ms.size(); ++i) {
        sigma_residual = std::max(sigma_residual, std::abs(ms[i] - expected[i]));
        min_sigma_weight = std::min(min_sigma_weight, ms[i]);
      }
    }

    const auto Sg = gamma_step_matrix(ext.space, ext.force, ext.include_jacobian);
    const auto psi_in = momentum_state(ext.space, q_in);
    const auto psi_f = momentum_state(ext.space, q_f);
    const auto mg = marginal_gamma(w);
    double gamma_residual = 0.0;
    std::vector<int> digits;
    for (std::size_t p = 0; p < mg.size(); ++p) {
      detail::path_digits(p, m, horizon, digits);
      cplx chain = psi_in[static_cast<std::size_t>(digits[0])];
      for (std::int64_t t = 0; t < horizon; ++t)
        chain *= Sg[static_cast<std::size_t>(digits[static_cast<std::size_t>(t) + 1]) * m +
                    digits[static_cast<std::size_t>(t)]];
      chain *= std::conj(psi_f[static_cast<std::size_t>(digits.back())]);
      gamma_residual = std::max(gamma_residual, std::abs(mg[p] - chain));
    }

    const bool pass = total_residual <= tol && gamma_residual <= tol &&
                      (!ext.commensurate || (sigma_residual <= tol && min_sigma_weight >= -tol));
    all_pass = all_pass && pass;
    Json ej{{"modulus", m},
            {"horizon", horizon},
            {"include_jacobian", ext.include_jacobian},
            {"weight_total", {weight_total(w).real(), weight_total(w).imag()}},
            {"weight_total_residual", total_residual},
            {"gamma_marginal_residual", gamma_residual},
            {"pass", pass}};
    if (ext.commensurate) {
      ej["sigma_marginal_residual"] = sigma_residual;
      ej["min_sigma_path_weight"] = min_sigma_weight;
    }
    report["extended"] = ej;
    if (!quiet)
      out << "verify[extended]: weight residual = " << format_double(total_residual)
          << ", gamma residual = " << format_double(gamma_residual)
          << (pass ? " (pass)" : " (FAIL)") << "\n";
  }

  report["pass"] = all_pass;
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  write_json((fs::path(cfg.output_dir) / "verify.json").string(), report);
  if (!quiet) out << "verify: " << (all_pass ? "pass" : "FAIL") << "\n";
  return all_pass ? 0 : 1;
}

inline int cmd_extended(const RunConfig& cfg, std::ostream& out, bool quiet) {
  const ExtendedSetup ext = extended_from_config(cfg);
  const int m = ext.space.modulus;
  const std::int64_t horizon = ext.space.horizon;
  const ArtifactMeta meta = cfg.meta();

  std::vector<double> q_in = ext.amplitudes;
  std::vector<double> q_f = q_in;
  if (ext.commensurate)
    q_f = evolve_discrete(detail::shift_automaton(m, ext.shift_sites),
                          DiscreteWaveFunction{q_in, 0}, horizon)
              .values;

  // Step-operator norm defects are cheap and independent of the joint table;
  // without the volume factor a compressing force visibly leaks weight.
  const auto step_norm = [&](bool jacobian) {
    const auto S = cycle_step_matrix(ext.space, ext.force, jacobian);
    std::vector<cplx> phi(q_in.begin(), q_in.end());
    phi = detail::apply_step_chain(S, m, std::move(phi), 1);
    double n2 = 0.0;
    for (const cplx& v : phi) n2 += std::norm(v);
    return std::sqrt(n2);
  };
  const double defect_with = std::abs(step_norm(true) - 1.0);
  const double defect_without = std::abs(step_norm(false) - 1.0);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);

  Json report{{"config_hash", hash_hex(cfg.hash)},
              {"seed", cfg.seed},
              {"modulus", m},
              {"horizon", horizon},
              {"include_jacobian", ext.include_jacobian},
              {"step_norm_defect_with_jacobian", defect_with},
              {"step_norm_defect_without_jacobian", defect_without}};

  double paths = 1.0;
  for (std::int64_t t = 0; t <= horizon; ++t) paths *= m;
  const bool table_fits = m <= 4 && paths * paths <= 2e6;
  report["joint_table_written"] = table_fits && cfg.wants("csv");

  if (table_fits) {
    const ExtendedWeight w =
        extended_weight(ext.space, q_in, q_f, ext.force, ext.include_jacobian);
    const cplx total = weight_total(w);
    report["weight_total"] = {total.real(), total.imag()};

    const auto raw = marginal_sigma_raw(w);
    double max_imag = 0.0;
    for (const cplx& v : raw) max_imag = std::max(max_imag, std::abs(v.imag()));
    report["sigma_marginal_max_imag"] = max_imag;

    if (cfg.wants("csv")) {
      std::string csv = meta_comment(meta);
      csv += "sigma_path,gamma_path,re,im\n";
      std::vector<int> digits;
      const auto P = w.paths_per_sector;
      for (std::size_t sp = 0; sp < P; ++sp) {
        detail::path_digits(sp, m, horizon, digits);
        std::string spath;
        for (std::size_t t = 0; t < digits.size(); ++t) {
          if (t) spath += '>';
          spath += std::to_string(digits[t]);
        }
        for (std::size_t gp = 0; gp < P; ++gp) {
          detail::path_digits(gp, m, horizon, digits);
          std::string gpath;
          for (std::size_t t = 0; t < digits.size(); ++t) {
            if (t) gpath += '>';
            gpath += std::to_string(digits[t]);
          }
          const cplx v = w.weights[sp * P + gp];
          csv += spath;
          csv += ',';
          csv += gpath;
          csv += ',';
          csv += format_double(v.real());
          csv += ',';
          csv += format_double(v.imag());
          csv += '\n';
        }
      }
      write_bytes((dir / "paths.csv").string(), csv);
    }
    if (cfg.wants("csv")) {
      std::string csv = meta_comment(meta);
      csv += "sigma_path,re,im\n";
      std::vector<int> digits;
      for (std::size_t i = 0; i < raw.size(); ++i) {
        detail::path_digits(i, m, horizon, digits);
        std::string spath;
        for (std::size_t t = 0; t < digits.size(); ++t) {
          if (t) spath += '>';
          spath += std::to_string(digits[t]);
        }
        csv += spath;
        csv += ',';
        csv += format_double(raw[i].real());
        csv += ',';
        csv += format_double(raw[i].imag());
        csv += '\n';
      }
      write_bytes((dir / "sigma_marginal.csv").string(), csv);
    }
  }

  write_json((dir / "extended.json").string(), report);
  if (!quiet)
    out << "extended: step norm defect " << format_double(defect_with) << " (with volume factor) vs "
        << format_double(defect_without) << " (without)\n";
  return 0;
}

}  // namespace qtrans
