#pragma once
// Finite-state deterministic dynamics: a permutation update on M states,
// carried by a signed square-root amplitude vector exactly as the continuum
// evolution carries q.  Because one step is a permutation matrix, transport
// of amplitudes and transport of probabilities are the same operation, and
// the full distribution over length-T trajectories stays supported on just
// M paths.  A dense all-paths table and an exact-rational weight mode are
// provided so that equality claims can be checked without float slack.

#include <boost/rational.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtrans/grid.hpp"
#include "qtrans/model.hpp"

namespace qtrans {

using Rational = boost::rational<long long>;

/// Invertible one-step update on states {0, ..., num_states-1}.  update[i]
/// is the successor of state i.  labels, when present, attach a coordinate
/// vector to each state (filled in by automaton_from_flow).
struct DiscreteAutomaton {
  int num_states = 0;
  std::vector<int> update;
  std::vector<std::vector<double>> labels;
};

/// Signed amplitudes q_i with sum q_i^2 = 1 (tolerance 1e-12) at an integer
/// time.  Probabilities are the squares; signs ride along unchanged.
struct DiscreteWaveFunction {
  std::vector<double> values;
  std::int64_t time = 0;
};

/// Distribution over state trajectories (sigma(0), ..., sigma(horizon)).
/// Every trajectory off the deterministic flow has weight zero and is not
/// stored; the support therefore holds at most num_states entries.
struct OverallDistribution {
  struct PathWeight {
    std::vector<int> trajectory;  // length horizon + 1
    double probability = 0.0;
  };
  std::int64_t horizon = 0;
  std::vector<PathWeight> support;
};

/// Same distribution with exact rational weights, for use when the initial
/// probabilities are rational and equalities should hold with no tolerance.
struct ExactDistribution {
  struct PathWeight {
    std::vector<int> trajectory;
    Rational probability;
  };
  std::int64_t horizon = 0;
  std::vector<PathWeight> support;
};

namespace detail {

inline void check_state_count(int num_states) {
  if (num_states <= 0)
    throw std::invalid_argument("automaton: num_states must be positive, got " +
                                std::to_string(num_states));
}

inline void check_unit_weight(const DiscreteAutomaton& a, const DiscreteWaveFunction& q) {
  if (static_cast<int>(q.values.size()) != a.num_states)
    throw std::invalid_argument("automaton: state vector has length " +
                                std::to_string(q.values.size()) + ", expected " +
                                std::to_string(a.num_states));
  double s = 0.0;
  for (double v : q.values) s += v * v;
  if (std::abs(s - 1.0) > 1e-12)
    throw std::invalid_argument("automaton: squared amplitudes sum to " + std::to_string(s) +
                                ", not 1 within 1e-12");
}

}  // namespace detail

/// Build an automaton from an explicit successor table, verifying that it is
/// a bijection.  labels may be empty or one coordinate vector per state.
inline DiscreteAutomaton make_automaton(std::vector<int> update,
                                        std::vector<std::vector<double>> labels = {}) {
  const int m = static_cast<int>(update.size());
  detail::check_state_count(m);
  std::vector<char> hit(update.size(), 0);
  for (int i = 0; i < m; ++i) {
    const int t = update[static_cast<std::size_t>(i)];
    if (t < 0 || t >= m)
      throw std::invalid_argument("automaton: update[" + std::to_string(i) + "] = " +
                                  std::to_string(t) + " is outside [0, " + std::to_string(m) +
                                  ")");
    if (hit[static_cast<std::size_t>(t)])
      throw std::invalid_argument("automaton: state " + std::to_string(t) +
                                  " has two predecessors; the update is not invertible");
    hit[static_cast<std::size_t>(t)] = 1;
  }
  if (!labels.empty()) {
    if (static_cast<int>(labels.size()) != m)
      throw std::invalid_argument("automaton: got " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(m) + " states");
    for (std::size_t i = 1; i < labels.size(); ++i)
      if (labels[i].size() != labels[0].size())
        throw std::invalid_argument("automaton: labels must all have the same length");
  }
  return DiscreteAutomaton{m, std::move(update), std::move(labels)};
}

/// Build an automaton from disjoint cycles over {0, ..., num_states-1}.
/// States not mentioned in any cycle are fixed points.
inline DiscreteAutomaton automaton_from_cycles(int num_states,
                                               const std::vector<std::vector<int>>& cycles) {
  detail::check_state_count(num_states);
  std::vector<int> update(static_cast<std::size_t>(num_states));
  std::iota(update.begin(), update.end(), 0);
  std::vector<char> seen(update.size(), 0);
  for (const auto& cyc : cycles) {
    if (cyc.empty()) throw std::invalid_argument("automaton: empty cycle");
    for (int s : cyc) {
      if (s < 0 || s >= num_states)
        throw std::invalid_argument("automaton: cycle entry " + std::to_string(s) +
                                    " is outside [0, " + std::to_string(num_states) + ")");
      if (seen[static_cast<std::size_t>(s)])
        throw std::invalid_argument("automaton: state " + std::to_string(s) +
                                    " appears in two cycles");
      seen[static_cast<std::size_t>(s)] = 1;
    }
    for (std::size_t k = 0; k < cyc.size(); ++k)
      update[static_cast<std::size_t>(cyc[k])] = cyc[(k + 1) % cyc.size()];
  }
  return make_automaton(std::move(update));
}

/// Canonical cycle decomposition: each cycle starts at its smallest member,
/// cycles ordered by that member.
inline std::vector<std::vector<int>> cycles(const DiscreteAutomaton& a) {
  std::vector<std::vector<int>> out;
  std::vector<char> seen(static_cast<std::size_t>(a.num_states), 0);
  for (int i = 0; i < a.num_states; ++i) {
    if (seen[static_cast<std::size_t>(i)]) continue;
    std::vector<int> cyc;
    int s = i;
    do {
      cyc.push_back(s);
      seen[static_cast<std::size_t>(s)] = 1;
      s = a.update[static_cast<std::size_t>(s)];
    } while (s != i);
    out.push_back(std::move(cyc));
  }
  return out;
}

/// Discretize one explicit-Euler step of dsigma/dt = F(sigma) onto the grid:
/// each site moves to the nearest site of sigma + eps F(sigma), with periodic
/// wrapping.  Rejects maps where two sites land on the same target, since the
/// resulting update would lose probability.  Labels carry the coordinates.
inline DiscreteAutomaton automaton_from_flow(const ForceField& f, const GridPtr& g, double eps) {
  if (!g) throw std::invalid_argument("automaton: null grid");
  if (f.dim != g->dim())
    throw std::invalid_argument("automaton: field dimension " + std::to_string(f.dim) +
                                " does not match grid dimension " + std::to_string(g->dim()));
  const int n = g->points_per_axis();
  const double L = g->half_width();
  const double h = g->spacing();
  const std::size_t total = g->size();
  std::vector<int> update(total, -1);
  std::vector<int> source(total, -1);
  std::vector<std::vector<double>> labels(total);
  double sigma[3], force[3];
  int idx[3];
  for (std::size_t i = 0; i < total; ++i) {
    g->point(i, sigma);
    labels[i].assign(sigma, sigma + f.dim);
    f.eval_force(sigma, force);
    for (int ax = 0; ax < f.dim; ++ax) {
      const double x = sigma[ax] + eps * force[ax];
      long k = std::lround((x + L) / h);
      k %= n;
      if (k < 0) k += n;
      idx[ax] = static_cast<int>(k);
    }
    const std::size_t t = g->flatten(idx);
    if (source[t] >= 0)
      throw std::invalid_argument("automaton: sites " + std::to_string(source[t]) + " and " +
                                  std::to_string(i) + " both map to site " + std::to_string(t) +
                                  "; the discretized flow is not invertible at this step size");
    source[t] = static_cast<int>(i);
    update[i] = static_cast<int>(t);
  }
  return make_automaton(std::move(update), std::move(labels));
}

/// Dense one-step matrix S[update[i], i] = 1 (row-major).  Orthogonal, since
/// the update is a permutation.
inline std::vector<double> step_matrix(const DiscreteAutomaton& a) {
  const auto m = static_cast<std::size_t>(a.num_states);
  std::vector<double> S(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) S[static_cast<std::size_t>(a.update[i]) * m + i] = 1.0;
  return S;
}

/// Advance the amplitudes: q(t+1, update[i]) = q(t, i).  Negative step counts
/// apply the inverse permutation, which exists by construction.
inline DiscreteWaveFunction evolve_discrete(const DiscreteAutomaton& a,
                                            const DiscreteWaveFunction& q, std::int64_t steps) {
  detail::check_unit_weight(a, q);
  DiscreteWaveFunction cur = q;
  std::vector<double> next(q.values.size());
  for (std::int64_t s = 0; s < std::llabs(steps); ++s) {
    if (steps > 0)
      for (int i = 0; i < a.num_states; ++i)
        next[static_cast<std::size_t>(a.update[static_cast<std::size_t>(i)])] =
            cur.values[static_cast<std::size_t>(i)];
    else
      for (int i = 0; i < a.num_states; ++i)
        next[static_cast<std::size_t>(i)] =
            cur.values[static_cast<std::size_t>(a.update[static_cast<std::size_t>(i)])];
    cur.values.swap(next);
  }
  cur.time = q.time + steps;
  return cur;
}

namespace detail {

inline void check_enumeration_budget(const DiscreteAutomaton& a, std::int64_t horizon) {
  if (horizon < 0)
    throw std::invalid_argument("automaton: horizon must be non-negative, got " +
                                std::to_string(horizon));
  if (a.num_states > 4096)
    throw std::invalid_argument("automaton: trajectory table limited to 4096 states, got " +
                                std::to_string(a.num_states));
  if (horizon > 64)
    throw std::invalid_argument("automaton: trajectory table limited to horizon 64, got " +
                                std::to_string(horizon));
}

}  // namespace detail

/// Distribution over trajectories of the next `horizon` steps.  Exactly one
/// trajectory starts at each state i, with probability q_i^2; everything else
/// has weight zero and is omitted.  Normalization is inherited from the state.
inline OverallDistribution overall_distribution(const DiscreteAutomaton& a,
                                                const DiscreteWaveFunction& q,
                                                std::int64_t horizon) {
  detail::check_unit_weight(a, q);
  detail::check_enumeration_budget(a, horizon);
  OverallDistribution d;
  d.horizon = horizon;
  d.support.resize(static_cast<std::size_t>(a.num_states));
  for (int i = 0; i < a.num_states; ++i) {
    auto& pw = d.support[static_cast<std::size_t>(i)];
    pw.trajectory.resize(static_cast<std::size_t>(horizon) + 1);
    int s = i;
    for (std::int64_t t = 0; t <= horizon; ++t) {
      pw.trajectory[static_cast<std::size_t>(t)] = s;
      s = a.update[static_cast<std::size_t>(s)];
    }
    const double v = q.values[static_cast<std::size_t>(i)];
    pw.probability = v * v;
  }
  return d;
}

/// Same support with exact rational weights.  weight_in[i] is the initial
/// probability of state i; the entries must be non-negative and sum to one
/// exactly, and every downstream sum then stays exact.
inline ExactDistribution overall_distribution_exact(const DiscreteAutomaton& a,
                                                    const std::vector<Rational>& weight_in,
                                                    std::int64_t horizon) {
  if (static_cast<int>(weight_in.size()) != a.num_states)
    throw std::invalid_argument("automaton: weight vector has length " +
                                std::to_string(weight_in.size()) + ", expected " +
                                std::to_string(a.num_states));
  Rational z(0);
  for (const auto& w : weight_in) {
    if (w < Rational(0)) throw std::invalid_argument("automaton: negative initial weight");
    z += w;
  }
  if (z != Rational(1))
    throw std::invalid_argument("automaton: initial weights must sum to exactly 1");
  detail::check_enumeration_budget(a, horizon);
  ExactDistribution d;
  d.horizon = horizon;
  d.support.resize(static_cast<std::size_t>(a.num_states));
  for (int i = 0; i < a.num_states; ++i) {
    auto& pw = d.support[static_cast<std::size_t>(i)];
    pw.trajectory.resize(static_cast<std::size_t>(horizon) + 1);
    int s = i;
    for (std::int64_t t = 0; t <= horizon; ++t) {
      pw.trajectory[static_cast<std::size_t>(t)] = s;
      s = a.update[static_cast<std::size_t>(s)];
    }
    pw.probability = weight_in[static_cast<std::size_t>(i)];
  }
  return d;
}

/// Product-form weight of an arbitrary path (sigma_0, ..., sigma_horizon):
/// final amplitude times the chain of one-step matrix elements times the
/// initial amplitude.  Off-flow paths pick up a zero matrix element; on-flow
/// paths reduce to q(sigma_0)^2 because the final amplitude is the initial
/// one transported forward.
inline double path_weight(const DiscreteAutomaton& a, const DiscreteWaveFunction& q,
                          std::int64_t horizon, const std::vector<int>& path) {
  detail::check_unit_weight(a, q);
  if (static_cast<std::int64_t>(path.size()) != horizon + 1)
    throw std::invalid_argument("automaton: path has length " + std::to_string(path.size()) +
                                ", expected " + std::to_string(horizon + 1));
  for (int s : path)
    if (s < 0 || s >= a.num_states)
      throw std::invalid_argument("automaton: path entry " + std::to_string(s) +
                                  " is outside [0, " + std::to_string(a.num_states) + ")");
  double chain = 1.0;
  for (std::int64_t t = 0; t < horizon; ++t)
    if (a.update[static_cast<std::size_t>(path[static_cast<std::size_t>(t)])] !=
        path[static_cast<std::size_t>(t) + 1])
      chain = 0.0;
  const DiscreteWaveFunction qf = evolve_discrete(a, q, horizon);
  return qf.values[static_cast<std::size_t>(path.back())] * chain *
         q.values[static_cast<std::size_t>(path.front())];
}

/// Brute-force table of path_weight over all num_states^(horizon+1) paths.
/// Only for debugging tiny systems; the sparse support plus zero off-flow
/// weights is the production representation.
inline std::vector<OverallDistribution::PathWeight> dense_distribution(
    const DiscreteAutomaton& a, const DiscreteWaveFunction& q, std::int64_t horizon) {
  if (a.num_states > 5 || horizon > 5)
    throw std::invalid_argument(
        "automaton: dense path table limited to num_states <= 5 and horizon <= 5");
  detail::check_unit_weight(a, q);
  const auto len = static_cast<std::size_t>(horizon) + 1;
  std::size_t count = 1;
  for (std::size_t t = 0; t < len; ++t) count *= static_cast<std::size_t>(a.num_states);
  std::vector<OverallDistribution::PathWeight> out;
  out.reserve(count);
  std::vector<int> path(len, 0);
  for (std::size_t flat = 0; flat < count; ++flat) {
    std::size_t rem = flat;
    for (std::size_t t = len; t-- > 0;) {
      path[t] = static_cast<int>(rem % static_cast<std::size_t>(a.num_states));
      rem /= static_cast<std::size_t>(a.num_states);
    }
    out.push_back({path, path_weight(a, q, horizon, path)});
  }
  return out;
}

/// Mean of a trajectory functional under the distribution.  The functional
/// sees the whole path, so multi-time correlations are one lambda away.
inline double expectation_overall(const std::function<double(const std::vector<int>&)>& observable,
                                  const OverallDistribution& d) {
  if (!observable) throw std::invalid_argument("automaton: null observable");
  double s = 0.0;
  for (const auto& pw : d.support) {
    const double v = observable(pw.trajectory);
    if (!std::isfinite(v))
      throw std::invalid_argument("automaton: observable is not defined (non-finite value) on a "
                                  "supported trajectory");
    s += v * pw.probability;
  }
  return s;
}

inline Rational expectation_overall_exact(
    const std::function<Rational(const std::vector<int>&)>& observable,
    const ExactDistribution& d) {
  if (!observable) throw std::invalid_argument("automaton: null observable");
  Rational s(0);
  for (const auto& pw : d.support) s += observable(pw.trajectory) * pw.probability;
  return s;
}

/// Equal-time mean sum_i A_i q_i^2 straight from the amplitudes.  Agrees with
/// lifting A to a single-time trajectory functional, with no trajectory table.
inline double expectation_local(const std::vector<double>& site_values,
                                const DiscreteAutomaton& a, const DiscreteWaveFunction& q) {
  detail::check_unit_weight(a, q);
  if (site_values.size() != q.values.size())
    throw std::invalid_argument("automaton: observable has length " +
                                std::to_string(site_values.size()) + ", expected " +
                                std::to_string(q.values.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < q.values.size(); ++i)
    s += site_values[i] * q.values[i] * q.values[i];
  return s;
}

/// Exact transport of probabilities: w(t+1, update[i]) = w(t, i).
inline std::vector<Rational> evolve_probabilities_exact(const DiscreteAutomaton& a,
                                                        std::vector<Rational> w,
                                                        std::int64_t steps) {
  if (static_cast<int>(w.size()) != a.num_states)
    throw std::invalid_argument("automaton: weight vector has length " + std::to_string(w.size()) +
                                ", expected " + std::to_string(a.num_states));
  std::vector<Rational> next(w.size());
  for (std::int64_t s = 0; s < std::llabs(steps); ++s) {
    if (steps > 0)
      for (int i = 0; i < a.num_states; ++i)
        next[static_cast<std::size_t>(a.update[static_cast<std::size_t>(i)])] =
            w[static_cast<std::size_t>(i)];
    else
      for (int i = 0; i < a.num_states; ++i)
        next[static_cast<std::size_t>(i)] =
            w[static_cast<std::size_t>(a.update[static_cast<std::size_t>(i)])];
    w.swap(next);
  }
  return w;
}

inline Rational expectation_local_exact(const std::vector<Rational>& site_values,
                                        const std::vector<Rational>& w) {
  if (site_values.size() != w.size())
    throw std::invalid_argument("automaton: observable and weights differ in length");
  Rational s(0);
  for (std::size_t i = 0; i < w.size(); ++i) s += site_values[i] * w[i];
  return s;
}

}  // namespace qtrans
