#pragma once
// Joint (configuration, momentum) weight distribution on a finite cycle.
// States sit at sigma_a = 2*pi*a/M and the dual label takes the integer
// values gamma_g = g, so every Fourier sum is an exact finite sum and the
// identities relating the joint weight, its two marginals, and the
// step-operator chains hold to round-off instead of quadrature error.
//
// Conventions used throughout: sums over configurations are plain sums,
// every sum over a dual label carries a factor 1/M.  With that split the
// dual sums collapse to Kronecker deltas, one joint path table reproduces
// both the classical chain (marginal over gamma) and the momentum chain
// (marginal over sigma), and the total weight is the classical overlap.

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtrans/grid.hpp"
#include "qtrans/model.hpp"

namespace qtrans {

/// Finite arena for joint-path weights: M states on a circle, integer dual
/// labels, a path horizon of `horizon` steps of nominal size epsilon.
struct CyclicSpace {
  int modulus = 0;
  std::int64_t horizon = 0;
  double epsilon = 1.0;
};

inline double sigma_value(const CyclicSpace& s, int a) {
  return 2.0 * M_PI * a / s.modulus;
}

/// Dual label value for index g.  Any complete residue system mod M gives
/// the same exact sums on lattice points; the centered choice makes the
/// off-lattice kernel the symmetric trigonometric one, which is what keeps
/// smooth states intact under incommensurate transport.
inline double gamma_value(const CyclicSpace& s, int g) {
  return static_cast<double>(2 * g > s.modulus ? g - s.modulus : g);
}

/// Transport data sampled on the cycle: force and its derivative per state.
struct CycleForce {
  std::vector<double> force;
  std::vector<double> slope;
};

/// Complex amplitudes over (state, dual) pairs, flat index a*M + g.
struct ExtendedWaveFunction {
  std::vector<cplx> values;
  std::int64_t time = 0;
};

/// Dense table of joint-path weights.  Paths are encoded little-endian in
/// base M: digit t of a path index is the label at step t.  The weight at
/// (sigma_path sp, gamma_path gp) sits at sp * paths_per_sector + gp and
/// already includes the 1/M dual-measure factors, so the plain sum of the
/// table is the total weight.
struct ExtendedWeight {
  CyclicSpace space;
  std::size_t paths_per_sector = 0;  // M^(horizon+1)
  std::vector<cplx> weights;
};

namespace detail {

inline void check_cycle(const CyclicSpace& s) {
  if (s.modulus <= 0)
    throw std::invalid_argument("cycle: modulus must be positive, got " +
                                std::to_string(s.modulus));
  if (s.horizon < 0)
    throw std::invalid_argument("cycle: horizon must be non-negative, got " +
                                std::to_string(s.horizon));
  if (!(s.epsilon > 0.0)) throw std::invalid_argument("cycle: epsilon must be positive");
}

inline void check_cycle_force(const CyclicSpace& s, const CycleForce& f) {
  if (static_cast<int>(f.force.size()) != s.modulus ||
      static_cast<int>(f.slope.size()) != s.modulus)
    throw std::invalid_argument("cycle: force table has " + std::to_string(f.force.size()) +
                                "/" + std::to_string(f.slope.size()) + " entries, expected " +
                                std::to_string(s.modulus));
}

inline void check_state_vector(const CyclicSpace& s, const std::vector<double>& q,
                               const char* what) {
  if (static_cast<int>(q.size()) != s.modulus)
    throw std::invalid_argument(std::string("cycle: ") + what + " has length " +
                                std::to_string(q.size()) + ", expected " +
                                std::to_string(s.modulus));
}

/// sqrt(det(1 - eps * slope)) in one dimension; the volume factor a single
/// transport step applies at this state.
inline double volume_factor(double eps, double slope) {
  const double det = 1.0 - eps * slope;
  if (!(det > 0.0))
    throw std::domain_error("cycle: 1 - eps*dF/dsigma = " + std::to_string(det) +
                            " is not positive; the step map is not invertible");
  return std::sqrt(det);
}

/// Paths per sector, M^(horizon+1), rejected once the joint table
/// (its square) would pass 2e6 entries; 1414^2 is the last size under it.
inline std::size_t checked_sector(const CyclicSpace& s) {
  std::size_t n = 1;
  for (std::int64_t t = 0; t <= s.horizon; ++t) {
    n *= static_cast<std::size_t>(s.modulus);
    if (n > 1414)
      throw std::invalid_argument(
          "cycle: dense joint-path table would exceed the 2000000-entry cap; "
          "use the step-operator chains instead");
  }
  return n;
}

inline int path_digit(const CyclicSpace& s, std::size_t path, std::int64_t t) {
  for (std::int64_t k = 0; k < t; ++k) path /= static_cast<std::size_t>(s.modulus);
  return static_cast<int>(path % static_cast<std::size_t>(s.modulus));
}

inline double det_1m(const std::vector<double>& J, double eps, int dim) {
  double A[9];
  for (int i = 0; i < dim * dim; ++i) A[i] = -eps * J[static_cast<std::size_t>(i)];
  for (int i = 0; i < dim; ++i) A[i * dim + i] += 1.0;
  if (dim == 1) return A[0];
  if (dim == 2) return A[0] * A[3] - A[1] * A[2];
  return A[0] * (A[4] * A[8] - A[5] * A[7]) - A[1] * (A[3] * A[8] - A[5] * A[6]) +
         A[2] * (A[3] * A[7] - A[4] * A[6]);
}

}  // namespace detail

/// Sample a one-dimensional field and its derivative at the cycle states.
inline CycleForce sample_cycle_force(const ForceField& f, const CyclicSpace& s) {
  detail::check_cycle(s);
  if (f.dim != 1)
    throw std::invalid_argument("cycle: need a one-dimensional field, got dim " +
                                std::to_string(f.dim));
  CycleForce out;
  out.force.resize(static_cast<std::size_t>(s.modulus));
  out.slope.resize(static_cast<std::size_t>(s.modulus));
  for (int a = 0; a < s.modulus; ++a) {
    const double x = sigma_value(s, a);
    f.eval_force(&x, &out.force[static_cast<std::size_t>(a)]);
    f.eval_jacobian(&x, &out.slope[static_cast<std::size_t>(a)]);
  }
  return out;
}

/// Constant drift moving every state by `sites` lattice positions per step:
/// eps * F = 2*pi*sites/M, slope zero, so the one-step kernel is an exact
/// permutation delta.
inline CycleForce shift_cycle_force(const CyclicSpace& s, int sites) {
  detail::check_cycle(s);
  const double f = 2.0 * M_PI * sites / (s.modulus * s.epsilon);
  return CycleForce{std::vector<double>(static_cast<std::size_t>(s.modulus), f),
                    std::vector<double>(static_cast<std::size_t>(s.modulus), 0.0)};
}

/// Transport action for one sampled joint path in ordinary coordinates:
///   S = -sum_t [ sigma(t+1).(gamma(t+1)-gamma(t)) + eps F(sigma(t+1)).gamma(t) ]
///       - sum_t (i/2) ln det(1 - eps dF(sigma(t+1))) .
/// The last (volume) term is the only imaginary contribution; dropping it
/// (include_jacobian = false) reproduces the common approximation whose
/// norm violation the tests quantify.
inline cplx path_action(const ForceField& f, const std::vector<std::vector<double>>& sigma,
                        const std::vector<std::vector<double>>& gamma, double eps,
                        bool include_jacobian = true) {
  if (sigma.size() != gamma.size() || sigma.size() < 2)
    throw std::invalid_argument("path_action: need equally long paths with at least two samples");
  const int dim = f.dim;
  for (const auto& p : sigma)
    if (static_cast<int>(p.size()) != dim)
      throw std::invalid_argument("path_action: configuration sample has wrong dimension");
  for (const auto& p : gamma)
    if (static_cast<int>(p.size()) != dim)
      throw std::invalid_argument("path_action: momentum sample has wrong dimension");
  double real_part = 0.0;
  double log_det_sum = 0.0;
  std::vector<double> F(static_cast<std::size_t>(dim));
  std::vector<double> J(static_cast<std::size_t>(dim) * dim);
  for (std::size_t t = 0; t + 1 < sigma.size(); ++t) {
    const auto& sn = sigma[t + 1];
    f.eval_force(sn.data(), F.data());
    double kin = 0.0, frc = 0.0;
    for (int k = 0; k < dim; ++k) {
      kin += sn[static_cast<std::size_t>(k)] *
             (gamma[t + 1][static_cast<std::size_t>(k)] - gamma[t][static_cast<std::size_t>(k)]);
      frc += F[static_cast<std::size_t>(k)] * gamma[t][static_cast<std::size_t>(k)];
    }
    real_part -= kin + eps * frc;
    if (include_jacobian) {
      f.eval_jacobian(sn.data(), J.data());
      const double det = detail::det_1m(J, eps, dim);
      if (!(det > 0.0))
        throw std::domain_error("path_action: det(1 - eps dF/dsigma) = " + std::to_string(det) +
                                " is not positive along the path");
      log_det_sum += std::log(det);
    }
  }
  // -sum eps*Delta with Delta = (i/2 eps) ln det: purely imaginary, and
  // exp(iS) then carries the real damping factor prod sqrt(det).
  return {real_part, -0.5 * log_det_sum};
}

/// Same action on cycle index paths, with the force read from the sampled
/// table.  Paths have horizon+1 entries.
inline cplx action_SM(const CyclicSpace& s, const std::vector<int>& sigma_path,
                      const std::vector<int>& gamma_path, const CycleForce& f,
                      bool include_jacobian = true) {
  detail::check_cycle(s);
  detail::check_cycle_force(s, f);
  const auto len = static_cast<std::size_t>(s.horizon) + 1;
  if (sigma_path.size() != len || gamma_path.size() != len)
    throw std::invalid_argument("action: paths must have horizon+1 = " + std::to_string(len) +
                                " entries");
  for (std::size_t t = 0; t < len; ++t)
    if (sigma_path[t] < 0 || sigma_path[t] >= s.modulus || gamma_path[t] < 0 ||
        gamma_path[t] >= s.modulus)
      throw std::invalid_argument("action: path entry outside [0, modulus)");
  double real_part = 0.0;
  double log_det_sum = 0.0;
  for (std::size_t t = 0; t + 1 < len; ++t) {
    const int an = sigma_path[t + 1];
    const double sn = sigma_value(s, an);
    real_part -= sn * (gamma_value(s, gamma_path[t + 1]) - gamma_value(s, gamma_path[t])) +
                 s.epsilon * f.force[static_cast<std::size_t>(an)] * gamma_value(s, gamma_path[t]);
    if (include_jacobian) {
      const double v = detail::volume_factor(s.epsilon, f.slope[static_cast<std::size_t>(an)]);
      log_det_sum += 2.0 * std::log(v);
    }
  }
  return {real_part, -0.5 * log_det_sum};
}

/// psi(g) = sum_a exp(-i sigma_a g) q(a): the plain-sum dual transform of a
/// classical state.
inline std::vector<cplx> momentum_state(const CyclicSpace& s, const std::vector<double>& q) {
  detail::check_cycle(s);
  detail::check_state_vector(s, q, "state");
  std::vector<cplx> psi(static_cast<std::size_t>(s.modulus));
  for (int g = 0; g < s.modulus; ++g) {
    cplx acc = 0.0;
    for (int a = 0; a < s.modulus; ++a)
      acc += q[static_cast<std::size_t>(a)] *
             std::polar(1.0, -sigma_value(s, a) * gamma_value(s, g));
    psi[static_cast<std::size_t>(g)] = acc;
  }
  return psi;
}

/// One-step kernel in the configuration basis, row-major S[a'*M + a]:
/// the averaged dual phase (1/M) sum_g exp(ig(sigma_a' - eps F(a') - sigma_a))
/// times the volume factor at the destination.  When eps*F moves states by
/// whole lattice spacings this collapses to a permutation matrix.
inline std::vector<cplx> cycle_step_matrix(const CyclicSpace& s, const CycleForce& f,
                                           bool include_jacobian = true) {
  detail::check_cycle(s);
  detail::check_cycle_force(s, f);
  const auto m = static_cast<std::size_t>(s.modulus);
  std::vector<cplx> S(m * m);
  for (std::size_t ap = 0; ap < m; ++ap) {
    const double dest = sigma_value(s, static_cast<int>(ap)) - s.epsilon * f.force[ap];
    const double vol = include_jacobian ? detail::volume_factor(s.epsilon, f.slope[ap]) : 1.0;
    for (std::size_t a = 0; a < m; ++a) {
      const double x = dest - sigma_value(s, static_cast<int>(a));
      cplx acc = 0.0;
      for (int g = 0; g < s.modulus; ++g) acc += std::polar(1.0, gamma_value(s, g) * x);
      S[ap * m + a] = vol * acc / static_cast<double>(s.modulus);
    }
  }
  return S;
}

/// One-step kernel in the dual basis, row-major S[g'*M + g]:
/// sum_a exp(-i sigma_a (g'-g)) exp(-i eps F(a) g) times the volume factor.
/// Equals the dual transform of cycle_step_matrix conjugated slot by slot.
inline std::vector<cplx> gamma_step_matrix(const CyclicSpace& s, const CycleForce& f,
                                           bool include_jacobian = true) {
  detail::check_cycle(s);
  detail::check_cycle_force(s, f);
  const auto m = static_cast<std::size_t>(s.modulus);
  std::vector<cplx> S(m * m);
  for (std::size_t gp = 0; gp < m; ++gp)
    for (std::size_t g = 0; g < m; ++g) {
      cplx acc = 0.0;
      for (std::size_t a = 0; a < m; ++a) {
        const double vol =
            include_jacobian ? detail::volume_factor(s.epsilon, f.slope[a]) : 1.0;
        acc += vol * std::polar(1.0, -sigma_value(s, static_cast<int>(a)) *
                                             (gamma_value(s, static_cast<int>(gp)) -
                                              gamma_value(s, static_cast<int>(g))) -
                                         s.epsilon * f.force[a] *
                                             gamma_value(s, static_cast<int>(g)));
      }
      S[gp * m + g] = acc;
    }
  return S;
}

/// phi(sigma, gamma) = exp(-i sigma gamma) q(sigma): the joint-boundary form
/// of a classical state.
inline ExtendedWaveFunction extended_from_classical(const CyclicSpace& s,
                                                    const std::vector<double>& q,
                                                    std::int64_t time = 0) {
  detail::check_cycle(s);
  detail::check_state_vector(s, q, "state");
  const auto m = static_cast<std::size_t>(s.modulus);
  ExtendedWaveFunction phi;
  phi.time = time;
  phi.values.resize(m * m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t g = 0; g < m; ++g)
      phi.values[a * m + g] =
          q[a] * std::polar(1.0, -sigma_value(s, static_cast<int>(a)) *
                                     gamma_value(s, static_cast<int>(g)));
  return phi;
}

/// Inverse of the factorized embedding: (1/M) sum_g exp(+i sigma gamma) phi.
inline std::vector<double> classical_from_extended(const CyclicSpace& s,
                                                   const ExtendedWaveFunction& phi) {
  detail::check_cycle(s);
  const auto m = static_cast<std::size_t>(s.modulus);
  if (phi.values.size() != m * m)
    throw std::invalid_argument("cycle: extended state has wrong size");
  std::vector<double> q(m);
  for (std::size_t a = 0; a < m; ++a) {
    cplx acc = 0.0;
    for (std::size_t g = 0; g < m; ++g)
      acc += phi.values[a * m + g] * std::polar(1.0, sigma_value(s, static_cast<int>(a)) *
                                                         gamma_value(s, static_cast<int>(g)));
    q[a] = (acc / static_cast<double>(s.modulus)).real();
  }
  return q;
}

/// Time-local joint probabilities (1/M) |phi|^2; they sum to one for a unit
/// classical state because each dual column repeats q(a)^2.
inline std::vector<double> extended_probabilities(const CyclicSpace& s,
                                                  const ExtendedWaveFunction& phi) {
  detail::check_cycle(s);
  const auto m = static_cast<std::size_t>(s.modulus);
  if (phi.values.size() != m * m)
    throw std::invalid_argument("cycle: extended state has wrong size");
  std::vector<double> w(m * m);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = std::norm(phi.values[i]) / static_cast<double>(s.modulus);
  return w;
}

/// Inner product with the 1/M dual measure.
inline cplx extended_inner(const CyclicSpace& s, const ExtendedWaveFunction& a,
                           const ExtendedWaveFunction& b) {
  const auto m = static_cast<std::size_t>(s.modulus);
  if (a.values.size() != m * m || b.values.size() != m * m)
    throw std::invalid_argument("cycle: extended state has wrong size");
  cplx acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) acc += std::conj(a.values[i]) * b.values[i];
  return acc / static_cast<double>(s.modulus);
}

/// One step of the joint evolution.  The kernel couples the input only
/// through its dual profile chi(g) = sum_sigma phi(sigma, g); the output is
/// exp(-i sigma' gamma') times the volume factor times the dual average of
/// chi at the displaced point sigma' - eps F(sigma').  Factorized states
/// stay factorized with the classical part advanced by the one-step kernel.
inline ExtendedWaveFunction extended_step(const CyclicSpace& s, const ExtendedWaveFunction& phi,
                                          const CycleForce& f, bool include_jacobian = true) {
  detail::check_cycle(s);
  detail::check_cycle_force(s, f);
  const auto m = static_cast<std::size_t>(s.modulus);
  if (phi.values.size() != m * m)
    throw std::invalid_argument("cycle: extended state has wrong size");
  std::vector<cplx> chi(m, 0.0);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t g = 0; g < m; ++g) chi[g] += phi.values[a * m + g];
  ExtendedWaveFunction out;
  out.time = phi.time + 1;
  out.values.resize(m * m);
  for (std::size_t ap = 0; ap < m; ++ap) {
    const double dest = sigma_value(s, static_cast<int>(ap)) - s.epsilon * f.force[ap];
    const double vol = include_jacobian ? detail::volume_factor(s.epsilon, f.slope[ap]) : 1.0;
    cplx interp = 0.0;
    for (std::size_t g = 0; g < m; ++g)
      interp += chi[g] * std::polar(1.0, gamma_value(s, static_cast<int>(g)) * dest);
    interp *= vol / static_cast<double>(s.modulus);
    for (std::size_t gp = 0; gp < m; ++gp)
      out.values[ap * m + gp] =
          interp * std::polar(1.0, -sigma_value(s, static_cast<int>(ap)) *
                                       gamma_value(s, static_cast<int>(gp)));
  }
  return out;
}

/// Dense joint-path table.  Boundary data: q_in enters as the factorized
/// phi at the first slice; q_f enters through its dual transform attached
/// to the last dual label, which is what the plain sum over one extra final
/// configuration slice produces.  Entries include the 1/M dual measure, so
/// plain sums of the table are totals.
inline ExtendedWeight extended_weight(const CyclicSpace& s, const std::vector<double>& q_in,
                                      const std::vector<double>& q_f, const CycleForce& f,
                                      bool include_jacobian = true) {
  detail::check_cycle(s);
  detail::check_cycle_force(s, f);
  detail::check_state_vector(s, q_in, "initial state");
  detail::check_state_vector(s, q_f, "final state");
  const std::size_t sector = detail::checked_sector(s);
  const auto m = static_cast<std::size_t>(s.modulus);
  const auto T = s.horizon;
  const auto psi_f = momentum_state(s, q_f);

  double dual_measure = 1.0;
  for (std::int64_t t = 0; t <= T; ++t) dual_measure /= static_cast<double>(m);

  ExtendedWeight w;
  w.space = s;
  w.paths_per_sector = sector;
  w.weights.assign(sector * sector, cplx(0.0, 0.0));

  std::vector<int> digits(static_cast<std::size_t>(T) + 1);
  std::vector<double> coeff(static_cast<std::size_t>(T));  // dual coupling per step
  for (std::size_t sp = 0; sp < sector; ++sp) {
    std::size_t rem = sp;
    for (std::int64_t t = 0; t <= T; ++t) {
      digits[static_cast<std::size_t>(t)] = static_cast<int>(rem % m);
      rem /= m;
    }
    double amp = q_in[static_cast<std::size_t>(digits[0])] * dual_measure;
    for (std::int64_t t = 0; t < T; ++t) {
      const auto an = static_cast<std::size_t>(digits[static_cast<std::size_t>(t) + 1]);
      if (include_jacobian) amp *= detail::volume_factor(s.epsilon, f.slope[an]);
      coeff[static_cast<std::size_t>(t)] =
          sigma_value(s, static_cast<int>(an)) - s.epsilon * f.force[an] -
          sigma_value(s, digits[static_cast<std::size_t>(t)]);
    }
    const double sig_last = sigma_value(s, digits[static_cast<std::size_t>(T)]);
    if (amp == 0.0) continue;
    for (std::size_t gp = 0; gp < sector; ++gp) {
      double phase = 0.0;
      std::size_t grem = gp;
      int g_t = 0;
      for (std::int64_t t = 0; t <= T; ++t) {
        g_t = static_cast<int>(grem % m);
        grem /= m;
        if (t < T) phase += coeff[static_cast<std::size_t>(t)] * gamma_value(s, g_t);
      }
      // g_t now holds the final dual label; attach the boundary transform
      // sum_a q_f(a) exp(+i sigma_a g), the conjugate of the dual state.
      w.weights[sp * sector + gp] = amp * std::polar(1.0, phase - sig_last * gamma_value(s, g_t)) *
                                    std::conj(psi_f[static_cast<std::size_t>(g_t)]);
    }
  }
  return w;
}

/// Plain sum of the table: the total weight (the classical overlap of the
/// transported initial state with the supplied final state).
inline cplx weight_total(const ExtendedWeight& w) {
  cplx z = 0.0;
  for (const cplx& v : w.weights) z += v;
  return z;
}

/// Marginal over all dual paths without any reality check.
inline std::vector<cplx> marginal_sigma_raw(const ExtendedWeight& w) {
  std::vector<cplx> out(w.paths_per_sector, cplx(0.0, 0.0));
  for (std::size_t sp = 0; sp < w.paths_per_sector; ++sp) {
    cplx acc = 0.0;
    for (std::size_t gp = 0; gp < w.paths_per_sector; ++gp)
      acc += w.weights[sp * w.paths_per_sector + gp];
    out[sp] = acc;
  }
  return out;
}

/// Marginal over dual paths, asserted real: the classical trajectory
/// weights.  For lattice-commensurate transport the dual sums are exact
/// deltas and the result matches the finite-state trajectory distribution;
/// an imaginary residue above 1e-10 means the dynamics is not commensurate
/// and the marginal is not a probability, which is reported as an error.
inline std::vector<double> marginal_sigma(const ExtendedWeight& w) {
  const auto raw = marginal_sigma_raw(w);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (std::abs(raw[i].imag()) > 1e-10)
      throw std::runtime_error(
          "cycle: trajectory marginal has imaginary residue " + std::to_string(raw[i].imag()) +
          "; the transport is not compatible with a real path distribution");
    out[i] = raw[i].real();
  }
  return out;
}

/// Marginal over configuration paths, returned in the plain-sum chain
/// normalization: entry [gamma-path] equals psi_f^*(g_T) times the product
/// of dual-basis step matrix elements along the path times psi_in(g_0).
inline std::vector<cplx> marginal_gamma(const ExtendedWeight& w) {
  double scale = 1.0;
  for (std::int64_t t = 0; t <= w.space.horizon; ++t)
    scale *= static_cast<double>(w.space.modulus);
  std::vector<cplx> out(w.paths_per_sector, cplx(0.0, 0.0));
  for (std::size_t gp = 0; gp < w.paths_per_sector; ++gp) {
    cplx acc = 0.0;
    for (std::size_t sp = 0; sp < w.paths_per_sector; ++sp)
      acc += w.weights[sp * w.paths_per_sector + gp];
    out[gp] = acc * scale;
  }
  return out;
}

/// Product of time-local factors: each factor multiplies the weight of a
/// joint path by values[label at `time`], read from the configuration digits
/// (on_dual = false) or the dual digits (on_dual = true).
struct TimeLocalFactor {
  std::int64_t time = 0;
  bool on_dual = false;
  std::vector<cplx> values;
};

inline cplx expectation_joint(const ExtendedWeight& w,
                              const std::vector<TimeLocalFactor>& factors) {
  for (const auto& f : factors) {
    if (f.time < 0 || f.time > w.space.horizon)
      throw std::invalid_argument("cycle: factor time " + std::to_string(f.time) +
                                  " outside [0, horizon]");
    if (static_cast<int>(f.values.size()) != w.space.modulus)
      throw std::invalid_argument("cycle: factor table has wrong length");
  }
  cplx acc = 0.0;
  for (std::size_t sp = 0; sp < w.paths_per_sector; ++sp)
    for (std::size_t gp = 0; gp < w.paths_per_sector; ++gp) {
      cplx v = w.weights[sp * w.paths_per_sector + gp];
      if (v == cplx(0.0, 0.0)) continue;
      for (const auto& f : factors) {
        const int digit = detail::path_digit(w.space, f.on_dual ? gp : sp, f.time);
        v *= f.values[static_cast<std::size_t>(digit)];
      }
      acc += v;
    }
  return acc;
}

/// Continuum transport action of a smoothly sampled joint path, in the two
/// equivalent kinetic arrangements.  Both share the force and volume sums;
/// they differ by the exact telescoped boundary term sigma.gamma at the
/// path ends, so they coincide on closed paths.
struct ActionForms {
  cplx sigma_dgamma;  // kinetic term -sum sigma(t).(gamma(t+1)-gamma(t))
  cplx gamma_dsigma;  // kinetic term +sum gamma(t+1).(sigma(t+1)-sigma(t))
};

inline ActionForms continuum_action(const ForceField& f,
                                    const std::vector<std::vector<double>>& sigma,
                                    const std::vector<std::vector<double>>& gamma, double dt,
                                    bool include_jacobian = true) {
  if (sigma.size() != gamma.size() || sigma.size() < 2)
    throw std::invalid_argument(
        "continuum_action: need equally long paths with at least two samples");
  if (!(dt > 0.0)) throw std::invalid_argument("continuum_action: dt must be positive");
  const int dim = f.dim;
  for (const auto& p : sigma)
    if (static_cast<int>(p.size()) != dim)
      throw std::invalid_argument("continuum_action: configuration sample has wrong dimension");
  for (const auto& p : gamma)
    if (static_cast<int>(p.size()) != dim)
      throw std::invalid_argument("continuum_action: momentum sample has wrong dimension");
  double kin_a = 0.0, kin_b = 0.0, frc = 0.0, div = 0.0;
  std::vector<double> F(static_cast<std::size_t>(dim));
  std::vector<double> J(static_cast<std::size_t>(dim) * dim);
  for (std::size_t t = 0; t + 1 < sigma.size(); ++t) {
    for (int k = 0; k < dim; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      kin_a -= sigma[t][ks] * (gamma[t + 1][ks] - gamma[t][ks]);
      kin_b += gamma[t + 1][ks] * (sigma[t + 1][ks] - sigma[t][ks]);
    }
    const auto& sn = sigma[t + 1];
    f.eval_force(sn.data(), F.data());
    for (int k = 0; k < dim; ++k)
      frc -= F[static_cast<std::size_t>(k)] * gamma[t + 1][static_cast<std::size_t>(k)];
    if (include_jacobian) {
      f.eval_jacobian(sn.data(), J.data());
      for (int k = 0; k < dim; ++k) div += J[static_cast<std::size_t>(k) * dim + k];
    }
  }
  const cplx shared(dt * frc, 0.5 * dt * div);
  return {kin_a + shared, kin_b + shared};
}

}  // namespace qtrans
