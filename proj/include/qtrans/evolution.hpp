#pragma once

// Time evolution of classical wave functions: norm-preserving Cayley
// integration of the continuum law, the discrete transport step in the
// sigma basis with its Jacobian rescaling, the Fourier-conjugated step on
// the frequency side, and the reversible alternating scheme built from the
// forward and time-reversed step forms.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qtrans/grid.hpp"
#include "qtrans/model.hpp"
#include "qtrans/operators.hpp"
#include "qtrans/wavefunction.hpp"

namespace qtrans {

namespace detail {

inline double det_row_major(const double* M, int dim) {
  if (dim == 1) return M[0];
  if (dim == 2) return M[0] * M[3] - M[1] * M[2];
  return M[0] * (M[4] * M[8] - M[5] * M[7]) - M[1] * (M[3] * M[8] - M[5] * M[6]) +
         M[2] * (M[3] * M[7] - M[4] * M[6]);
}

}  // namespace detail

/// Positive square root of det(1 - eps dF/dsigma) at one point: the factor
/// 1 + eps N(sigma) that rescales the transported amplitude so that q^2
/// stays a probability distribution.  A nonpositive determinant means the
/// step size has destroyed invertibility of the point map.
inline double jacobian_factor(const ForceField& f, const std::vector<double>& sigma,
                              double eps) {
  const int d = f.dim;
  const std::vector<double> J = eval_jacobian(f, sigma);
  double M[9];
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c)
      M[r * d + c] = (r == c ? 1.0 : 0.0) - eps * J[static_cast<std::size_t>(r) * d + c];
  const double det = detail::det_row_major(M, d);
  if (!(det > 0.0))
    throw std::domain_error("jacobian_factor: det(1 - eps dF/dsigma) = " + std::to_string(det) +
                            " is not positive; the step map is not invertible at this step size");
  return std::sqrt(det);
}

// ---- discrete step operators -------------------------------------------

/// Forward transport step in the sigma basis:
/// q'(sigma) = jacobian_factor(sigma) * q(sigma - eps F(sigma)),
/// with the force read at the destination point and the pulled-back value
/// taken from the trigonometric interpolant of q.  `raw_norm` (optional)
/// receives the norm of the result before any renormalization.
inline RealWaveFunction step_operator_sigma(const ForceField& f, const RealWaveFunction& q,
                                            double eps, double* raw_norm = nullptr) {
  const auto& g = *q.grid;
  check_dim(f, static_cast<std::size_t>(g.dim()));
  const std::vector<cplx> hat = g.dft(g.promote(q.values), -1);
  std::vector<cplx> scratch(static_cast<std::size_t>(g.dim()) * g.points_per_axis());

  RealWaveFunction out{q.grid, std::vector<double>(g.size()), q.time + eps};
  std::vector<double> sigma(g.dim()), x(g.dim());
  double s[3];
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.point(i, s);
    for (int a = 0; a < g.dim(); ++a) sigma[a] = s[a];
    const std::vector<double> F = eval_force(f, sigma);
    for (int a = 0; a < g.dim(); ++a) x[a] = sigma[a] - eps * F[a];
    const double fac = jacobian_factor(f, sigma, eps);
    out.values[i] = fac * g.interpolate(hat, x.data(), scratch.data()).real();
  }
  if (raw_norm) *raw_norm = norm(out);
  return out;
}

namespace detail {

/// Solve x + eps F(x) = target by fixed point with a Newton fallback.
inline std::vector<double> solve_source_point(const ForceField& f,
                                              const std::vector<double>& target, double eps) {
  const int d = f.dim;
  std::vector<double> x = target;
  for (int it = 0; it < 50; ++it) {
    const std::vector<double> F = eval_force(f, x);
    double res = 0.0;
    std::vector<double> gvec(d);
    for (int a = 0; a < d; ++a) {
      gvec[a] = x[a] + eps * F[a] - target[a];
      res = std::max(res, std::abs(gvec[a]));
    }
    if (res <= 1e-12) return x;
    if (it < 25) {
      for (int a = 0; a < d; ++a) x[a] = target[a] - eps * F[a];
    } else {
      // Newton on g(x) = x + eps F(x) - target with dg = 1 + eps J.
      const std::vector<double> J = eval_jacobian(f, x);
      double A[9];
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
          A[r * d + c] = (r == c ? 1.0 : 0.0) + eps * J[static_cast<std::size_t>(r) * d + c];
      if (d == 1) {
        x[0] -= gvec[0] / A[0];
      } else if (d == 2) {
        const double det = A[0] * A[3] - A[1] * A[2];
        x[0] -= (A[3] * gvec[0] - A[1] * gvec[1]) / det;
        x[1] -= (-A[2] * gvec[0] + A[0] * gvec[1]) / det;
      } else {
        const double det = det_row_major(A, 3);
        double inv[9] = {A[4] * A[8] - A[5] * A[7], A[2] * A[7] - A[1] * A[8],
                         A[1] * A[5] - A[2] * A[4], A[5] * A[6] - A[3] * A[8],
                         A[0] * A[8] - A[2] * A[6], A[2] * A[3] - A[0] * A[5],
                         A[3] * A[7] - A[4] * A[6], A[1] * A[6] - A[0] * A[7],
                         A[0] * A[4] - A[1] * A[3]};
        for (int r = 0; r < 3; ++r) {
          double dx = 0.0;
          for (int c = 0; c < 3; ++c) dx += inv[r * 3 + c] * gvec[c];
          x[r] -= dx / det;
        }
      }
    }
  }
  throw std::runtime_error("step: source-point solve did not reach 1e-12 in 50 iterations");
}

}  // namespace detail

/// Time-reversed transport step: the exact functional inverse of the
/// forward step taken with -eps.  Each destination value is the source
/// value divided by the source-side rescaling,
/// q'(x + eps F(x)) = q(x) / jacobian_factor(x, -eps),
/// with the source point found by solving x + eps F(x) = sigma.
inline RealWaveFunction step_operator_sigma_reversed(const ForceField& f,
                                                     const RealWaveFunction& q, double eps,
                                                     double* raw_norm = nullptr) {
  const auto& g = *q.grid;
  check_dim(f, static_cast<std::size_t>(g.dim()));
  const std::vector<cplx> hat = g.dft(g.promote(q.values), -1);
  std::vector<cplx> scratch(static_cast<std::size_t>(g.dim()) * g.points_per_axis());

  RealWaveFunction out{q.grid, std::vector<double>(g.size()), q.time + eps};
  std::vector<double> target(g.dim());
  double s[3];
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.point(i, s);
    for (int a = 0; a < g.dim(); ++a) target[a] = s[a];
    const std::vector<double> x = detail::solve_source_point(f, target, eps);
    const double fac = jacobian_factor(f, x, -eps);
    out.values[i] = g.interpolate(hat, x.data(), scratch.data()).real() / fac;
  }
  if (raw_norm) *raw_norm = norm(out);
  return out;
}

/// Transport step on the frequency side: the sigma-basis step conjugated by
/// the Fourier transform.  The input must satisfy the reality constraint.
inline ComplexWaveFunction step_operator_gamma(const ForceField& f,
                                               const ComplexWaveFunction& psi, double eps,
                                               double* raw_norm = nullptr) {
  if (constraint_residual(psi) > 1e-8)
    throw std::invalid_argument(
        "step_operator_gamma: input violates the reality constraint psi(-gamma) = conj(psi(gamma))");
  RealWaveFunction q = to_configuration(psi);
  RealWaveFunction q2 = step_operator_sigma(f, q, eps, raw_norm);
  ComplexWaveFunction out = to_frequency(q2);
  if (raw_norm) *raw_norm = norm(out);
  return out;
}

// ---- continuum integrators ----------------------------------------------

namespace detail {

// One Cayley (implicit midpoint) step of d_t v = -K v for the flow
// generator K = iH: solve (1 + (eps/2)K) v' = (1 - (eps/2)K) v by fixed
// point.  Exactly norm-preserving up to the solver residual because K is
// antisymmetric.
template <typename Vec, typename ApplyK, typename Norm2>
Vec cayley_step(const Vec& v, double eps, ApplyK&& applyK, Norm2&& norm2) {
  const double a = 0.5 * eps;
  Vec Kv = applyK(v);
  Vec b = v;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] -= a * Kv[i];
  const double btol = 1e-12 * std::max(1.0, std::sqrt(norm2(b)));
  Vec x = b;
  for (int it = 0; it < 400; ++it) {
    Vec Kx = applyK(x);
    double res2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto r = x[i] + a * Kx[i] - b[i];
      res2 += std::norm(r);
    }
    if (std::sqrt(res2) <= btol) return x;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = b[i] - a * Kx[i];
  }
  throw std::runtime_error(
      "unitary_step: inner solve did not reach residual 1e-12; reduce the step size");
}

}  // namespace detail

/// One implicit-midpoint (Cayley) step of i d_t psi = H psi on a real state:
/// applied as the equivalent real rotation, so q stays real.
inline RealWaveFunction unitary_step(const GridOperator& H, const RealWaveFunction& q,
                                     double eps) {
  check_same_grid(H.grid, q.grid);
  auto applyK = [&](const std::vector<double>& v) { return apply_flow_generator(H, v); };
  auto norm2 = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s * H.grid->cell_volume();
  };
  RealWaveFunction out{q.grid, detail::cayley_step(q.values, eps, applyK, norm2), q.time + eps};
  return out;
}

/// Cayley step on a frequency-side state, via the configuration side.
inline ComplexWaveFunction unitary_step(const GridOperator& H, const ComplexWaveFunction& psi,
                                        double eps) {
  check_same_grid(H.grid, psi.grid);
  auto applyK = [&](const std::vector<cplx>& v) {
    auto Hv = H.apply(v);
    for (auto& z : Hv) z *= cplx(0.0, 1.0);
    return Hv;
  };
  auto norm2 = [&](const std::vector<cplx>& v) {
    double s = 0.0;
    for (const cplx& z : v) s += std::norm(z);
    return s * H.grid->cell_volume();
  };
  std::vector<cplx> qc = psi.grid->fourier_inverse_complex(psi.values);
  std::vector<cplx> stepped = detail::cayley_step(qc, eps, applyK, norm2);
  ComplexWaveFunction out{psi.grid, psi.grid->fourier_forward(stepped), psi.time + eps,
                          psi.constrained};
  return out;
}

/// One classical RK4 step of d_t q = -K q.  Not norm-preserving: the
/// one-step amplification of an eigenmode with energy E is |R(i eps E)| < 1
/// for the RK4 stability function R, so norms decay at O(eps^6) per step.
/// Kept for speed comparisons only.
inline RealWaveFunction rk4_step(const GridOperator& H, const RealWaveFunction& q, double eps) {
  check_same_grid(H.grid, q.grid);
  const std::size_t N = q.values.size();
  auto rhs = [&](const std::vector<double>& v) {
    auto Kv = apply_flow_generator(H, v);
    for (double& x : Kv) x = -x;
    return Kv;
  };
  std::vector<double> k1 = rhs(q.values), tmp(N);
  for (std::size_t i = 0; i < N; ++i) tmp[i] = q.values[i] + 0.5 * eps * k1[i];
  std::vector<double> k2 = rhs(tmp);
  for (std::size_t i = 0; i < N; ++i) tmp[i] = q.values[i] + 0.5 * eps * k2[i];
  std::vector<double> k3 = rhs(tmp);
  for (std::size_t i = 0; i < N; ++i) tmp[i] = q.values[i] + eps * k3[i];
  std::vector<double> k4 = rhs(tmp);
  RealWaveFunction out{q.grid, std::vector<double>(N), q.time + eps};
  for (std::size_t i = 0; i < N; ++i)
    out.values[i] = q.values[i] + (eps / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

// ---- evolution plans ------------------------------------------------------

enum class EvolutionScheme {
  unitary_midpoint,
  step_operator_sigma,
  step_operator_gamma,
  symmetric_alternating,
};

inline const char* scheme_name(EvolutionScheme s) {
  switch (s) {
    case EvolutionScheme::unitary_midpoint: return "unitary_midpoint";
    case EvolutionScheme::step_operator_sigma: return "step_operator_sigma";
    case EvolutionScheme::step_operator_gamma: return "step_operator_gamma";
    case EvolutionScheme::symmetric_alternating: return "symmetric_alternating";
  }
  return "?";
}

struct Monitor {
  std::string label;
  GridOperator op;
};

struct EvolutionPlan {
  ForceField model;
  GridPtr grid;
  double step_size = 0.0;
  std::int64_t num_steps = 0;
  EvolutionScheme scheme = EvolutionScheme::unitary_midpoint;
  std::vector<Monitor> monitors;
  // Norm-drift policy: renormalize and warn past warn_drift per step, abort
  // once the accumulated |sum log(raw norm)| passes abort_drift.
  double warn_drift = 1e-8;
  double abort_drift = 1e-3;
  std::int64_t snapshot_cadence = 0;  // 0 = no snapshots
};

/// Validated plan construction.  Enforces the advection bound
/// eps * max|F| * n/(2L) < 0.5 and, for the transport-step schemes, the
/// invertibility margin det(1 -+ eps dF/dsigma) > 0.1 over the whole grid.
inline EvolutionPlan make_plan(const ForceField& model, const GridPtr& grid, double step_size,
                               std::int64_t num_steps, EvolutionScheme scheme,
                               std::vector<Monitor> monitors = {},
                               std::int64_t snapshot_cadence = 0) {
  if (!grid) throw std::invalid_argument("make_plan: null grid");
  check_dim(model, static_cast<std::size_t>(grid->dim()));
  if (!(step_size > 0.0)) throw std::invalid_argument("make_plan: step_size must be positive");
  if (num_steps < 1) throw std::invalid_argument("make_plan: num_steps must be at least 1");
  for (const auto& m : monitors) check_same_grid(m.op.grid, grid);

  double max_force = 0.0;
  std::vector<double> sigma(grid->dim());
  double s[3];
  for (std::size_t i = 0; i < grid->size(); ++i) {
    grid->point(i, s);
    for (int a = 0; a < grid->dim(); ++a) sigma[a] = s[a];
    const std::vector<double> F = eval_force(model, sigma);
    double f2 = 0.0;
    for (double v : F) f2 += v * v;
    max_force = std::max(max_force, std::sqrt(f2));
  }
  const double advect = grid->points_per_axis() / (2.0 * grid->half_width());
  const double cfl = step_size * max_force * advect;
  if (!(cfl < 0.5))
    throw std::invalid_argument(
        "make_plan: advection bound violated: eps*max|F|*n/(2L) = " + std::to_string(cfl) +
        " >= 0.5; reduce step_size below " +
        std::to_string(0.5 / std::max(max_force * advect, 1e-300)) + " or coarsen the grid");

  const bool uses_transport = scheme != EvolutionScheme::unitary_midpoint;
  if (uses_transport) {
    double min_det = 1e300;
    for (std::size_t i = 0; i < grid->size(); ++i) {
      grid->point(i, s);
      for (int a = 0; a < grid->dim(); ++a) sigma[a] = s[a];
      const std::vector<double> J = eval_jacobian(model, sigma);
      const int d = grid->dim();
      for (double sign : {1.0, -1.0}) {
        if (sign < 0.0 && scheme != EvolutionScheme::symmetric_alternating) continue;
        double M[9];
        for (int r = 0; r < d; ++r)
          for (int c = 0; c < d; ++c)
            M[r * d + c] =
                (r == c ? 1.0 : 0.0) - sign * step_size * J[static_cast<std::size_t>(r) * d + c];
        min_det = std::min(min_det, detail::det_row_major(M, d));
      }
    }
    if (!(min_det > 0.1))
      throw std::invalid_argument(
          "make_plan: invertibility margin det(1 - eps dF/dsigma) = " + std::to_string(min_det) +
          " <= 0.1 somewhere on the grid; reduce step_size");
  }

  EvolutionPlan plan;
  plan.model = model;
  plan.grid = grid;
  plan.step_size = step_size;
  plan.num_steps = num_steps;
  plan.scheme = scheme;
  plan.monitors = std::move(monitors);
  plan.snapshot_cadence = snapshot_cadence;
  return plan;
}

struct EvolutionRecord {
  std::vector<double> times;                        // num_steps + 1 entries
  std::vector<double> norms;                        // raw norms, pre-renormalization
  std::vector<std::string> monitor_labels;
  std::vector<std::vector<double>> monitor_values;  // [monitor][time index]
  RealWaveFunction final_state;
  std::vector<std::string> warnings;
  std::vector<std::int64_t> snapshot_steps;
  std::vector<RealWaveFunction> snapshots;
  bool aborted = false;
};

/// Run a plan from a normalized real state, recording the raw norm and the
/// monitor expectations after every step.  Norm drift beyond the warn
/// threshold is renormalized away and logged; once the accumulated drift
/// passes the abort threshold the run stops with a partial record.
inline EvolutionRecord evolve(const EvolutionPlan& plan, const RealWaveFunction& initial) {
  check_same_grid(plan.grid, initial.grid);
  if (std::abs(norm(initial) - 1.0) > 1e-6)
    throw std::invalid_argument("evolve: initial state is not normalized");

  const bool gamma_side = plan.scheme == EvolutionScheme::step_operator_gamma;
  GridOperator H = hamiltonian(plan.model, plan.grid);

  EvolutionRecord rec;
  rec.final_state = initial;
  for (const auto& m : plan.monitors) rec.monitor_labels.push_back(m.label);
  rec.monitor_values.resize(plan.monitors.size());

  ComplexWaveFunction psi;
  if (gamma_side) psi = to_frequency(initial);

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
    for (std::size_t m = 0; m < plan.monitors.size(); ++m) {
      const double val = gamma_side ? expectation(psi, plan.monitors[m].op).real()
                                    : expectation(rec.final_state, plan.monitors[m].op).real();
      rec.monitor_values[m].push_back(val);
    }
  };
  auto snapshot = [&](std::int64_t step) {
    if (plan.snapshot_cadence <= 0 || step % plan.snapshot_cadence != 0) return;
    rec.snapshot_steps.push_back(step);
    rec.snapshots.push_back(gamma_side ? to_configuration(psi) : rec.final_state);
  };

  sample(initial.time, norm(initial));
  snapshot(0);

  double cum_log = 0.0;
  for (std::int64_t step = 1; step <= plan.num_steps; ++step) {
    double raw = 1.0;
    try {
      switch (plan.scheme) {
        case EvolutionScheme::unitary_midpoint:
          rec.final_state = unitary_step(H, rec.final_state, plan.step_size);
          raw = norm(rec.final_state);
          break;
        case EvolutionScheme::step_operator_sigma:
          rec.final_state = step_operator_sigma(plan.model, rec.final_state, plan.step_size, &raw);
          break;
        case EvolutionScheme::step_operator_gamma:
          psi = step_operator_gamma(plan.model, psi, plan.step_size, &raw);
          break;
        case EvolutionScheme::symmetric_alternating:
          rec.final_state =
              (step % 2 == 1)
                  ? step_operator_sigma(plan.model, rec.final_state, plan.step_size, &raw)
                  : step_operator_sigma_reversed(plan.model, rec.final_state, plan.step_size,
                                                 &raw);
          break;
      }
    } catch (const std::exception& ex) {
      warn("step " + std::to_string(step) + ": " + ex.what());
      rec.aborted = true;
      break;
    }

    cum_log += std::log(raw);
    if (std::abs(raw - 1.0) > plan.warn_drift) {
      warn("step " + std::to_string(step) + ": norm drift " + std::to_string(raw - 1.0) +
           "; renormalized");
      if (gamma_side)
        normalize(psi);
      else
        normalize(rec.final_state);
    }
    sample(initial.time + step * plan.step_size, raw);
    snapshot(step);
    if (std::abs(cum_log) > plan.abort_drift) {
      warn("step " + std::to_string(step) + ": accumulated norm drift |sum log| = " +
           std::to_string(std::abs(cum_log)) + " exceeds " + std::to_string(plan.abort_drift) +
           "; aborting");
      rec.aborted = true;
      break;
    }
  }
  if (suppressed > 0) rec.warnings.push_back(std::to_string(suppressed) + " warnings suppressed");
  if (gamma_side) rec.final_state = to_configuration(psi);
  return rec;
}

}  // namespace qtrans
