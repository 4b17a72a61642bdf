#pragma once
// Time-local probabilistic states: real root-of-probability samples on the
// configuration grid and their complex frequency-side counterparts, with the
// reality-constraint projector connecting the two pictures.

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtrans/grid.hpp"

namespace qtrans {

struct RealWaveFunction {
  GridPtr grid;
  std::vector<double> values;  // q(sigma), one sample per grid point
  double time = 0.0;
};

struct ComplexWaveFunction {
  GridPtr grid;
  std::vector<cplx> values;  // psi(gamma), FFT mode order
  double time = 0.0;
  bool constrained = true;  // tracks whether psi(-g) = conj(psi(g)) is claimed
};

inline void check_same_grid(const GridPtr& a, const GridPtr& b) {
  if (a == b) return;
  if (!a || !b || a->dim() != b->dim() || a->points_per_axis() != b->points_per_axis() ||
      a->half_width() != b->half_width())
    throw std::invalid_argument("wave functions live on different grids");
}

inline double norm(const RealWaveFunction& q) {
  return std::sqrt(q.grid->inner(q.values, q.values));
}

inline double norm(const ComplexWaveFunction& psi) {
  return std::sqrt(std::real(psi.grid->dual_inner(psi.values, psi.values)));
}

inline double overlap(const RealWaveFunction& a, const RealWaveFunction& b) {
  check_same_grid(a.grid, b.grid);
  return a.grid->inner(a.values, b.values);
}

inline cplx overlap(const ComplexWaveFunction& a, const ComplexWaveFunction& b) {
  check_same_grid(a.grid, b.grid);
  return a.grid->dual_inner(a.values, b.values);
}

inline void normalize(RealWaveFunction& q) {
  const double n = norm(q);
  if (n < 1e-12) throw std::domain_error("normalize: degenerate (zero-norm) state");
  for (double& v : q.values) v /= n;
}

inline void normalize(ComplexWaveFunction& psi) {
  const double n = norm(psi);
  if (n < 1e-12) throw std::domain_error("normalize: degenerate (zero-norm) state");
  for (cplx& v : psi.values) v /= n;
}

/// Root embedding of a probability distribution: q = sign * sqrt(w / Z).
/// The default sign is +1 everywhere; probabilities are sign blind.
inline RealWaveFunction from_probability(const GridPtr& grid, const std::vector<double>& w,
                                         const std::vector<double>* signs = nullptr,
                                         double time = 0.0) {
  if (w.size() != grid->size())
    throw std::invalid_argument("from_probability: sample count does not match grid");
  if (signs && signs->size() != w.size())
    throw std::invalid_argument("from_probability: sign mask size mismatch");
  for (double v : w)
    if (v < 0.0) throw std::domain_error("from_probability: negative probability entry");
  const double Z = grid->integrate(w);
  if (Z <= 0.0) throw std::domain_error("from_probability: distribution integrates to zero");
  RealWaveFunction q{grid, std::vector<double>(w.size()), time};
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double s = signs ? ((*signs)[i] < 0.0 ? -1.0 : 1.0) : 1.0;
    q.values[i] = s * std::sqrt(w[i] / Z);
  }
  return q;
}

inline std::vector<double> to_probability(const RealWaveFunction& q) {
  std::vector<double> w(q.values.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = q.values[i] * q.values[i];
  return w;
}

inline ComplexWaveFunction to_frequency(const RealWaveFunction& q) {
  return ComplexWaveFunction{q.grid, q.grid->fourier_forward(q.values), q.time, true};
}

inline RealWaveFunction to_configuration(const ComplexWaveFunction& psi, double tol = 1e-8) {
  return RealWaveFunction{psi.grid, psi.grid->fourier_inverse(psi.values, tol), psi.time};
}

/// Symmetrization half(psi(g) + conj(psi(-g))): the orthogonal projector
/// onto frequency-side states of real fields.  Output is renormalized.
inline ComplexWaveFunction project_constraint(const ComplexWaveFunction& psi_tilde) {
  const auto& g = psi_tilde.grid;
  ComplexWaveFunction out{g, std::vector<cplx>(psi_tilde.values.size()), psi_tilde.time, true};
  for (std::size_t m = 0; m < out.values.size(); ++m) {
    const cplx mirrored = std::conj(psi_tilde.values[g->conjugate_index(m)]);
    out.values[m] = 0.5 * (psi_tilde.values[m] + mirrored);
  }
  const double n = norm(out);
  if (n < 1e-12)
    throw std::domain_error("project_constraint: projection annihilated the state");
  for (cplx& v : out.values) v /= n;
  return out;
}

/// Largest violation of psi(-g) = conj(psi(g)), normalized by the peak value.
inline double constraint_residual(const ComplexWaveFunction& psi) {
  double peak = 0.0;
  for (const cplx& v : psi.values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) return 0.0;
  return psi.grid->constraint_violation(psi.values) / peak;
}

}  // namespace qtrans
