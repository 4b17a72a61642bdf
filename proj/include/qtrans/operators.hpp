#pragma once
// Operator algebra on grid wave functions: coordinate and frequency
// operators, transport Hamiltonians, symmetry generators, Heisenberg
// derivatives, spectral decomposition, and expectation values.
//
// All operator actions are realized on configuration-space sample vectors;
// frequency-side states are transformed on entry (the transform is unitary,
// so values are unchanged).  Hamiltonians are assembled from symmetrized
// products of exactly hermitian factors — a real diagonal multiplication and
// the spectral frequency operator — so hermiticity holds on the grid to
// round-off for arbitrary force fields, not just smooth states.

#define LAPACK_COMPLEX_CPP
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qtrans/grid.hpp"
#include "qtrans/model.hpp"
#include "qtrans/wavefunction.hpp"

namespace qtrans {

struct GridOperator {
  GridPtr grid;
  std::function<void(const std::vector<cplx>&, std::vector<cplx>&)> action;
  bool hermitian = false;
  std::string label;

  std::vector<cplx> apply(const std::vector<cplx>& v) const {
    std::vector<cplx> out(v.size());
    action(v, out);
    return out;
  }
  std::vector<cplx> apply(const std::vector<double>& v) const { return apply(grid->promote(v)); }
};

inline void check_same_grid(const GridOperator& a, const GridOperator& b) {
  check_same_grid(a.grid, b.grid);
}

// ---- elementary operators --------------------------------------------------

inline GridOperator identity_op(const GridPtr& g) {
  return {g, [](const std::vector<cplx>& in, std::vector<cplx>& out) { out = in; }, true, "1"};
}

/// Diagonal multiplication by a real sample field.
inline GridOperator multiplication_op(const GridPtr& g, std::vector<double> f,
                                      std::string label) {
  if (f.size() != g->size())
    throw std::invalid_argument("multiplication_op: sample count does not match grid");
  return {g,
          [f = std::move(f)](const std::vector<cplx>& in, std::vector<cplx>& out) {
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = f[i] * in[i];
          },
          true, std::move(label)};
}

/// Coordinate operator: multiplication by sigma_axis.
inline GridOperator sigma_op(const GridPtr& g, int axis) {
  if (axis < 0 || axis >= g->dim()) throw std::invalid_argument("sigma_op: axis out of range");
  std::vector<double> coord(g->size());
  double s[3];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    coord[i] = s[axis];
  }
  return multiplication_op(g, std::move(coord), "sigma_" + std::to_string(axis + 1));
}

/// Frequency operator -i d/dsigma_axis; diagonal multiplication by the
/// frequency in the dual basis, with the unpaired Nyquist line zeroed.
inline GridOperator gamma_op(const GridPtr& g, int axis) {
  if (axis < 0 || axis >= g->dim()) throw std::invalid_argument("gamma_op: axis out of range");
  return {g,
          [g, axis](const std::vector<cplx>& in, std::vector<cplx>& out) {
            out = g->derivative(in, axis);
            for (cplx& v : out) v *= cplx(0.0, -1.0);
          },
          true, "gamma_" + std::to_string(axis + 1)};
}

// ---- algebra ---------------------------------------------------------------

inline GridOperator scale_op(const GridOperator& a, cplx factor, std::string label = "") {
  return {a.grid,
          [a, factor](const std::vector<cplx>& in, std::vector<cplx>& out) {
            a.action(in, out);
            for (cplx& v : out) v *= factor;
          },
          a.hermitian && factor.imag() == 0.0,
          label.empty() ? "scaled(" + a.label + ")" : std::move(label)};
}

inline GridOperator add_op(const GridOperator& a, const GridOperator& b,
                           std::string label = "") {
  check_same_grid(a, b);
  return {a.grid,
          [a, b](const std::vector<cplx>& in, std::vector<cplx>& out) {
            a.action(in, out);
            std::vector<cplx> tmp(in.size());
            b.action(in, tmp);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += tmp[i];
          },
          a.hermitian && b.hermitian,
          label.empty() ? "(" + a.label + " + " + b.label + ")" : std::move(label)};
}

inline GridOperator compose(const GridOperator& a, const GridOperator& b,
                            std::string label = "") {
  check_same_grid(a, b);
  return {a.grid,
          [a, b](const std::vector<cplx>& in, std::vector<cplx>& out) {
            std::vector<cplx> tmp(in.size());
            b.action(in, tmp);
            a.action(tmp, out);
          },
          false, label.empty() ? a.label + " " + b.label : std::move(label)};
}

inline GridOperator commutator(const GridOperator& a, const GridOperator& b) {
  check_same_grid(a, b);
  return {a.grid,
          [a, b](const std::vector<cplx>& in, std::vector<cplx>& out) {
            std::vector<cplx> tmp(in.size()), ab(in.size());
            b.action(in, tmp);
            a.action(tmp, ab);
            a.action(in, tmp);
            b.action(tmp, out);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = ab[i] - out[i];
          },
          false, "[" + a.label + ", " + b.label + "]"};
}

/// Symmetrized product half(AB + BA); hermitian when both factors are.
inline GridOperator anticommutator_half(const GridOperator& a, const GridOperator& b) {
  check_same_grid(a, b);
  return {a.grid,
          [a, b](const std::vector<cplx>& in, std::vector<cplx>& out) {
            std::vector<cplx> tmp(in.size()), acc(in.size());
            b.action(in, tmp);
            a.action(tmp, acc);
            a.action(in, tmp);
            b.action(tmp, out);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (acc[i] + out[i]);
          },
          a.hermitian && b.hermitian, "{" + a.label + ", " + b.label + "}/2"};
}

/// Heisenberg time derivative i[H, A].
inline GridOperator heisenberg_derivative(const GridOperator& H, const GridOperator& A) {
  GridOperator c = commutator(H, A);
  return {H.grid,
          [c](const std::vector<cplx>& in, std::vector<cplx>& out) {
            c.action(in, out);
            for (cplx& v : out) v *= cplx(0.0, 1.0);
          },
          H.hermitian && A.hermitian, "i[" + H.label + ", " + A.label + "]"};
}

// ---- transport Hamiltonian -------------------------------------------------

/// Samples of every force component on the grid.
inline std::vector<std::vector<double>> sample_force(const ForceField& f, const GridPtr& g) {
  if (f.dim != g->dim())
    throw std::invalid_argument("force field dimension does not match grid");
  std::vector<std::vector<double>> F(f.dim, std::vector<double>(g->size()));
  double s[3], out[3];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    f.force(s, out);
    for (int k = 0; k < f.dim; ++k) F[k][i] = out[k];
  }
  return F;
}

inline std::vector<double> sample_divergence(const ForceField& f, const GridPtr& g) {
  if (f.dim != g->dim())
    throw std::invalid_argument("force field dimension does not match grid");
  std::vector<double> d(g->size());
  double s[3];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    d[i] = f.divergence(s);
  }
  return d;
}

/// Transport Hamiltonian H = half sum_k { F_k(sigma), gamma_k }.  Acting on
/// smooth states this is -i(F . grad + half div F); the symmetrized product
/// form keeps it exactly hermitian on the grid.  iH maps real samples to
/// real samples.
inline GridOperator hamiltonian(const ForceField& f, const GridPtr& g) {
  auto F = sample_force(f, g);
  const int dim = g->dim();
  return {g,
          [g, F, dim](const std::vector<cplx>& in, std::vector<cplx>& out) {
            const cplx mi(0.0, -0.5);  // -i/2: gamma = -i d, anticommutator halves
            std::fill(out.begin(), out.end(), cplx(0.0));
            auto grad = g->gradient(in);
            std::vector<cplx> fv(in.size());
            for (int k = 0; k < dim; ++k) {
              for (std::size_t i = 0; i < in.size(); ++i) {
                out[i] += mi * F[k][i] * grad[k][i];
                fv[i] = F[k][i] * in[i];
              }
              auto dfv = g->derivative(fv, k);
              for (std::size_t i = 0; i < in.size(); ++i) out[i] += mi * dfv[i];
            }
          },
          true, "H[" + f.name + "]"};
}

/// Real generator of the unitary flow: K = iH, acting real-to-real.
/// Antisymmetric under the grid inner product.
inline std::vector<double> apply_flow_generator(const GridOperator& H,
                                                const std::vector<double>& v) {
  auto out = H.apply(v);
  std::vector<double> res(v.size());
  // K v = i (H v); H v is purely imaginary on real v.
  for (std::size_t i = 0; i < v.size(); ++i) res[i] = -out[i].imag();
  return res;
}

/// Expanded second-order form of the squared transport Hamiltonian:
///   H^2 = -[ F_k F_l d_k d_l + (d_l(F_k F_l)) d_k + half d_k(F_k div F)
///            - quarter (div F)^2 ].
/// The scalar coefficient needs second derivatives of F; models without
/// divergence_gradient fall back to the composed spectral operator H o H
/// (labelled as such) when the fallback is allowed.
inline GridOperator hamiltonian_squared_explicit(const ForceField& f, const GridPtr& g,
                                                 bool allow_fallback = true) {
  if (!f.divergence_gradient) {
    if (!allow_fallback)
      throw std::invalid_argument(
          "hamiltonian_squared_explicit: model lacks divergence_gradient and the composition "
          "fallback is disabled");
    GridOperator H = hamiltonian(f, g);
    GridOperator out = compose(H, H, "H2o[" + f.name + "]");
    return out;
  }
  auto F = sample_force(f, g);
  auto div = sample_divergence(f, g);
  const int dim = g->dim();
  const std::size_t N = g->size();

  // c_k = sum_l d_l(F_k F_l) = sum_l J_kl F_l + F_k div.
  std::vector<std::vector<double>> c(dim, std::vector<double>(N));
  {
    double s[3], J[9], Fv[3];
    for (std::size_t i = 0; i < N; ++i) {
      g->point(i, s);
      f.jacobian(s, J);
      f.force(s, Fv);
      for (int k = 0; k < dim; ++k) {
        double v = Fv[k] * div[i];
        for (int l = 0; l < dim; ++l) v += J[k * dim + l] * Fv[l];
        c[k][i] = v;
      }
    }
  }

  // u = half d_k(F_k div) - quarter div^2 = half F.grad(div) + quarter div^2.
  std::vector<double> u(N);
  {
    double s[3], gdiv[3], Fv[3];
    for (std::size_t i = 0; i < N; ++i) {
      g->point(i, s);
      f.divergence_gradient(s, gdiv);
      f.force(s, Fv);
      double fg = 0.0;
      for (int k = 0; k < dim; ++k) fg += Fv[k] * gdiv[k];
      u[i] = 0.5 * fg + 0.25 * div[i] * div[i];
    }
  }

  return {g,
          [g, F, c, u, dim](const std::vector<cplx>& in, std::vector<cplx>& out) {
            auto grad = g->gradient(in);
            std::fill(out.begin(), out.end(), cplx(0.0));
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = -u[i] * in[i];
            for (int k = 0; k < dim; ++k) {
              for (std::size_t i = 0; i < in.size(); ++i) out[i] -= c[k][i] * grad[k][i];
              auto second = g->gradient(grad[k]);
              for (int l = 0; l < dim; ++l)
                for (std::size_t i = 0; i < in.size(); ++i)
                  out[i] -= F[k][i] * F[l][i] * second[l][i];
            }
          },
          false, "H2x[" + f.name + "]"};
}

/// Quantum generator of the flow symmetry delta sigma = alpha (B sigma + C):
/// half sum_j {(B sigma + C)_j, gamma_j}, which acts as
/// -i[(B sigma + C)_j d_j + half tr B] on smooth states and is exactly
/// hermitian on the grid.
inline GridOperator symmetry_generator(const ForceField::Generator& gen, const GridPtr& g) {
  const int dim = g->dim();
  if (gen.C.size() != static_cast<std::size_t>(dim) ||
      gen.B.size() != static_cast<std::size_t>(dim) * dim)
    throw std::invalid_argument("symmetry_generator: generator dimensions do not match grid");
  std::vector<std::vector<double>> a(dim, std::vector<double>(g->size()));
  double s[3];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    for (int j = 0; j < dim; ++j) {
      double v = gen.C[j];
      for (int l = 0; l < dim; ++l) v += gen.B[static_cast<std::size_t>(j) * dim + l] * s[l];
      a[j][i] = v;
    }
  }
  return {g,
          [g, a, dim](const std::vector<cplx>& in, std::vector<cplx>& out) {
            const cplx mi(0.0, -0.5);
            std::fill(out.begin(), out.end(), cplx(0.0));
            auto grad = g->gradient(in);
            std::vector<cplx> av(in.size());
            for (int j = 0; j < dim; ++j) {
              for (std::size_t i = 0; i < in.size(); ++i) {
                out[i] += mi * a[j][i] * grad[j][i];
                av[i] = a[j][i] * in[i];
              }
              auto dav = g->derivative(av, j);
              for (std::size_t i = 0; i < in.size(); ++i) out[i] += mi * dav[i];
            }
          },
          true, "L[" + (gen.label.empty() ? std::string("gen") : gen.label) + "]"};
}

/// Standard planar angular momentum sigma_1 gamma_2 - sigma_2 gamma_1 on a
/// dim-2 grid (the axis-3 component).
inline GridOperator angular_momentum_op(const GridPtr& g) {
  if (g->dim() != 2)
    throw std::invalid_argument("angular_momentum_op: requires a two-axis grid");
  ForceField::Generator gen;
  gen.B = {0.0, -1.0, 1.0, 0.0};
  gen.C = {0.0, 0.0};
  gen.label = "L3";
  return symmetry_generator(gen, g);
}

// ---- expectation values ------------------------------------------------

namespace detail {

inline std::vector<cplx> to_sigma_samples(const RealWaveFunction& s) {
  return s.grid->promote(s.values);
}

inline std::vector<cplx> to_sigma_samples(const ComplexWaveFunction& s,
                                          std::vector<std::string>* notes) {
  if (notes)
    notes->push_back("expectation: frequency-side state transformed to configuration basis");
  return s.grid->fourier_inverse_complex(s.values);
}

}  // namespace detail

template <class State>
cplx expectation(const State& state, const GridOperator& A,
                 std::vector<std::string>* notes = nullptr) {
  check_same_grid(state.grid, A.grid);
  std::vector<cplx> v;
  if constexpr (std::is_same_v<State, RealWaveFunction>) {
    (void)notes;
    v = detail::to_sigma_samples(state);
  } else {
    v = detail::to_sigma_samples(state, notes);
  }
  const cplx val = A.grid->inner(v, A.apply(v));
  if (!std::isfinite(val.real()) || !std::isfinite(val.imag()))
    throw std::runtime_error("expectation: non-finite result for " + A.label);
  return val;
}

/// Expectation of a hermitian operator; checks the imaginary part is noise.
template <class State>
double real_expectation(const State& state, const GridOperator& A, double tol = 1e-10,
                        std::vector<std::string>* notes = nullptr) {
  const cplx val = expectation(state, A, notes);
  if (A.hermitian && std::abs(val.imag()) > tol * std::max(1.0, std::abs(val.real())))
    throw std::runtime_error("expectation: hermitian operator " + A.label +
                             " returned imaginary part " + std::to_string(val.imag()));
  return val.real();
}

/// Classical average of a diagonal observable against w = q^2.
inline double classical_expectation(const RealWaveFunction& q,
                                    const std::vector<double>& A_samples) {
  if (A_samples.size() != q.grid->size())
    throw std::invalid_argument("classical_expectation: sample count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < q.values.size(); ++i)
    s += A_samples[i] * q.values[i] * q.values[i];
  return q.grid->cell_volume() * s;
}

/// Frequency-side average of a function of gamma against |psi|^2.
inline double spectral_expectation(const ComplexWaveFunction& psi,
                                   const std::function<double(const double*)>& f_of_gamma) {
  const auto& g = psi.grid;
  double s = 0.0;
  int idx[3];
  double gamma[3];
  for (std::size_t m = 0; m < g->size(); ++m) {
    g->unflatten(m, idx);
    for (int a = 0; a < g->dim(); ++a) gamma[a] = g->frequency(idx[a]);
    s += f_of_gamma(gamma) * std::norm(psi.values[m]);
  }
  return g->dual_weight() * s;
}

// ---- dense realization and spectra ---------------------------------------

constexpr std::size_t kDenseLimit = 4096;

/// Column-major dense matrix of the operator action (guarded size).
inline std::vector<cplx> dense_matrix(const GridOperator& op) {
  const std::size_t N = op.grid->size();
  if (N > kDenseLimit)
    throw std::invalid_argument("dense_matrix: grid exceeds the dense-realization budget");
  std::vector<cplx> M(N * N);
  std::vector<cplx> e(N, 0.0), col(N);
  for (std::size_t j = 0; j < N; ++j) {
    e[j] = 1.0;
    op.action(e, col);
    e[j] = 0.0;
    std::copy(col.begin(), col.end(), M.begin() + j * N);
  }
  return M;
}

struct SpectrumResult {
  GridPtr grid;
  std::vector<double> eigenvalues;               // sorted by |E|, then +E first
  std::vector<std::vector<cplx>> eigenvectors;   // sigma samples; ||phi||^2 = 2 (E != 0) or 1
  std::vector<std::vector<double>> moduli;       // |phi_n(sigma)|
  std::vector<std::vector<double>> phases;       // alpha_n(sigma), phi = |phi| e^{i alpha}
  std::vector<double> residuals;                 // ||H phi - E phi|| / ||phi||
};

enum class SpectrumTarget { SmallestMagnitude, LargestMagnitude };

struct SpectrumOptions {
  const GridOperator* degeneracy_generator = nullptr;  // hermitian, commuting with H
  SpectrumTarget target = SpectrumTarget::SmallestMagnitude;
  double pair_tol = 1e-10;
  double residual_tol = 1e-8;
  double group_tol = 1e-9;
  bool force_iterative = false;
  int max_iterations = 600;   // iterative subspace budget
  std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

namespace detail {

inline void heev_inplace(std::vector<cplx>& M, std::vector<double>& w, int N) {
  w.assign(N, 0.0);
  const int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, 'V', 'L', N,
                                  reinterpret_cast<lapack_complex_double*>(M.data()), N,
                                  w.data());
  if (info != 0)
    throw std::runtime_error("spectrum: eigensolver failed to converge (zheevd info = " +
                             std::to_string(info) + ")");
}

struct RawEigenSystem {
  std::vector<double> values;              // full available eigenvalue list
  std::vector<std::vector<cplx>> vectors;  // plain l2-normalized, matching values order
};

inline RawEigenSystem dense_eigensystem(const GridOperator& H) {
  const std::size_t N = H.grid->size();
  std::vector<cplx> M = dense_matrix(H);
  std::vector<double> w;
  heev_inplace(M, w, static_cast<int>(N));
  RawEigenSystem raw;
  raw.values = std::move(w);
  raw.vectors.resize(N);
  for (std::size_t j = 0; j < N; ++j)
    raw.vectors[j].assign(M.begin() + j * N, M.begin() + (j + 1) * N);
  return raw;
}

// Dot products in plain l2 (uniform measure factors cancel everywhere they
// would matter below).
inline cplx dot(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

inline double nrm(const std::vector<cplx>& a) { return std::sqrt(std::abs(dot(a, a))); }

/// Lanczos with full reorthogonalization on the real symmetric operator
/// K^2 = (iH)^2.  Harvests Ritz pairs from the end of the K^2 spectrum the
/// requested target maps to: largest |E| sits at the well separated bottom
/// edge and converges within a small iteration budget, smallest |E| sits at
/// the dense upper edge (spacings ~ gap/width) and needs budgets approaching
/// the subspace dimension.  Unconverged Ritz directions are dropped rather
/// than projected, so a too-small budget surfaces as too few eigenpairs
/// instead of junk values.
inline RawEigenSystem iterative_eigensystem(const GridOperator& H, std::size_t k,
                                            const SpectrumOptions& opts) {
  const std::size_t N = H.grid->size();
  const int m = std::min<std::size_t>(opts.max_iterations, N);
  auto apply_K = [&](const std::vector<double>& v) {
    std::vector<cplx> cv(N);
    for (std::size_t i = 0; i < N; ++i) cv[i] = v[i];
    auto Hv = H.apply(cv);
    std::vector<double> out(N);
    for (std::size_t i = 0; i < N; ++i) out[i] = -Hv[i].imag();
    return out;
  };
  auto apply_K2 = [&](const std::vector<double>& v) { return apply_K(apply_K(v)); };

  std::vector<std::vector<double>> V;
  std::vector<double> alpha, beta;
  std::vector<double> v(N);
  {
    std::uint64_t s = opts.seed;
    for (std::size_t i = 0; i < N; ++i) {
      s = s * 6364136223846793005ull + 1442695040888963407ull;
      v[i] = static_cast<double>(s >> 11) * (1.0 / 9007199254740992.0) - 0.5;
    }
    double nv = 0.0;
    for (double x : v) nv += x * x;
    nv = std::sqrt(nv);
    for (double& x : v) x /= nv;
  }
  V.push_back(v);
  for (int j = 0; j < m; ++j) {
    std::vector<double> w = apply_K2(V[j]);
    double a = 0.0;
    for (std::size_t i = 0; i < N; ++i) a += V[j][i] * w[i];
    alpha.push_back(a);
    for (std::size_t i = 0; i < N; ++i) w[i] -= a * V[j][i];
    if (j > 0)
      for (std::size_t i = 0; i < N; ++i) w[i] -= beta[j - 1] * V[j - 1][i];
    for (const auto& u : V) {  // full reorthogonalization
      double p = 0.0;
      for (std::size_t i = 0; i < N; ++i) p += u[i] * w[i];
      for (std::size_t i = 0; i < N; ++i) w[i] -= p * u[i];
    }
    double b = 0.0;
    for (double x : w) b += x * x;
    b = std::sqrt(b);
    beta.push_back(b);
    if (b < 1e-13 || j + 1 == m) break;
    for (double& x : w) x /= b;
    V.push_back(w);
  }
  const int steps = static_cast<int>(alpha.size());
  std::vector<double> d(alpha), e(steps > 1 ? steps - 1 : 0);
  for (int j = 0; j + 1 < steps; ++j) e[j] = beta[j];
  std::vector<double> Z(static_cast<std::size_t>(steps) * steps);
  int info = LAPACKE_dstev(LAPACK_COL_MAJOR, 'V', steps, d.data(), e.data(), Z.data(), steps);
  if (info != 0)
    throw std::runtime_error("spectrum: tridiagonal solve failed (dstev info = " +
                             std::to_string(info) + ")");

  // Ritz pairs of K^2, eigenvalues ascending (all <= 0).  Smallest |E| of H
  // lives at the top (closest to zero), largest |E| at the bottom.  The last
  // beta times the trailing eigenvector component bounds the Ritz residual;
  // directions that have not settled are skipped.
  const std::size_t want_clusters = k + 4;
  const double spread = steps > 0 ? std::max(1.0, std::abs(d.front())) : 1.0;
  const double settle_tol = 1e-9 * spread;
  auto ritz_residual = [&](int r) {
    return std::abs(beta[steps - 1] * Z[static_cast<std::size_t>(r) * steps + (steps - 1)]);
  };
  std::vector<std::vector<double>> ritz_vecs;
  std::vector<double> ritz_res;
  const bool from_top = opts.target == SpectrumTarget::SmallestMagnitude;
  for (int step = 0; step < steps && ritz_vecs.size() < want_clusters; ++step) {
    const int r = from_top ? steps - 1 - step : step;
    // Stop at the first unsettled direction: anything past it could be an
    // interior pair masquerading as the spectrum edge.
    if (ritz_residual(r) > settle_tol) break;
    std::vector<double> y(N, 0.0);
    for (int j = 0; j < steps; ++j) {
      const double z = Z[static_cast<std::size_t>(r) * steps + j];
      for (std::size_t i = 0; i < N; ++i) y[i] += z * V[j][i];
    }
    ritz_res.push_back(ritz_residual(r));
    ritz_vecs.push_back(std::move(y));
  }

  if (ritz_vecs.empty())
    throw std::runtime_error(
        "spectrum: no eigenpair settled within the iteration budget; raise max_iterations");

  // Invariant subspace: Ritz vectors plus their K images, orthonormalized.
  // Candidates are unit vectors; a remainder below 1e-6 after projection
  // means the direction is already represented and what is left is noise
  // from the Ritz error, which must not be normalized into the basis (two
  // Lanczos copies of one degenerate eigenspace are the typical source).
  std::vector<std::vector<double>> W;
  auto push_orth = [&](std::vector<double> w) {
    for (const auto& u : W) {
      double p = 0.0;
      for (std::size_t i = 0; i < N; ++i) p += u[i] * w[i];
      for (std::size_t i = 0; i < N; ++i) w[i] -= p * u[i];
    }
    double nw = 0.0;
    for (double x : w) nw += x * x;
    nw = std::sqrt(nw);
    if (nw < 1e-6) return;
    for (double& x : w) x /= nw;
    W.push_back(std::move(w));
  };
  for (std::size_t r = 0; r < ritz_vecs.size(); ++r) {
    push_orth(ritz_vecs[r]);
    auto Ky = apply_K(ritz_vecs[r]);
    double kn = 0.0;
    for (double x : Ky) kn += x * x;
    kn = std::sqrt(kn);
    // A K image at the Ritz-error level marks a kernel vector: the Ritz
    // vector alone represents that direction.
    if (kn <= 10.0 * std::max(ritz_res[r], 1e-13)) continue;
    for (double& x : Ky) x /= kn;
    push_orth(std::move(Ky));
  }

  // Project H onto span(W): H_W = -i W^T K W (small dense hermitian).
  const int M = static_cast<int>(W.size());
  std::vector<std::vector<double>> KW(M);
  for (int b = 0; b < M; ++b) KW[b] = apply_K(W[b]);
  std::vector<cplx> Hsmall(static_cast<std::size_t>(M) * M);
  for (int b = 0; b < M; ++b)
    for (int a = 0; a < M; ++a) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) s += W[a][i] * KW[b][i];
      Hsmall[static_cast<std::size_t>(b) * M + a] = cplx(0.0, -s);
    }
  std::vector<double> ew;
  heev_inplace(Hsmall, ew, M);

  RawEigenSystem raw;
  raw.values = ew;
  raw.vectors.resize(M);
  for (int r = 0; r < M; ++r) {
    std::vector<cplx> phi(N, 0.0);
    for (int b = 0; b < M; ++b) {
      const cplx z = Hsmall[static_cast<std::size_t>(r) * M + b];
      for (std::size_t i = 0; i < N; ++i) phi[i] += z * W[b][i];
    }
    raw.vectors[r] = std::move(phi);
  }
  return raw;
}

}  // namespace detail

/// Spectral decomposition of a hermitian grid operator: k eigenpairs sorted
/// by |E| from the requested end of the spectrum (positive member of each
/// pair first).  Dense path when the grid is within the dense budget,
/// otherwise a Lanczos solver on the squared flow generator.
inline SpectrumResult spectrum(const GridOperator& H, std::size_t k,
                               const SpectrumOptions& opts = {}) {
  if (!H.hermitian) throw std::invalid_argument("spectrum: operator is not hermitian");
  const std::size_t N = H.grid->size();
  if (k == 0 || k > N) throw std::invalid_argument("spectrum: invalid eigenpair count");

  const bool dense = N <= kDenseLimit && !opts.force_iterative;
  detail::RawEigenSystem raw =
      dense ? detail::dense_eigensystem(H) : detail::iterative_eigensystem(H, k, opts);
  if (k > raw.values.size())
    throw std::runtime_error("spectrum: only " + std::to_string(raw.values.size()) +
                             " of " + std::to_string(k) +
                             " eigenpairs settled within the iteration budget");

  // Selection order: |E| toward the requested end, then positive first,
  // then value order.
  const bool small_first = opts.target == SpectrumTarget::SmallestMagnitude;
  std::vector<std::size_t> order(raw.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ea = raw.values[a], eb = raw.values[b];
    // Pairs are only +/- symmetric to solver accuracy, so the magnitude tie
    // window matches the pairing tolerance.
    if (std::abs(std::abs(ea) - std::abs(eb)) > opts.pair_tol * std::max(1.0, std::abs(ea)))
      return small_first ? std::abs(ea) < std::abs(eb) : std::abs(ea) > std::abs(eb);
    return ea > eb;
  });
  order.resize(k);

  // Every selected eigenvalue must have an opposite-sign partner available.
  const double scale =
      std::max({1.0, std::abs(raw.values.front()), std::abs(raw.values.back())});
  for (std::size_t i : order) {
    const double E = raw.values[i];
    bool paired = false;
    for (double v : raw.values)
      if (std::abs(v + E) <= opts.pair_tol * scale) {
        paired = true;
        break;
      }
    if (!paired)
      throw std::runtime_error("spectrum: eigenvalue " + std::to_string(E) +
                               " lacks an opposite-sign partner");
  }

  SpectrumResult res;
  res.grid = H.grid;
  for (std::size_t i : order) {
    res.eigenvalues.push_back(raw.values[i]);
    res.eigenvectors.push_back(raw.vectors[i]);
  }

  // Degenerate blocks: rotate to diagonalize the declared generator, order
  // by its eigenvalue, break ties by <sigma^2>.
  std::vector<double> r2(N);
  {
    double s[3];
    for (std::size_t i = 0; i < N; ++i) {
      H.grid->point(i, s);
      double v = 0.0;
      for (int a = 0; a < H.grid->dim(); ++a) v += s[a] * s[a];
      r2[i] = v;
    }
  }
  auto sigma2_of = [&](const std::vector<cplx>& phi) {
    double s = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      s += r2[i] * std::norm(phi[i]);
      n2 += std::norm(phi[i]);
    }
    return s / n2;
  };

  std::size_t b = 0;
  while (b < k) {
    std::size_t e = b + 1;
    while (e < k && std::abs(res.eigenvalues[e] - res.eigenvalues[b]) <=
                        opts.group_tol * std::max(1.0, std::abs(res.eigenvalues[b])))
      ++e;
    const std::size_t m = e - b;
    if (m > 1 && opts.degeneracy_generator) {
      const GridOperator& G = *opts.degeneracy_generator;
      std::vector<std::vector<cplx>> Gphi(m);
      for (std::size_t j = 0; j < m; ++j) Gphi[j] = G.apply(res.eigenvectors[b + j]);
      std::vector<cplx> block(m * m);
      for (std::size_t cj = 0; cj < m; ++cj)
        for (std::size_t ri = 0; ri < m; ++ri)
          block[cj * m + ri] = detail::dot(res.eigenvectors[b + ri], Gphi[cj]);
      std::vector<double> gval;
      detail::heev_inplace(block, gval, static_cast<int>(m));
      std::vector<std::vector<cplx>> rotated(m, std::vector<cplx>(N, 0.0));
      for (std::size_t cj = 0; cj < m; ++cj)
        for (std::size_t ri = 0; ri < m; ++ri) {
          const cplx z = block[cj * m + ri];
          for (std::size_t i = 0; i < N; ++i) rotated[cj][i] += z * res.eigenvectors[b + ri][i];
        }
      std::vector<std::size_t> ord(m);
      std::iota(ord.begin(), ord.end(), 0);
      std::stable_sort(ord.begin(), ord.end(), [&](std::size_t x, std::size_t y) {
        if (std::abs(gval[x] - gval[y]) > 1e-9) return gval[x] < gval[y];
        return sigma2_of(rotated[x]) < sigma2_of(rotated[y]);
      });
      for (std::size_t j = 0; j < m; ++j) res.eigenvectors[b + j] = rotated[ord[j]];
    } else if (m > 1) {
      std::vector<std::size_t> ord(m);
      std::iota(ord.begin(), ord.end(), 0);
      std::vector<double> s2(m);
      for (std::size_t j = 0; j < m; ++j) s2[j] = sigma2_of(res.eigenvectors[b + j]);
      std::stable_sort(ord.begin(), ord.end(),
                       [&](std::size_t x, std::size_t y) { return s2[x] < s2[y]; });
      std::vector<std::vector<cplx>> tmp(m);
      for (std::size_t j = 0; j < m; ++j) tmp[j] = res.eigenvectors[b + ord[j]];
      for (std::size_t j = 0; j < m; ++j) res.eigenvectors[b + j] = std::move(tmp[j]);
    }
    b = e;
  }

  // Static eigenvectors can and should be real: rebuild each E = 0 block
  // from the real and imaginary parts of its members.
  {
    std::vector<std::size_t> zero_idx;
    for (std::size_t j = 0; j < k; ++j)
      if (std::abs(res.eigenvalues[j]) <= opts.pair_tol * scale) zero_idx.push_back(j);
    if (!zero_idx.empty()) {
      std::vector<std::vector<double>> basis;
      auto push_real = [&](std::vector<double> w) {
        if (basis.size() >= zero_idx.size()) return;
        for (const auto& u : basis) {
          double p = 0.0;
          for (std::size_t i = 0; i < N; ++i) p += u[i] * w[i];
          for (std::size_t i = 0; i < N; ++i) w[i] -= p * u[i];
        }
        double nw = 0.0;
        for (double x : w) nw += x * x;
        nw = std::sqrt(nw);
        if (nw < 1e-8) return;
        for (double& x : w) x /= nw;
        basis.push_back(std::move(w));
      };
      for (std::size_t j : zero_idx) {
        std::vector<double> re(N), im(N);
        for (std::size_t i = 0; i < N; ++i) {
          re[i] = res.eigenvectors[j][i].real();
          im[i] = res.eigenvectors[j][i].imag();
        }
        push_real(std::move(re));
        push_real(std::move(im));
      }
      if (basis.size() == zero_idx.size())
        for (std::size_t j = 0; j < zero_idx.size(); ++j)
          for (std::size_t i = 0; i < N; ++i)
            res.eigenvectors[zero_idx[j]][i] = basis[j][i];
    }
  }

  // Normalization and phase convention.
  const double cv = H.grid->cell_volume();
  for (std::size_t j = 0; j < k; ++j) {
    auto& phi = res.eigenvectors[j];
    const bool zero = std::abs(res.eigenvalues[j]) <= opts.pair_tol * scale;
    const double target = zero ? 1.0 : 2.0;  // integral of |phi|^2
    double n2 = 0.0;
    for (const cplx& v : phi) n2 += std::norm(v);
    const double fac = std::sqrt(target / (cv * n2));
    for (cplx& v : phi) v *= fac;
    std::size_t peak = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < N; ++i)
      if (std::abs(phi[i]) > best + 1e-14) {
        best = std::abs(phi[i]);
        peak = i;
      }
    const cplx rot = std::conj(phi[peak]) / std::abs(phi[peak]);
    for (cplx& v : phi) v *= rot;
  }

  // Residuals, moduli, phases.
  for (std::size_t j = 0; j < k; ++j) {
    const auto& phi = res.eigenvectors[j];
    auto Hphi = H.apply(phi);
    double r2sum = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      r2sum += std::norm(Hphi[i] - res.eigenvalues[j] * phi[i]);
      n2 += std::norm(phi[i]);
    }
    res.residuals.push_back(std::sqrt(r2sum / n2));
    std::vector<double> mod(N), ph(N);
    for (std::size_t i = 0; i < N; ++i) {
      mod[i] = std::abs(phi[i]);
      ph[i] = mod[i] > 0.0 ? std::atan2(phi[i].imag(), phi[i].real()) : 0.0;
    }
    res.moduli.push_back(std::move(mod));
    res.phases.push_back(std::move(ph));
  }
  for (std::size_t j = 0; j < k; ++j)
    if (res.residuals[j] > opts.residual_tol) {
      std::string msg = "spectrum: residual tolerance exceeded:";
      for (std::size_t i = 0; i < k; ++i)
        if (res.residuals[i] > opts.residual_tol)
          msg += " E[" + std::to_string(i) + "]=" + std::to_string(res.eigenvalues[i]) +
                 " res=" + std::to_string(res.residuals[i]);
      throw std::runtime_error(msg);
    }
  return res;
}

/// Oscillating real state built from one eigenpair:
/// q_n(t, sigma) = |phi_n(sigma)| cos(alpha_n(sigma) - E_n t).
inline RealWaveFunction periodic_state(const SpectrumResult& s, std::size_t n, double t) {
  if (n >= s.eigenvalues.size()) throw std::invalid_argument("periodic_state: index out of range");
  if (std::abs(s.eigenvalues[n]) < 1e-12)
    throw std::domain_error(
        "periodic_state: static state (E = 0) has no phase evolution; q is Re(phi) for all t");
  const auto& mod = s.moduli[n];
  const auto& ph = s.phases[n];
  RealWaveFunction q{s.grid, std::vector<double>(mod.size()), t};
  for (std::size_t i = 0; i < mod.size(); ++i)
    q.values[i] = mod[i] * std::cos(ph[i] - s.eigenvalues[n] * t);
  return q;
}

}  // namespace qtrans
