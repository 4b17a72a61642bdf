#pragma once
// Deterministic transport laws F(sigma) with exact derivative information
// and symmetry metadata.  Built-in models are polynomial fields, so their
// Jacobians come from term-wise differentiation rather than differencing.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qtrans {

/// One monomial coeff * prod_a sigma_a^powers[a]; unused axes keep power 0.
struct PolyTerm {
  double coeff = 0.0;
  std::array<int, 3> powers{0, 0, 0};
};

struct ForceField {
  /// Linearized flow symmetry delta sigma = alpha (B sigma + C).
  struct Generator {
    std::vector<double> B;  // row-major dim x dim
    std::vector<double> C;  // length dim
    std::string label;
  };

  int dim = 0;
  std::string name;
  std::function<void(const double* sigma, double* out)> force;
  /// Row-major entries out[k*dim + l] = dF_k / dsigma_l.
  std::function<void(const double* sigma, double* out)> jacobian;
  /// Optional second-derivative data: out[a] = d(div F)/d sigma_a.  Present
  /// for polynomial fields; consumers needing it fall back to operator
  /// composition when absent.
  std::function<void(const double* sigma, double* out)> divergence_gradient;
  std::optional<std::vector<double>> time_reversal;  // row-major involution
  std::vector<Generator> generators;
  bool jacobian_is_exact = true;

  void eval_force(const double* sigma, double* out) const { force(sigma, out); }

  void eval_jacobian(const double* sigma, double* out) const { jacobian(sigma, out); }

  /// Divergence as the trace of the Jacobian; shares its code path so the
  /// two can never disagree.
  double divergence(const double* sigma) const {
    std::vector<double> J(static_cast<std::size_t>(dim) * dim);
    jacobian(sigma, J.data());
    double tr = 0.0;
    for (int k = 0; k < dim; ++k) tr += J[static_cast<std::size_t>(k) * dim + k];
    return tr;
  }
};

inline void check_dim(const ForceField& f, std::size_t got) {
  if (got != static_cast<std::size_t>(f.dim))
    throw std::invalid_argument("ForceField '" + f.name + "': configuration has length " +
                                std::to_string(got) + ", expected " + std::to_string(f.dim));
}

inline std::vector<double> eval_force(const ForceField& f, const std::vector<double>& sigma) {
  check_dim(f, sigma.size());
  std::vector<double> out(f.dim);
  f.force(sigma.data(), out.data());
  return out;
}

inline std::vector<double> eval_jacobian(const ForceField& f, const std::vector<double>& sigma) {
  check_dim(f, sigma.size());
  std::vector<double> out(static_cast<std::size_t>(f.dim) * f.dim);
  f.jacobian(sigma.data(), out.data());
  return out;
}

inline double eval_divergence(const ForceField& f, const std::vector<double>& sigma) {
  check_dim(f, sigma.size());
  return f.divergence(sigma.data());
}

/// Central finite-difference Jacobian, the fallback for models supplied
/// without derivative information and the cross-check for those with it.
inline std::vector<double> fd_jacobian(const ForceField& f, const std::vector<double>& sigma,
                                       double h = 1e-5) {
  check_dim(f, sigma.size());
  const int d = f.dim;
  std::vector<double> J(static_cast<std::size_t>(d) * d);
  std::vector<double> sp(sigma), sm(sigma), Fp(d), Fm(d);
  for (int l = 0; l < d; ++l) {
    sp[l] = sigma[l] + h;
    sm[l] = sigma[l] - h;
    f.force(sp.data(), Fp.data());
    f.force(sm.data(), Fm.data());
    for (int k = 0; k < d; ++k) J[static_cast<std::size_t>(k) * d + l] = (Fp[k] - Fm[k]) / (2.0 * h);
    sp[l] = sigma[l];
    sm[l] = sigma[l];
  }
  return J;
}

/// Max over samples of || F(A_T sigma) + A_T F(sigma) ||; zero iff the
/// declared involution reverses the flow.
inline double check_time_reversal(const ForceField& f,
                                  const std::vector<std::vector<double>>& samples) {
  if (!f.time_reversal)
    throw std::logic_error("ForceField '" + f.name + "': no time-reversal involution declared");
  if (samples.empty()) throw std::invalid_argument("check_time_reversal: no sample points");
  const int d = f.dim;
  const std::vector<double>& A = *f.time_reversal;
  double worst = 0.0;
  std::vector<double> As(d), FA(d), F(d);
  for (const auto& s : samples) {
    check_dim(f, s.size());
    for (int k = 0; k < d; ++k) {
      double v = 0.0;
      for (int l = 0; l < d; ++l) v += A[static_cast<std::size_t>(k) * d + l] * s[l];
      As[k] = v;
    }
    f.force(As.data(), FA.data());
    f.force(s.data(), F.data());
    double r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      double v = FA[k];
      for (int l = 0; l < d; ++l) v += A[static_cast<std::size_t>(k) * d + l] * F[l];
      r2 += v * v;
    }
    worst = std::max(worst, std::sqrt(r2));
  }
  return worst;
}

/// Max over samples of || J(sigma)(B sigma + C) - B F(sigma) ||; zero iff
/// delta sigma = alpha (B sigma + C) generates a symmetry of the flow.
inline double check_symmetry_generator(const ForceField& f, std::size_t gen_index,
                                       const std::vector<std::vector<double>>& samples) {
  if (gen_index >= f.generators.size())
    throw std::logic_error("ForceField '" + f.name + "': generator index out of range");
  if (samples.empty()) throw std::invalid_argument("check_symmetry_generator: no sample points");
  const int d = f.dim;
  const auto& gen = f.generators[gen_index];
  double worst = 0.0;
  std::vector<double> delta(d), F(d), J(static_cast<std::size_t>(d) * d);
  for (const auto& s : samples) {
    check_dim(f, s.size());
    for (int k = 0; k < d; ++k) {
      double v = gen.C[k];
      for (int l = 0; l < d; ++l) v += gen.B[static_cast<std::size_t>(k) * d + l] * s[l];
      delta[k] = v;
    }
    f.force(s.data(), F.data());
    f.jacobian(s.data(), J.data());
    double r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      double v = 0.0;
      for (int l = 0; l < d; ++l)
        v += J[static_cast<std::size_t>(k) * d + l] * delta[l] -
             gen.B[static_cast<std::size_t>(k) * d + l] * F[l];
      r2 += v * v;
    }
    worst = std::max(worst, std::sqrt(r2));
  }
  return worst;
}

namespace detail {

inline double eval_poly(const std::vector<PolyTerm>& terms, const double* sigma, int dim) {
  double s = 0.0;
  for (const auto& t : terms) {
    double v = t.coeff;
    for (int a = 0; a < dim; ++a)
      for (int p = 0; p < t.powers[a]; ++p) v *= sigma[a];
    s += v;
  }
  return s;
}

inline std::vector<PolyTerm> diff_poly(const std::vector<PolyTerm>& terms, int axis) {
  std::vector<PolyTerm> out;
  for (const auto& t : terms) {
    if (t.powers[axis] == 0) continue;
    PolyTerm d = t;
    d.coeff *= t.powers[axis];
    d.powers[axis] -= 1;
    out.push_back(d);
  }
  return out;
}

}  // namespace detail

/// Force field from per-component monomial tables, with the Jacobian
/// obtained by exact term-wise differentiation.
inline ForceField make_polynomial_field(int dim, std::string name,
                                        std::vector<std::vector<PolyTerm>> components) {
  if (dim < 1 || dim > 3)
    throw std::invalid_argument("make_polynomial_field: dim must be 1, 2, or 3");
  if (components.size() != static_cast<std::size_t>(dim))
    throw std::invalid_argument("make_polynomial_field: need one term table per component");
  for (const auto& comp : components)
    for (const auto& t : comp)
      for (int a = dim; a < 3; ++a)
        if (t.powers[a] != 0)
          throw std::invalid_argument("make_polynomial_field: term uses axis beyond dim");

  std::vector<std::vector<std::vector<PolyTerm>>> deriv(dim);
  for (int k = 0; k < dim; ++k) {
    deriv[k].resize(dim);
    for (int l = 0; l < dim; ++l) deriv[k][l] = detail::diff_poly(components[k], l);
  }
  std::vector<PolyTerm> div_poly;
  for (int k = 0; k < dim; ++k)
    div_poly.insert(div_poly.end(), deriv[k][k].begin(), deriv[k][k].end());
  std::vector<std::vector<PolyTerm>> div_grad(dim);
  for (int a = 0; a < dim; ++a) div_grad[a] = detail::diff_poly(div_poly, a);

  ForceField f;
  f.dim = dim;
  f.name = std::move(name);
  f.force = [dim, components](const double* sigma, double* out) {
    for (int k = 0; k < dim; ++k) out[k] = detail::eval_poly(components[k], sigma, dim);
  };
  f.jacobian = [dim, deriv](const double* sigma, double* out) {
    for (int k = 0; k < dim; ++k)
      for (int l = 0; l < dim; ++l)
        out[static_cast<std::size_t>(k) * dim + l] = detail::eval_poly(deriv[k][l], sigma, dim);
  };
  f.divergence_gradient = [dim, div_grad](const double* sigma, double* out) {
    for (int a = 0; a < dim; ++a) out[a] = detail::eval_poly(div_grad[a], sigma, dim);
  };
  f.jacobian_is_exact = true;
  return f;
}

/// Wrap a bare force map with a finite-difference Jacobian (central,
/// h = 1e-5); reports derived from it flag the approximation.
inline ForceField make_numeric_field(int dim, std::string name,
                                     std::function<void(const double*, double*)> force,
                                     double h = 1e-5) {
  ForceField f;
  f.dim = dim;
  f.name = std::move(name);
  f.force = std::move(force);
  f.jacobian_is_exact = false;
  auto fptr = f.force;
  f.jacobian = [dim, fptr, h](const double* sigma, double* out) {
    std::vector<double> sp(sigma, sigma + dim), sm(sigma, sigma + dim), Fp(dim), Fm(dim);
    for (int l = 0; l < dim; ++l) {
      sp[l] += h;
      sm[l] -= h;
      fptr(sp.data(), Fp.data());
      fptr(sm.data(), Fm.data());
      for (int k = 0; k < dim; ++k)
        out[static_cast<std::size_t>(k) * dim + l] = (Fp[k] - Fm[k]) / (2.0 * h);
      sp[l] = sigma[l];
      sm[l] = sigma[l];
    }
  };
  return f;
}

inline void set_time_reversal(ForceField& f, std::vector<double> A) {
  const int d = f.dim;
  if (A.size() != static_cast<std::size_t>(d) * d)
    throw std::invalid_argument("set_time_reversal: matrix size mismatch");
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double v = 0.0;
      for (int k = 0; k < d; ++k)
        v += A[static_cast<std::size_t>(i) * d + k] * A[static_cast<std::size_t>(k) * d + j];
      if (std::abs(v - (i == j ? 1.0 : 0.0)) > 1e-14)
        throw std::invalid_argument("set_time_reversal: matrix is not an involution");
    }
  f.time_reversal = std::move(A);
}

// ---- built-in catalog ----------------------------------------------------

/// Uniform drift F = c.  Reversed by sigma -> -sigma; translation symmetric.
inline ForceField make_constant(std::vector<double> c) {
  const int dim = static_cast<int>(c.size());
  std::vector<std::vector<PolyTerm>> comps(dim);
  for (int k = 0; k < dim; ++k) comps[k] = {PolyTerm{c[k], {0, 0, 0}}};
  ForceField f = make_polynomial_field(dim, "constant", std::move(comps));
  std::vector<double> A(static_cast<std::size_t>(dim) * dim, 0.0);
  for (int k = 0; k < dim; ++k) A[static_cast<std::size_t>(k) * dim + k] = -1.0;
  set_time_reversal(f, std::move(A));
  for (int k = 0; k < dim; ++k) {
    ForceField::Generator g;
    g.B.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    g.C.assign(dim, 0.0);
    g.C[k] = 1.0;
    g.label = "shift_" + std::to_string(k);
    f.generators.push_back(std::move(g));
  }
  return f;
}

/// Linear relaxation F = -lambda sigma (dim 1).  Contracting flow; carries
/// no time-reversal involution.
inline ForceField make_linear(double lambda) {
  ForceField f = make_polynomial_field(1, "linear", {{PolyTerm{-lambda, {1, 0, 0}}}});
  return f;
}

/// Planar rotation F = (omega sigma_2, -omega sigma_1).
inline ForceField make_rotation(double omega) {
  ForceField f = make_polynomial_field(
      2, "rotation",
      {{PolyTerm{omega, {0, 1, 0}}}, {PolyTerm{-omega, {1, 0, 0}}}});
  set_time_reversal(f, {1.0, 0.0, 0.0, -1.0});
  ForceField::Generator g;
  g.B = {0.0, 1.0, -1.0, 0.0};
  g.C = {0.0, 0.0};
  g.label = "so2";
  f.generators.push_back(std::move(g));
  return f;
}

/// Divergence-free anharmonic stirrer F = g ((s1^2+s2^2) s2, -(s1^2+s2^2) s1),
/// the Hamiltonian flow of V = (g/4)(s1^2+s2^2)^2.
inline ForceField make_anharmonic(double g = 1.0) {
  ForceField f = make_polynomial_field(
      2, "anharmonic",
      {{PolyTerm{g, {2, 1, 0}}, PolyTerm{g, {0, 3, 0}}},
       {PolyTerm{-g, {3, 0, 0}}, PolyTerm{-g, {1, 2, 0}}}});
  set_time_reversal(f, {1.0, 0.0, 0.0, -1.0});
  ForceField::Generator gen;
  gen.B = {0.0, 1.0, -1.0, 0.0};
  gen.C = {0.0, 0.0};
  gen.label = "so2";
  f.generators.push_back(std::move(gen));
  return f;
}

}  // namespace qtrans
