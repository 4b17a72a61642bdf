#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <vector>

#include "qtrans/model.hpp"
#include "qtrans/operators.hpp"
#include "qtrans/wavefunction.hpp"
#include "test_support.hpp"

using namespace qtrans;
using namespace qtest;

namespace {

double hermiticity_defect(const GridOperator& A, std::mt19937_64& r, int pairs = 20) {
  double worst = 0.0;
  for (int t = 0; t < pairs; ++t) {
    auto a = random_complex_field(A.grid, r);
    auto b = random_complex_field(A.grid, r);
    const cplx lhs = A.grid->inner(a, A.apply(b));
    const cplx rhs = A.grid->inner(A.apply(a), b);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  return worst;
}

double linearity_defect(const GridOperator& A, std::mt19937_64& r) {
  auto a = random_complex_field(A.grid, r);
  auto b = random_complex_field(A.grid, r);
  const cplx al(0.7, -1.3), be(-0.4, 0.9);
  std::vector<cplx> combo(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) combo[i] = al * a[i] + be * b[i];
  auto lhs = A.apply(combo);
  auto Aa = A.apply(a);
  auto Ab = A.apply(b);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(lhs[i] - (al * Aa[i] + be * Ab[i])));
    scale = std::max(scale, std::abs(lhs[i]));
  }
  return worst / std::max(1.0, scale);
}

/// Centered Gaussian with a mild polynomial prefactor: wide enough for the
/// grid to resolve it, narrow enough to be numerically zero at the box
/// boundary, so coordinate multiplications stay alias free.
std::vector<cplx> tight_blob(const GridPtr& g, double width = 0.55) {
  std::vector<cplx> v(g->size());
  const double w = width;
  double s[3];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    double u = 0.0;
    for (int a = 0; a < g->dim(); ++a) u += s[a] * s[a];
    v[i] = (1.0 + 0.3 * s[0]) * std::exp(-u / (2.0 * w * w));
  }
  return v;
}

RealWaveFunction gaussian_state(const GridPtr& g, double center, double s_w) {
  // Root of a normal density with variance s_w^2 (1D).
  std::vector<double> w(g->size());
  double s[1];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    const double d = s[0] - center;
    w[i] = std::exp(-d * d / (2.0 * s_w * s_w));
  }
  return from_probability(g, w);
}

}  // namespace

TEST_CASE("operator type invariants: linearity and hermiticity") {
  auto r = rng(3001);
  auto g1 = ConfigurationGrid::create(1, 32, 4.0);
  auto g2 = ConfigurationGrid::create(2, 16, 4.0);

  std::vector<GridOperator> ops;
  ops.push_back(sigma_op(g2, 0));
  ops.push_back(gamma_op(g2, 1));
  ops.push_back(hamiltonian(make_linear(1.0), g1));
  ops.push_back(hamiltonian(make_rotation(1.0), g2));
  ops.push_back(hamiltonian(make_anharmonic(0.8), g2));
  ops.push_back(hamiltonian(make_constant({1.0}), g1));
  ops.push_back(angular_momentum_op(g2));
  // Squared Hamiltonian as a composition is hermitian on the nose.
  auto H = hamiltonian(make_rotation(1.0), g2);
  auto H2 = compose(H, H);
  H2.hermitian = true;
  ops.push_back(H2);
  // A dilation generator exercises the nonzero-trace measure term.
  ForceField::Generator dilation{{1.0, 0.0, 0.0, 1.0}, {0.0, 0.0}, "dilation"};
  ops.push_back(symmetry_generator(dilation, g2));

  for (const auto& op : ops) {
    CAPTURE(op.label);
    CHECK(linearity_defect(op, r) < 1e-12);
    CHECK(hermiticity_defect(op, r) < 1e-10);
  }
}

TEST_CASE("coordinate operator: diagonal action and first moments") {
  auto g = ConfigurationGrid::create(1, 128, 8.0);
  auto X = sigma_op(g, 0);

  // Diagonal action on the uniform state samples the coordinate itself.
  std::vector<cplx> uniform(g->size(), 1.0);
  auto xu = X.apply(uniform);
  double s[1];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    CHECK(xu[i] == cplx(s[0], 0.0));
  }

  auto centered = gaussian_state(g, 0.0, 1.0);
  CHECK(std::abs(real_expectation(centered, X)) < 1e-12);

  auto shifted = gaussian_state(g, 1.5, 1.0);
  // Quadrature oracle: direct first moment of w = q^2.
  auto w = to_probability(shifted);
  std::vector<double> xw(g->size());
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    xw[i] = s[0] * w[i];
  }
  const double oracle = g->integrate(xw);
  CHECK(real_expectation(shifted, X) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(real_expectation(shifted, X) == doctest::Approx(1.5).epsilon(1e-8));

  CHECK_THROWS_AS(sigma_op(g, 1), std::invalid_argument);
}

TEST_CASE("frequency operator: roughness moments and plane waves") {
  auto r = rng(3002);
  auto g = ConfigurationGrid::create(1, 128, 8.0);
  auto G = gamma_op(g, 0);

  // First moment vanishes identically on real states.
  RealWaveFunction q{g, smooth_random_field(g, r), 0.0};
  normalize(q);
  CHECK(std::abs(expectation(q, G)) < 1e-12);

  // Second moment of the unit-variance Gaussian: integral of (dq/dsigma)^2.
  auto gauss = gaussian_state(g, 0.0, 1.0);
  auto G2 = compose(G, G);
  G2.hermitian = true;
  CHECK(real_expectation(gauss, G2) == doctest::Approx(0.25).epsilon(1e-8));

  // Grid-aligned plane wave is an eigenstate with its frequency.
  const double g0 = g->frequency(5);
  std::vector<cplx> wave(g->size());
  double s[1];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    wave[i] = std::polar(1.0, g0 * s[0]);
  }
  auto Gw = G.apply(wave);
  for (std::size_t i = 0; i < g->size(); ++i) CHECK(std::abs(Gw[i] - g0 * wave[i]) < 1e-11);

  CHECK_THROWS_AS(gamma_op(g, 2), std::invalid_argument);
}

TEST_CASE("canonical commutators") {
  auto g = ConfigurationGrid::create(2, 64, 4.0);
  auto X1 = sigma_op(g, 0);
  auto X2 = sigma_op(g, 1);
  auto G1 = gamma_op(g, 0);

  // [sigma_1, gamma_1] = i on states supported away from the box wrap.
  auto v = tight_blob(g, 0.5);
  auto cv = commutator(X1, G1).apply(v);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    worst = std::max(worst, std::abs(cv[i] - cplx(0.0, 1.0) * v[i]));
    scale = std::max(scale, std::abs(v[i]));
  }
  CHECK(worst / scale < 1e-10);

  // Mixed-axis pair commutes exactly on the grid: derivative along axis 0,
  // multiplication along axis 1.
  auto r = rng(3003);
  auto z = random_complex_field(g, r);
  auto mixed = commutator(X2, G1).apply(z);
  CHECK(max_abs(mixed) < 1e-12 * max_abs(z));

  // Diagonal operators commute bitwise.
  auto diag = commutator(X1, X2).apply(z);
  CHECK(max_abs(diag) < 1e-14 * max_abs(z));
}

TEST_CASE("transport Hamiltonian: special cases") {
  // Constant drift c = 1 reduces to the frequency operator exactly.
  auto g1 = ConfigurationGrid::create(1, 64, 3.0);
  auto Hc = hamiltonian(make_constant({1.0}), g1);
  auto G = gamma_op(g1, 0);
  auto r = rng(3004);
  auto z = random_complex_field(g1, r);
  CHECK(max_abs_diff(Hc.apply(z), G.apply(z)) < 1e-14 * max_abs(z));

  // Rotation: the m = 1 angular harmonic with a Gaussian profile obeys
  // H v = -v up to boundary tails.
  auto g2 = ConfigurationGrid::create(2, 64, 8.0);
  auto Hrot = hamiltonian(make_rotation(1.0), g2);
  std::vector<cplx> v(g2->size());
  double s[2];
  for (std::size_t i = 0; i < g2->size(); ++i) {
    g2->point(i, s);
    const double r2 = s[0] * s[0] + s[1] * s[1];
    v[i] = cplx(s[0], s[1]) * std::exp(-r2 / (2.0 * 0.8 * 0.8));
  }
  auto Hv = Hrot.apply(v);
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < g2->size(); ++i) {
    worst = std::max(worst, std::abs(Hv[i] + v[i]));
    scale = std::max(scale, std::abs(v[i]));
  }
  CHECK(worst / scale < 1e-8);

  // On real input the action is purely imaginary, so iH is a real map.
  RealWaveFunction q{g2, smooth_random_field(g2, r), 0.0};
  auto Hq = Hrot.apply(q.values);
  double re = 0.0;
  for (const auto& x : Hq) re = std::max(re, std::abs(x.real()));
  CHECK(re < 1e-13 * max_abs(Hq));

  CHECK_THROWS_AS(hamiltonian(make_rotation(1.0), g1), std::invalid_argument);
}

TEST_CASE("flow generator commutes with the rotation symmetry") {
  // For the rotation model both H and L3 are built from cross-axis factors
  // that commute exactly on the grid, so [L3, H] vanishes identically.
  auto g = ConfigurationGrid::create(2, 24, 5.0);
  auto H = hamiltonian(make_rotation(1.3), g);
  auto L3 = angular_momentum_op(g);
  auto r = rng(3005);
  auto z = random_complex_field(g, r);
  auto c = commutator(L3, H).apply(z);
  CHECK(max_abs(c) < 1e-10 * max_abs(z));
}

TEST_CASE("reality projector commutes with the flow generator") {
  // In configuration space the constraint projector is the real-part map;
  // the flow generator K = iH is a real linear map, so they commute.  (The
  // antilinear half of the projector anti-commutes with H itself, which is
  // why the check is phrased through K.)
  auto g = ConfigurationGrid::create(2, 16, 4.0);
  auto r = rng(3006);
  for (const ForceField& f : {make_rotation(1.0), make_anharmonic(0.7)}) {
    auto H = hamiltonian(f, g);
    auto z = random_complex_field(g, r);
    auto Hz = H.apply(z);
    // K z, real and imaginary lanes: K(Re z) = Re(K z).
    std::vector<double> rez(g->size()), imz(g->size());
    for (std::size_t i = 0; i < g->size(); ++i) {
      rez[i] = z[i].real();
      imz[i] = z[i].imag();
    }
    auto Kre = apply_flow_generator(H, rez);
    auto Kim = apply_flow_generator(H, imz);
    double worst = 0.0;
    for (std::size_t i = 0; i < g->size(); ++i) {
      const cplx Kz = cplx(0.0, 1.0) * Hz[i];
      worst = std::max(worst, std::abs(Kz - cplx(Kre[i], Kim[i])));
    }
    CHECK(worst < 1e-12 * max_abs(Hz));
  }
}

TEST_CASE("squared Hamiltonian: explicit expansion vs composition") {
  auto r = rng(3007);
  auto g1 = ConfigurationGrid::create(1, 128, 6.0);
  auto g2 = ConfigurationGrid::create(2, 96, 6.0);

  // Constant model: explicit form is exactly gamma^2.
  {
    auto H2x = hamiltonian_squared_explicit(make_constant({1.0}), g1);
    auto G = gamma_op(g1, 0);
    auto z = smooth_random_complex_field(g1, r);
    CHECK(max_abs_diff(H2x.apply(z), compose(G, G).apply(z)) < 1e-10 * max_abs(z));
  }

  for (const ForceField& f : {make_linear(1.0), make_rotation(1.0), make_anharmonic(0.6)}) {
    auto g = f.dim == 1 ? g1 : g2;
    auto H = hamiltonian(f, g);
    auto H2x = hamiltonian_squared_explicit(f, g);
    for (int t = 0; t < 20; ++t) {
      auto z = smooth_random_complex_field(g, r);
      auto a = compose(H, H).apply(z);
      auto b = H2x.apply(z);
      CHECK(max_abs_diff(a, b) < 1e-8 * std::max(1.0, max_abs(a)));
    }
  }

  // Missing second-derivative data: falls back to the composed operator;
  // disabled fallback reports the gap.
  {
    auto numeric = make_numeric_field(1, "linear_fd", [](const double* s, double* out) {
      out[0] = -s[0];
    });
    auto fallback = hamiltonian_squared_explicit(numeric, g1, true);
    auto H = hamiltonian(make_linear(1.0), g1);
    auto z = smooth_random_complex_field(g1, r);
    CHECK(max_abs_diff(compose(H, H).apply(z), fallback.apply(z)) < 1e-9 * max_abs(z));
    CHECK_THROWS_AS(hamiltonian_squared_explicit(numeric, g1, false), std::invalid_argument);
  }
}

TEST_CASE("squared-Hamiltonian expectation equals the squared-gradient form") {
  // <H^2> can be computed either from the second-order operator or as the
  // integral of (F_k d_k q + half (div F) q)^2; both are time independent.
  auto r = rng(3008);
  auto g = ConfigurationGrid::create(2, 96, 6.0);
  for (const ForceField& f : {make_rotation(1.0), make_anharmonic(0.6)}) {
    auto F = sample_force(f, g);
    auto div = sample_divergence(f, g);
    auto H = hamiltonian(f, g);
    for (int t = 0; t < 5; ++t) {
      RealWaveFunction q{g, smooth_random_field(g, r), 0.0};
      normalize(q);
      auto H2 = compose(H, H);
      H2.hermitian = true;
      const double via_op = real_expectation(q, H2);

      std::vector<double> kq(g->size(), 0.0);
      for (int k = 0; k < g->dim(); ++k) {
        auto dk = g->derivative(q.values, k);
        for (std::size_t i = 0; i < g->size(); ++i) kq[i] += F[k][i] * dk[i];
      }
      for (std::size_t i = 0; i < g->size(); ++i) kq[i] += 0.5 * div[i] * q.values[i];
      const double via_quad = g->inner(kq, kq);
      CHECK(via_op == doctest::Approx(via_quad).epsilon(1e-8));
    }
  }
}

TEST_CASE("Heisenberg derivatives") {
  auto r = rng(3009);
  auto g = ConfigurationGrid::create(1, 128, 6.0);
  auto f = make_linear(1.0);
  auto H = hamiltonian(f, g);
  auto X = sigma_op(g, 0);

  // i[H, sigma] acts as multiplication by F(sigma) = -sigma.
  auto dX = heisenberg_derivative(H, X);
  for (int t = 0; t < 5; ++t) {
    auto z = smooth_random_complex_field(g, r);
    auto got = dX.apply(z);
    double worst = 0.0, scale = 0.0;
    double s[1];
    for (std::size_t i = 0; i < g->size(); ++i) {
      g->point(i, s);
      worst = std::max(worst, std::abs(got[i] - cplx(-s[0]) * z[i]));
      scale = std::max(scale, std::abs(z[i]));
    }
    CHECK(worst / scale < 1e-9);
  }

  // Self-commutation is numerically exact.
  auto dH = heisenberg_derivative(H, H);
  auto z = random_complex_field(g, r);
  CHECK(max_abs(dH.apply(z)) < 1e-12 * max_abs(z));
}

TEST_CASE("symmetry generators as grid operators") {
  auto g = ConfigurationGrid::create(2, 32, 4.0);
  auto r = rng(3010);

  // The standard angular momentum annihilates the mean on real states.
  auto L3 = angular_momentum_op(g);
  RealWaveFunction q{g, smooth_random_field(g, r), 0.0};
  normalize(q);
  CHECK(std::abs(expectation(q, L3)) < 1e-12);

  // L3 action matches -i(sigma_1 d_2 - sigma_2 d_1) on tight states.
  auto v = tight_blob(g);
  auto got = L3.apply(v);
  auto d1 = g->derivative(v, 0);
  auto d2 = g->derivative(v, 1);
  double worst = 0.0, scale = 0.0;
  double s[2];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    const cplx expect = cplx(0.0, -1.0) * (s[0] * d2[i] - s[1] * d1[i]);
    worst = std::max(worst, std::abs(got[i] - expect));
    scale = std::max(scale, std::abs(v[i]));
  }
  CHECK(worst / scale < 1e-10);

  // Shift generator reproduces gamma_1 exactly (identical arithmetic).
  auto g1 = ConfigurationGrid::create(1, 32, 2.0);
  ForceField::Generator shift{{0.0}, {1.0}, "shift"};
  auto Lshift = symmetry_generator(shift, g1);
  auto z = random_complex_field(g1, r);
  CHECK(max_abs_diff(Lshift.apply(z), gamma_op(g1, 0).apply(z)) < 1e-15 * max_abs(z));

  // The rotation model's declared generator gives the same operator up to
  // orientation: its flow is clockwise, so the quantum generator is -L3.
  auto f = make_rotation(1.0);
  auto Lgen = symmetry_generator(f.generators[0], g);
  auto w = random_complex_field(g, r);
  auto a = Lgen.apply(w);
  auto b = L3.apply(w);
  double diff = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) diff = std::max(diff, std::abs(a[i] + b[i]));
  CHECK(diff < 1e-12 * max_abs(w));

  ForceField::Generator bad{{0.0}, {1.0, 2.0}, "bad"};
  CHECK_THROWS_AS(symmetry_generator(bad, g), std::invalid_argument);
}

TEST_CASE("dense spectrum of the constant model") {
  // c = 1 on [-pi, pi): H = gamma, eigenvalues are the integer frequencies
  // with the Nyquist line zeroed.
  auto g = ConfigurationGrid::create(1, 64, M_PI);
  auto H = hamiltonian(make_constant({1.0}), g);
  auto res = spectrum(H, 10);

  // Sorted by |E|: two static modes (uniform + Nyquist), then +-1, +-2, ...
  CHECK(res.eigenvalues[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.eigenvalues[1] == doctest::Approx(0.0).epsilon(1e-12));
  for (int m = 1; m <= 4; ++m) {
    CHECK(res.eigenvalues[2 * m] == doctest::Approx(static_cast<double>(m)).epsilon(1e-12));
    CHECK(res.eigenvalues[2 * m + 1] == doctest::Approx(-static_cast<double>(m)).epsilon(1e-12));
  }
  for (double r : res.residuals) CHECK(r < 1e-8);

  // Pairing across the whole report.
  for (double E : res.eigenvalues) {
    bool paired = false;
    for (double E2 : res.eigenvalues)
      if (std::abs(E + E2) < 1e-10) paired = true;
    CHECK(paired);
  }

  // Any real eigenvector corresponds to a static state.
  for (std::size_t n = 0; n < res.eigenvalues.size(); ++n) {
    double im = 0.0;
    for (const auto& v : res.eigenvectors[n]) im = std::max(im, std::abs(v.imag()));
    if (im < 1e-10) CHECK(std::abs(res.eigenvalues[n]) < 1e-8);
  }

  // Oscillating eigenvectors and their conjugates are orthogonal, so the
  // real part keeps unit norm at all times.
  const auto& phi = res.eigenvectors[2];
  cplx self = 0.0;
  for (const auto& v : phi) self += v * v;
  CHECK(std::abs(self) * g->cell_volume() < 1e-10);
}

TEST_CASE("rotation spectrum contains the integer tower") {
  auto g = ConfigurationGrid::create(2, 32, 6.0);
  auto H = hamiltonian(make_rotation(1.0), g);
  auto L3 = angular_momentum_op(g);
  SpectrumOptions opts;
  opts.degeneracy_generator = &L3;
  opts.residual_tol = 1e-7;
  auto res = spectrum(H, 320, opts);

  for (double target : {0.0, 1.0, -1.0, 2.0, -2.0}) {
    double best = 1e9;
    for (double E : res.eigenvalues) best = std::min(best, std::abs(E - target));
    CAPTURE(target);
    CHECK(best < 1e-3);
  }
  for (double r : res.residuals) CHECK(r < 1e-7);
}

TEST_CASE("periodic states from eigenpairs") {
  auto g = ConfigurationGrid::create(1, 64, M_PI);
  auto H = hamiltonian(make_constant({1.0}), g);
  auto res = spectrum(H, 6);

  // Index 2 is the E = +1 mode.
  const std::size_t n = 2;
  const double E = res.eigenvalues[n];
  REQUIRE(E == doctest::Approx(1.0));

  // t = 0 reproduces the real part of the eigenvector.
  auto q0 = periodic_state(res, n, 0.0);
  for (std::size_t i = 0; i < g->size(); ++i)
    CHECK(q0.values[i] == doctest::Approx(res.eigenvectors[n][i].real()).epsilon(1e-12));

  // Unit norm at arbitrary times; probability is periodic with 2 pi / E.
  for (double t : {0.0, 0.3, 1.7}) {
    auto qt = periodic_state(res, n, t);
    CHECK(norm(qt) == doctest::Approx(1.0).epsilon(1e-10));
    auto qT = periodic_state(res, n, t + 2.0 * M_PI / E);
    auto w1 = to_probability(qt);
    auto w2 = to_probability(qT);
    CHECK(max_abs_diff(w1, w2) < 1e-10);
  }

  // Eigenstate of the squared Hamiltonian.
  auto H2 = compose(H, H);
  auto qt = periodic_state(res, n, 0.4);
  auto H2q = H2.apply(qt.values);
  double worst = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i)
    worst = std::max(worst, std::abs(H2q[i] - E * E * qt.values[i]));
  CHECK(worst < 1e-7);

  // Static states carry no phase evolution.
  CHECK_THROWS_AS(periodic_state(res, 0, 1.0), std::domain_error);
}

TEST_CASE("iterative spectrum matches the dense path") {
  auto g = ConfigurationGrid::create(1, 32, M_PI);
  auto H = hamiltonian(make_constant({1.0}), g);
  auto dense = spectrum(H, 6);

  SpectrumOptions opts;
  opts.force_iterative = true;
  opts.max_iterations = 64;
  auto iter = spectrum(H, 6, opts);
  for (std::size_t n = 0; n < 6; ++n) {
    CHECK(iter.eigenvalues[n] == doctest::Approx(dense.eigenvalues[n]).epsilon(1e-9));
    CHECK(iter.residuals[n] < 1e-8);
  }

  // Truncated budget on a grid beyond the full-subspace size resolves the
  // largest-|E| pairs, which sit at the well separated bottom edge of the
  // squared generator's spectrum.  Eigenvalues are the resolved frequencies
  // pi*m/L = m; the matching eigenfunctions are single waves with constant
  // modulus sqrt(2 / box volume).
  auto gbig = ConfigurationGrid::create(1, 256, M_PI);
  auto Hbig = hamiltonian(make_constant({1.0}), gbig);
  SpectrumOptions trunc;
  trunc.force_iterative = true;
  trunc.max_iterations = 100;
  trunc.target = SpectrumTarget::LargestMagnitude;
  auto itb = spectrum(Hbig, 4, trunc);
  const double flat = 1.0 / std::sqrt(M_PI);
  for (std::size_t n = 0; n < 4; ++n) {
    const double want = (n < 2 ? 127.0 : 126.0) * (n % 2 == 0 ? 1.0 : -1.0);
    CHECK(itb.eigenvalues[n] == doctest::Approx(want).epsilon(1e-9));
    CHECK(itb.residuals[n] < 1e-8);
    for (double m : itb.moduli[n]) CHECK(m == doctest::Approx(flat).epsilon(1e-8));
  }

  // The same budget cannot settle the smallest-|E| end (its level spacing is
  // tiny relative to the spectral width), and the solver says so instead of
  // returning unconverged directions.
  SpectrumOptions small = trunc;
  small.target = SpectrumTarget::SmallestMagnitude;
  CHECK_THROWS_WITH_AS(spectrum(Hbig, 6, small),
                       doctest::Contains("iteration budget"), std::runtime_error);

  // A generic contracting model, iterative against dense.
  auto gl = ConfigurationGrid::create(1, 64, 6.0);
  auto Hl = hamiltonian(make_linear(1.0), gl);
  auto dl = spectrum(Hl, 4);
  SpectrumOptions full;
  full.force_iterative = true;
  full.max_iterations = 64;
  auto il = spectrum(Hl, 4, full);
  for (std::size_t n = 0; n < 4; ++n)
    CHECK(il.eigenvalues[n] == doctest::Approx(dl.eigenvalues[n]).epsilon(1e-9));
}

TEST_CASE("expectation values and the quantum rule") {
  auto r = rng(3011);
  auto g = ConfigurationGrid::create(1, 128, 8.0);
  auto gauss = gaussian_state(g, 0.0, 1.0);

  CHECK(real_expectation(gauss, identity_op(g)) == doctest::Approx(1.0).epsilon(1e-12));

  auto H = hamiltonian(make_linear(1.0), g);
  CHECK(std::abs(expectation(gauss, H)) < 1e-12);

  // Classical observable sigma^2 against the unit-variance Gaussian.
  std::vector<double> s2(g->size());
  double s[1];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    s2[i] = s[0] * s[0];
  }
  auto A = multiplication_op(g, s2, "sigma^2");
  const double via_op = real_expectation(gauss, A);
  const double via_classical = classical_expectation(gauss, s2);
  CHECK(via_op == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::abs(via_op - via_classical) < 1e-12);

  // Frequency-side evaluation agrees with the configuration-side one and
  // leaves a transform note.
  auto psi = to_frequency(gauss);
  auto G = gamma_op(g, 0);
  auto G2 = compose(G, G);
  G2.hermitian = true;
  std::vector<std::string> notes;
  const double freq_side = real_expectation(psi, G2, 1e-10, &notes);
  const double conf_side = real_expectation(gauss, G2);
  CHECK(std::abs(freq_side - conf_side) < 1e-10);
  CHECK(notes.size() == 1);

  // Same number via the diagonal dual-basis sum.
  const double dual = spectral_expectation(psi, [](const double* gg) { return gg[0] * gg[0]; });
  CHECK(dual == doctest::Approx(conf_side).epsilon(1e-10));

  // Non-finite propagation is reported.
  std::vector<double> bad(g->size(), 0.0);
  bad[5] = std::numeric_limits<double>::infinity();
  auto B = multiplication_op(g, bad, "bad");
  CHECK_THROWS_AS(expectation(gauss, B), std::runtime_error);
}
