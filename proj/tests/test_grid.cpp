#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <vector>

#include "qtrans/grid.hpp"
#include "test_support.hpp"

using namespace qtrans;
using namespace qtest;

namespace {

// Direct O(N^2) evaluation of the measure-weighted forward transform,
// psi_m = cell_volume * sum_j exp(-i gamma_m . sigma_j) q_j.  Slow but
// independent of the FFT path; used as the reference below.
std::vector<cplx> direct_forward(const GridPtr& g, const std::vector<cplx>& q) {
  std::vector<cplx> psi(g->size());
  double sigma[3];
  int midx[3];
  for (std::size_t m = 0; m < g->size(); ++m) {
    g->unflatten(m, midx);
    double gamma[3];
    for (int a = 0; a < g->dim(); ++a) gamma[a] = g->frequency(midx[a]);
    cplx s = 0.0;
    for (std::size_t j = 0; j < g->size(); ++j) {
      g->point(j, sigma);
      double phase = 0.0;
      for (int a = 0; a < g->dim(); ++a) phase += gamma[a] * sigma[a];
      s += std::polar(1.0, -phase) * q[j];
    }
    psi[m] = g->cell_volume() * s;
  }
  return psi;
}

}  // namespace

TEST_CASE("grid geometry and index maps") {
  auto g = ConfigurationGrid::create(2, 8, 3.0);
  CHECK(g->dim() == 2);
  CHECK(g->points_per_axis() == 8);
  CHECK(g->size() == 64);
  CHECK(g->spacing() == doctest::Approx(0.75));
  CHECK(g->cell_volume() == doctest::Approx(0.5625));
  CHECK(g->dual_weight() == doctest::Approx(1.0 / 36.0));
  CHECK(g->coordinate(0) == doctest::Approx(-3.0));
  CHECK(g->coordinate(4) == doctest::Approx(0.0));
  CHECK(g->max_frequency() == doctest::Approx(M_PI * 4 / 3.0));

  // FFT mode order: 0,1,...,n/2-1,-n/2,...,-1 scaled by pi/L.
  CHECK(g->frequency(0) == doctest::Approx(0.0));
  CHECK(g->frequency(1) == doctest::Approx(M_PI / 3.0));
  CHECK(g->frequency(4) == doctest::Approx(-4.0 * M_PI / 3.0));
  CHECK(g->frequency(7) == doctest::Approx(-M_PI / 3.0));

  int idx[2];
  for (std::size_t flat : {std::size_t{0}, std::size_t{13}, std::size_t{63}}) {
    g->unflatten(flat, idx);
    CHECK(g->flatten(idx) == flat);
  }

  // conjugate_index is an involution and negates every non-Nyquist frequency.
  for (std::size_t m = 0; m < g->size(); ++m) {
    CHECK(g->conjugate_index(g->conjugate_index(m)) == m);
    if (!g->is_nyquist(m)) {
      int mi[2], ci[2];
      g->unflatten(m, mi);
      g->unflatten(g->conjugate_index(m), ci);
      for (int a = 0; a < 2; ++a)
        CHECK(g->frequency(ci[a]) == doctest::Approx(-g->frequency(mi[a])));
    }
  }
}

TEST_CASE("grid constructor rejects bad parameters") {
  CHECK_THROWS_AS(ConfigurationGrid::create(0, 8, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ConfigurationGrid::create(4, 8, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ConfigurationGrid::create(1, 7, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ConfigurationGrid::create(1, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ConfigurationGrid::create(2, 8, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(ConfigurationGrid::create(3, 512, 1.0), std::invalid_argument);
}

TEST_CASE("forward transform matches the direct sum") {
  auto r = rng(11);
  for (int dim : {1, 2}) {
    const int n = dim == 1 ? 16 : 8;
    auto g = ConfigurationGrid::create(dim, n, 2.5);
    auto q = random_complex_field(g, r);
    auto fast = g->fourier_forward(q);
    auto slow = direct_forward(g, q);
    CHECK(max_abs_diff(fast, slow) < 1e-12 * max_abs(slow));
  }
}

TEST_CASE("single plane wave lands on a single mode") {
  auto g = ConfigurationGrid::create(1, 16, 2.0);
  const int k = 3;
  std::vector<cplx> q(g->size());
  double sigma[1];
  for (std::size_t j = 0; j < g->size(); ++j) {
    g->point(j, sigma);
    q[j] = std::polar(1.0, g->frequency(k) * sigma[0]);
  }
  auto psi = g->fourier_forward(q);
  // Total weight 2L concentrated on mode k.
  for (std::size_t m = 0; m < g->size(); ++m) {
    const double expect = (m == k) ? 4.0 : 0.0;
    CHECK(std::abs(psi[m] - expect) < 1e-12);
  }
}

TEST_CASE("transform round trip and Parseval") {
  auto r = rng(23);
  for (int dim : {1, 2, 3}) {
    const int n = dim == 3 ? 6 : 12;
    auto g = ConfigurationGrid::create(dim, n, 1.75);
    auto q = random_complex_field(g, r);
    auto psi = g->fourier_forward(q);
    auto back = g->fourier_inverse_complex(psi);
    CHECK(max_abs_diff(q, back) < 1e-12 * max_abs(q));

    const cplx grid_norm = g->inner(q, q);
    const cplx dual_norm = g->dual_inner(psi, psi);
    CHECK(std::abs(grid_norm - dual_norm) < 1e-12 * std::abs(grid_norm));
  }
}

TEST_CASE("reality constraint in the dual representation") {
  auto r = rng(37);
  auto g = ConfigurationGrid::create(2, 10, 3.0);

  auto real_field = random_real_field(g, r);
  auto psi = g->fourier_forward(real_field);
  CHECK(g->constraint_violation(psi) < 1e-12 * max_abs(psi));

  auto back = g->fourier_inverse(psi);
  CHECK(max_abs_diff(back, real_field) < 1e-12 * max_abs(real_field));

  auto complex_field = random_complex_field(g, r);
  auto psi_c = g->fourier_forward(complex_field);
  CHECK(g->constraint_violation(psi_c) > 0.1);
  CHECK_THROWS_AS(g->fourier_inverse(psi_c), std::domain_error);
}

TEST_CASE("quadrature of a boundary-supported Gaussian") {
  // Narrow Gaussian far from the wrap: grid quadrature reproduces the
  // analytic integral s*sqrt(2 pi) to spectral accuracy.
  auto g = ConfigurationGrid::create(1, 64, 4.0);
  const double s = 0.5;
  std::vector<double> f(g->size());
  double sigma[1];
  for (std::size_t j = 0; j < g->size(); ++j) {
    g->point(j, sigma);
    f[j] = std::exp(-sigma[0] * sigma[0] / (2.0 * s * s));
  }
  CHECK(g->integrate(f) == doctest::Approx(s * std::sqrt(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("spectral derivative is exact on resolvable waves") {
  auto g = ConfigurationGrid::create(1, 32, 2.0);
  for (int k : {1, 5, 15}) {
    const double gam = g->frequency(k);
    std::vector<double> f(g->size()), expect(g->size());
    double sigma[1];
    for (std::size_t j = 0; j < g->size(); ++j) {
      g->point(j, sigma);
      f[j] = std::cos(gam * sigma[0]);
      expect[j] = -gam * std::sin(gam * sigma[0]);
    }
    auto d = g->derivative(f, 0);
    CHECK(max_abs_diff(d, expect) < 1e-11 * std::max(1.0, gam));
  }
}

TEST_CASE("derivative of a smooth field matches the analytic gradient") {
  auto g = ConfigurationGrid::create(2, 48, 4.0);
  const double s = 0.45, c0 = 0.6, c1 = -0.8;
  std::vector<double> f(g->size()), dx(g->size()), dy(g->size());
  double sigma[2];
  for (std::size_t j = 0; j < g->size(); ++j) {
    g->point(j, sigma);
    const double u0 = sigma[0] - c0, u1 = sigma[1] - c1;
    const double v = std::exp(-(u0 * u0 + u1 * u1) / (2.0 * s * s));
    f[j] = v;
    dx[j] = -u0 / (s * s) * v;
    dy[j] = -u1 / (s * s) * v;
  }
  CHECK(max_abs_diff(g->derivative(f, 0), dx) < 1e-9);
  CHECK(max_abs_diff(g->derivative(f, 1), dy) < 1e-9);

  auto grad = g->gradient(g->promote(f));
  std::vector<double> gx(g->size()), gy(g->size());
  for (std::size_t j = 0; j < g->size(); ++j) {
    gx[j] = grad[0][j].real();
    gy[j] = grad[1][j].real();
  }
  CHECK(max_abs_diff(gx, dx) < 1e-9);
  CHECK(max_abs_diff(gy, dy) < 1e-9);
}

TEST_CASE("pure Nyquist oscillation has zero spectral derivative") {
  auto g = ConfigurationGrid::create(1, 16, 2.0);
  std::vector<double> f(g->size());
  double sigma[1];
  for (std::size_t j = 0; j < g->size(); ++j) {
    g->point(j, sigma);
    f[j] = std::cos(M_PI * 8 * sigma[0] / 2.0);
  }
  CHECK(max_abs(g->derivative(f, 0)) < 1e-12);
}

TEST_CASE("spectral derivative is antisymmetric under the grid inner product") {
  auto r = rng(51);
  auto g = ConfigurationGrid::create(2, 12, 2.0);
  // Holds for arbitrary sample vectors: the operator is diagonal in the
  // dual basis with imaginary entries and a zeroed Nyquist line.
  auto a = random_real_field(g, r);
  auto b = random_real_field(g, r);
  for (int axis : {0, 1}) {
    const double lhs = g->inner(a, g->derivative(b, axis));
    const double rhs = -g->inner(g->derivative(a, axis), b);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("trig interpolation reproduces samples and band-limited functions") {
  auto g = ConfigurationGrid::create(2, 16, 2.0);
  auto r = rng(77);

  // Band-limited test function: a handful of waves below the Nyquist line.
  auto value = [&](double x, double y) {
    return 0.7 * std::cos(g->frequency(2) * x + 0.3) * std::cos(g->frequency(3) * y) +
           0.4 * std::sin(g->frequency(5) * (x + y)) + 0.2;
  };
  std::vector<cplx> f(g->size());
  double sigma[2];
  for (std::size_t j = 0; j < g->size(); ++j) {
    g->point(j, sigma);
    f[j] = value(sigma[0], sigma[1]);
  }
  auto hat = g->dft(f, FFTW_FORWARD);
  std::vector<cplx> scratch(2 * 16);

  // At grid points the interpolant is an identity.
  int idx[2];
  for (std::size_t j : {std::size_t{0}, std::size_t{37}, std::size_t{255}}) {
    g->unflatten(j, idx);
    double x[2] = {g->coordinate(idx[0]), g->coordinate(idx[1])};
    CHECK(std::abs(g->interpolate(hat, x, scratch.data()) - f[j]) < 1e-12);
  }

  // Off grid it reproduces the underlying band-limited function.
  std::uniform_real_distribution<double> xd(-2.0, 2.0);
  for (int t = 0; t < 25; ++t) {
    double x[2] = {xd(r), xd(r)};
    const cplx v = g->interpolate(hat, x, scratch.data());
    CHECK(std::abs(v - value(x[0], x[1])) < 1e-11);
  }

  // Periodic wrap: shifting an evaluation point by the box period is exact
  // for sub-Nyquist content.
  double x[2] = {0.37, -1.21};
  double xs[2] = {x[0] - 4.0, x[1] + 8.0};
  CHECK(std::abs(g->interpolate(hat, x, scratch.data()) -
                 g->interpolate(hat, xs, scratch.data())) < 1e-11);

  // Real samples stay real at arbitrary points (Nyquist cosine convention).
  auto rf = smooth_random_field(g, r);
  auto rhat = g->dft(g->promote(rf), FFTW_FORWARD);
  for (int t = 0; t < 10; ++t) {
    double xx[2] = {xd(r), xd(r)};
    CHECK(std::abs(g->interpolate(rhat, xx, scratch.data()).imag()) < 1e-12);
  }
}

TEST_CASE("smooth random fields decay at the box boundary") {
  auto r = rng(99);
  auto g = ConfigurationGrid::create(2, 32, 3.0);
  auto f = smooth_random_field(g, r);
  double edge = 0.0;
  int idx[2];
  for (std::size_t j = 0; j < g->size(); ++j) {
    g->unflatten(j, idx);
    if (idx[0] == 0 || idx[1] == 0) edge = std::max(edge, std::abs(f[j]));
  }
  CHECK(edge < 1e-12 * max_abs(f));
}
