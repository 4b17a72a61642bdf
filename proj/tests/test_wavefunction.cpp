#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "qtrans/wavefunction.hpp"
#include "test_support.hpp"

using namespace qtrans;
using namespace qtest;

TEST_CASE("root embedding of a uniform distribution") {
  auto g = ConfigurationGrid::create(2, 8, 3.0);
  std::vector<double> w(g->size(), 0.37);  // any constant; Z rescales it away
  auto q = from_probability(g, w);
  const double expect = std::pow(2.0 * 3.0, -1.0);  // (2L)^(-dim/2), dim = 2
  for (double v : q.values) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  CHECK(norm(q) == doctest::Approx(1.0).epsilon(1e-12));

  auto back = to_probability(q);
  for (double v : back) CHECK(v == doctest::Approx(1.0 / 36.0).epsilon(1e-12));
}

TEST_CASE("root embedding of a unit-variance Gaussian") {
  auto g = ConfigurationGrid::create(1, 128, 8.0);
  std::vector<double> w(g->size());
  double s[1];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    w[i] = std::exp(-s[0] * s[0] / 2.0);
  }
  auto q = from_probability(g, w);
  // Expected q = (2 pi)^(-1/4) exp(-sigma^2/4); box truncation error is far
  // below the tolerance at L = 8.
  const double amp = std::pow(2.0 * M_PI, -0.25);
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    CHECK(std::abs(q.values[i] - amp * std::exp(-s[0] * s[0] / 4.0)) < 1e-10);
  }
  CHECK(g->integrate(to_probability(q)) == doctest::Approx(1.0).epsilon(2e-8));
}

TEST_CASE("signs flow through the embedding but not the probability") {
  auto g = ConfigurationGrid::create(1, 32, 2.0);
  std::vector<double> w(g->size(), 1.0);
  std::vector<double> signs(g->size(), 1.0);
  double s[1];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    if (s[0] < 0.0) signs[i] = -1.0;
  }
  auto plain = from_probability(g, w);
  auto flipped = from_probability(g, w, &signs);
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, s);
    CHECK(flipped.values[i] == doctest::Approx((s[0] < 0.0 ? -1.0 : 1.0) * plain.values[i]));
  }
  CHECK(max_abs_diff(to_probability(plain), to_probability(flipped)) < 1e-15);

  // Round trip recovers q up to the sign mask.
  auto again = from_probability(g, to_probability(flipped), &signs);
  CHECK(max_abs_diff(again.values, flipped.values) < 1e-12);
}

TEST_CASE("embedding rejects invalid distributions") {
  auto g = ConfigurationGrid::create(1, 8, 1.0);
  std::vector<double> w(g->size(), 1.0);
  w[3] = -1e-9;
  CHECK_THROWS_AS(from_probability(g, w), std::domain_error);
  std::vector<double> zero(g->size(), 0.0);
  CHECK_THROWS_AS(from_probability(g, zero), std::domain_error);
  std::vector<double> short_w(g->size() - 1, 1.0);
  CHECK_THROWS_AS(from_probability(g, short_w), std::invalid_argument);
}

TEST_CASE("frequency representation: norms, overlaps, constraint") {
  auto r = rng(17);
  auto g = ConfigurationGrid::create(2, 16, 3.0);
  auto f = smooth_random_field(g, r);
  RealWaveFunction q{g, f, 0.0};
  normalize(q);

  auto psi = to_frequency(q);
  CHECK(norm(psi) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(constraint_residual(psi) < 1e-13);

  auto q2 = to_configuration(psi);
  CHECK(max_abs_diff(q2.values, q.values) < 1e-12);

  auto f2 = smooth_random_field(g, r);
  RealWaveFunction p{g, f2, 0.0};
  normalize(p);
  const double real_ov = overlap(q, p);
  const cplx freq_ov = overlap(to_frequency(q), to_frequency(p));
  CHECK(std::abs(freq_ov - real_ov) < 1e-12);
}

TEST_CASE("constraint projector") {
  auto r = rng(29);
  auto g = ConfigurationGrid::create(1, 16, 2.0);

  // Single positive mode splits half/half onto the +/- pair.
  ComplexWaveFunction one{g, std::vector<cplx>(g->size(), 0.0), 0.0, false};
  one.values[3] = 1.0;
  auto proj = project_constraint(one);
  CHECK(std::abs(proj.values[3] - proj.values[13]) < 1e-15);  // conj pair, real equal
  CHECK(std::abs(proj.values[3]) == doctest::Approx(std::abs(proj.values[13])));
  CHECK(norm(proj) == doctest::Approx(1.0).epsilon(1e-14));
  for (std::size_t m = 0; m < g->size(); ++m)
    if (m != 3 && m != 13) CHECK(std::abs(proj.values[m]) < 1e-15);

  // Idempotence: constrained input passes through (up to normalization).
  auto rf = random_real_field(g, r);
  RealWaveFunction q{g, rf, 0.0};
  normalize(q);
  auto psi = to_frequency(q);
  auto psi2 = project_constraint(psi);
  CHECK(max_abs_diff(psi.values, psi2.values) < 1e-14);

  // Random unconstrained input becomes exactly constrained and real-space real.
  ComplexWaveFunction tilde{g, random_complex_field(g, r), 0.0, false};
  auto fixed = project_constraint(tilde);
  CHECK(constraint_residual(fixed) < 1e-14);
  auto back = g->fourier_inverse_complex(fixed.values);
  double max_imag = 0.0;
  for (const auto& v : back) max_imag = std::max(max_imag, std::abs(v.imag()));
  CHECK(max_imag < 1e-13);

  // Projecting twice changes nothing further.
  auto fixed2 = project_constraint(fixed);
  CHECK(max_abs_diff(fixed.values, fixed2.values) < 1e-15);

  // Purely anti-real input is annihilated.
  ComplexWaveFunction anti{g, std::vector<cplx>(g->size(), 0.0), 0.0, false};
  anti.values[3] = cplx(0.0, 1.0);
  anti.values[13] = cplx(0.0, 1.0);  // conj(anti[3]) = -i = -(anti[13]) -> cancels
  CHECK_THROWS_AS(project_constraint(anti), std::domain_error);
}

TEST_CASE("grid mismatch is rejected") {
  auto g1 = ConfigurationGrid::create(1, 8, 1.0);
  auto g2 = ConfigurationGrid::create(1, 8, 2.0);
  RealWaveFunction a{g1, std::vector<double>(g1->size(), 1.0), 0.0};
  RealWaveFunction b{g2, std::vector<double>(g2->size(), 1.0), 0.0};
  CHECK_THROWS_AS(overlap(a, b), std::invalid_argument);
}
