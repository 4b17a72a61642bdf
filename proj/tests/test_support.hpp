#pragma once
// Shared helpers for the unit suites: seeded RNG, random field generators,
// and reference quadrature utilities.

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "qtrans/grid.hpp"

namespace qtest {

using qtrans::ConfigurationGrid;
using qtrans::cplx;
using qtrans::GridPtr;

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline std::vector<double> random_real_field(const GridPtr& g, std::mt19937_64& r) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> f(g->size());
  for (double& v : f) v = dist(r);
  return f;
}

inline std::vector<cplx> random_complex_field(const GridPtr& g, std::mt19937_64& r) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<cplx> f(g->size());
  for (cplx& v : f) v = cplx(dist(r), dist(r));
  return f;
}

/// Periodized Gaussian with optional plane-wave modulation, evaluated on the
/// grid.  Centers and widths are constrained so the field and several of its
/// derivatives vanish to machine precision at the box boundary; states from
/// this family are effectively band limited, which every smoothness-sensitive
/// check relies on.
struct SmoothBlob {
  std::vector<double> center;   // |c| <= L/4 enforced by the generator
  std::vector<double> width;    // per-axis, in [L/14, L/10]
  std::vector<int> modulation;  // integer wave numbers, |m| <= n/8
  double amplitude = 1.0;
  double phase = 0.0;  // modulation phase offset

  double operator()(const ConfigurationGrid& g, const double* sigma) const {
    double u = 0.0;
    double arg = phase;
    for (int a = 0; a < g.dim(); ++a) {
      const double d = sigma[a] - center[a];
      u += d * d / (2.0 * width[a] * width[a]);
      arg += M_PI * modulation[a] * sigma[a] / g.half_width();
    }
    return amplitude * std::exp(-u) * std::cos(arg);
  }
};

inline SmoothBlob random_blob(const GridPtr& g, std::mt19937_64& r) {
  const double L = g->half_width();
  const int n = g->points_per_axis();
  std::uniform_real_distribution<double> cdist(-L / 4.0, L / 4.0);
  std::uniform_real_distribution<double> wdist(L / 14.0, L / 10.0);
  std::uniform_int_distribution<int> mdist(-std::max(1, n / 8), std::max(1, n / 8));
  std::uniform_real_distribution<double> pdist(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> adist(0.5, 1.5);
  SmoothBlob b;
  for (int a = 0; a < g->dim(); ++a) {
    b.center.push_back(cdist(r));
    b.width.push_back(wdist(r));
    b.modulation.push_back(mdist(r));
  }
  b.amplitude = adist(r);
  b.phase = pdist(r);
  return b;
}

/// Superposition of a few random blobs sampled on the grid; smooth, real,
/// and numerically supported away from the box boundary.
inline std::vector<double> smooth_random_field(const GridPtr& g, std::mt19937_64& r,
                                               int blobs = 3) {
  std::vector<SmoothBlob> parts;
  for (int k = 0; k < blobs; ++k) parts.push_back(random_blob(g, r));
  std::vector<double> f(g->size());
  double sigma[3];
  for (std::size_t i = 0; i < g->size(); ++i) {
    g->point(i, sigma);
    double v = 0.0;
    for (const auto& b : parts) v += b(*g, sigma);
    f[i] = v;
  }
  return f;
}

inline std::vector<cplx> smooth_random_complex_field(const GridPtr& g, std::mt19937_64& r,
                                                     int blobs = 3) {
  std::vector<double> re = smooth_random_field(g, r, blobs);
  std::vector<double> im = smooth_random_field(g, r, blobs);
  std::vector<cplx> f(g->size());
  for (std::size_t i = 0; i < g->size(); ++i) f[i] = cplx(re[i], im[i]);
  return f;
}

inline void normalize(const GridPtr& g, std::vector<double>& f) {
  double n2 = g->inner(f, f);
  const double s = 1.0 / std::sqrt(n2);
  for (double& v : f) v *= s;
}

inline void normalize(const GridPtr& g, std::vector<cplx>& f) {
  double n2 = std::real(g->inner(f, f));
  const double s = 1.0 / std::sqrt(n2);
  for (cplx& v : f) v *= s;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs(const std::vector<cplx>& a) {
  double worst = 0.0;
  for (const auto& v : a) worst = std::max(worst, std::abs(v));
  return worst;
}

inline double max_abs(const std::vector<double>& a) {
  double worst = 0.0;
  for (const auto& v : a) worst = std::max(worst, std::abs(v));
  return worst;
}

}  // namespace qtest
