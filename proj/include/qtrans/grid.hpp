#pragma once
// Periodic configuration-space grid with spectral transforms.
//
// The box is [-L, L)^dim sampled with n points per axis.  Transform
// conventions:
//   psi(gamma)   = cell_volume * sum_j exp(-i gamma . sigma_j) q_j
//   q(sigma_j)   = dual_weight * sum_m exp(+i gamma_m . sigma_j) psi_m
// with gamma_m = pi*m/L, m in {-n/2, ..., n/2-1} (FFT index order), and
// dual_weight = (1/(2L))^dim.  Under these measures the forward/inverse
// pair is an exact isometry between the grid quadrature and the dual sum.

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtrans {

using cplx = std::complex<double>;

class ConfigurationGrid;
using GridPtr = std::shared_ptr<const ConfigurationGrid>;

class ConfigurationGrid {
 public:
  static constexpr std::size_t kMaxTotalPoints = std::size_t{1} << 22;

  static GridPtr create(int dim, int points_per_axis, double half_width) {
    return GridPtr(new ConfigurationGrid(dim, points_per_axis, half_width));
  }

  ConfigurationGrid(const ConfigurationGrid&) = delete;
  ConfigurationGrid& operator=(const ConfigurationGrid&) = delete;

  ~ConfigurationGrid() {
    fftw_destroy_plan(plan_fwd_);
    fftw_destroy_plan(plan_bwd_);
  }

  int dim() const { return dim_; }
  int points_per_axis() const { return n_; }
  double half_width() const { return L_; }
  std::size_t size() const { return total_; }
  double cell_volume() const { return cell_volume_; }
  double dual_weight() const { return dual_weight_; }
  double spacing() const { return 2.0 * L_ / n_; }
  double max_frequency() const { return M_PI * (n_ / 2) / L_; }

  /// Coordinate value along one axis for a per-axis sample index.
  double coordinate(int idx) const { return -L_ + idx * spacing(); }

  /// Frequency value for a per-axis mode index in FFT order.
  double frequency(int idx) const {
    const int m = idx < n_ / 2 ? idx : idx - n_;
    return M_PI * m / L_;
  }

  int nyquist_index() const { return n_ / 2; }

  /// Decompose a flat index (row major, axis 0 slowest) into per-axis indices.
  void unflatten(std::size_t flat, int* idx) const {
    for (int a = dim_ - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(flat % n_);
      flat /= n_;
    }
  }

  std::size_t flatten(const int* idx) const {
    std::size_t flat = 0;
    for (int a = 0; a < dim_; ++a) flat = flat * n_ + static_cast<std::size_t>(idx[a]);
    return flat;
  }

  /// Coordinates of the grid point with the given flat index.
  void point(std::size_t flat, double* sigma) const {
    int idx[3];
    unflatten(flat, idx);
    for (int a = 0; a < dim_; ++a) sigma[a] = coordinate(idx[a]);
  }

  /// Flat index of the negated-frequency partner (per-axis idx -> (n-idx) mod n).
  std::size_t conjugate_index(std::size_t flat) const {
    int idx[3];
    unflatten(flat, idx);
    int cidx[3];
    for (int a = 0; a < dim_; ++a) cidx[a] = (n_ - idx[a]) % n_;
    return flatten(cidx);
  }

  /// True when the flat mode index touches the unpaired Nyquist line on any axis.
  bool is_nyquist(std::size_t flat) const {
    int idx[3];
    unflatten(flat, idx);
    for (int a = 0; a < dim_; ++a)
      if (idx[a] == n_ / 2) return true;
    return false;
  }

  // ---- quadrature -------------------------------------------------------

  double integrate(const std::vector<double>& f) const {
    check_size(f.size());
    double s = 0.0;
    for (double v : f) s += v;
    return cell_volume_ * s;
  }

  cplx integrate(const std::vector<cplx>& f) const {
    check_size(f.size());
    cplx s = 0.0;
    for (const cplx& v : f) s += v;
    return cell_volume_ * s;
  }

  /// Grid inner product <a,b> = cell_volume * sum(a_j b_j).
  double inner(const std::vector<double>& a, const std::vector<double>& b) const {
    check_size(a.size());
    check_size(b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return cell_volume_ * s;
  }

  cplx inner(const std::vector<cplx>& a, const std::vector<cplx>& b) const {
    check_size(a.size());
    check_size(b.size());
    cplx s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return cell_volume_ * s;
  }

  /// Dual-space inner product <a,b> = dual_weight * sum(conj(a_m) b_m).
  cplx dual_inner(const std::vector<cplx>& a, const std::vector<cplx>& b) const {
    check_size(a.size());
    check_size(b.size());
    cplx s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return dual_weight_ * s;
  }

  // ---- raw transforms ---------------------------------------------------

  /// Unnormalized DFT, FFTW sign convention (-1 forward, +1 backward).
  void dft(const cplx* in, cplx* out, int sign) const {
    auto* fin = const_cast<fftw_complex*>(reinterpret_cast<const fftw_complex*>(in));
    auto* fout = reinterpret_cast<fftw_complex*>(out);
    fftw_execute_dft(sign == FFTW_FORWARD ? plan_fwd_ : plan_bwd_, fin, fout);
  }

  std::vector<cplx> dft(const std::vector<cplx>& in, int sign) const {
    check_size(in.size());
    std::vector<cplx> out(total_);
    dft(in.data(), out.data(), sign);
    return out;
  }

  // ---- measure-weighted Fourier transforms ------------------------------

  /// Parity sign (-1)^(sum of per-axis mode integers) for a flat mode index.
  double mode_parity(std::size_t flat) const {
    int idx[3];
    unflatten(flat, idx);
    int p = 0;
    for (int a = 0; a < dim_; ++a) p += idx[a];
    return (p & 1) ? -1.0 : 1.0;
  }

  std::vector<cplx> fourier_forward(const std::vector<cplx>& q) const {
    std::vector<cplx> out = dft(q, FFTW_FORWARD);
    for (std::size_t i = 0; i < total_; ++i) out[i] *= cell_volume_ * mode_parity(i);
    return out;
  }

  std::vector<cplx> fourier_forward(const std::vector<double>& q) const {
    return fourier_forward(promote(q));
  }

  /// Inverse transform without any reality requirement on the result.
  std::vector<cplx> fourier_inverse_complex(const std::vector<cplx>& psi) const {
    check_size(psi.size());
    std::vector<cplx> tmp(total_);
    for (std::size_t i = 0; i < total_; ++i) tmp[i] = psi[i] * mode_parity(i);
    std::vector<cplx> out = dft(tmp, FFTW_BACKWARD);
    for (cplx& v : out) v *= dual_weight_;
    return out;
  }

  /// Largest violation of the reality constraint psi(-gamma) = conj(psi(gamma)).
  double constraint_violation(const std::vector<cplx>& psi) const {
    check_size(psi.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < total_; ++i) {
      const cplx d = psi[conjugate_index(i)] - std::conj(psi[i]);
      worst = std::max(worst, std::abs(d));
    }
    return worst;
  }

  /// Inverse transform onto a real sample vector.  Requires the reality
  /// constraint within `tol` (scaled by the peak amplitude), else throws.
  std::vector<double> fourier_inverse(const std::vector<cplx>& psi,
                                      double tol = 1e-10) const {
    double peak = 1.0;
    for (const cplx& v : psi) peak = std::max(peak, std::abs(v));
    const double viol = constraint_violation(psi);
    if (viol > tol * peak)
      throw std::domain_error(
          "fourier_inverse: reality constraint violated (max |psi(-g)-conj(psi(g))| = " +
          std::to_string(viol) + ")");
    std::vector<cplx> full = fourier_inverse_complex(psi);
    std::vector<double> out(total_);
    for (std::size_t i = 0; i < total_; ++i) out[i] = full[i].real();
    return out;
  }

  // ---- spectral derivatives ---------------------------------------------

  /// Multiply spectral coefficients (plain DFT order) by i*gamma along `axis`,
  /// zeroing the unpaired Nyquist mode of that axis.
  void apply_spectral_derivative(std::vector<cplx>& coeffs, int axis) const {
    check_axis(axis);
    check_size(coeffs.size());
    int idx[3];
    for (std::size_t i = 0; i < total_; ++i) {
      unflatten(i, idx);
      const int m = idx[axis];
      if (m == n_ / 2) {
        coeffs[i] = 0.0;
      } else {
        coeffs[i] *= cplx(0.0, frequency(m));
      }
    }
  }

  std::vector<cplx> derivative(const std::vector<cplx>& f, int axis) const {
    std::vector<cplx> hat = dft(f, FFTW_FORWARD);
    apply_spectral_derivative(hat, axis);
    std::vector<cplx> out = dft(hat, FFTW_BACKWARD);
    const double scale = 1.0 / static_cast<double>(total_);
    for (cplx& v : out) v *= scale;
    return out;
  }

  std::vector<double> derivative(const std::vector<double>& f, int axis) const {
    std::vector<cplx> d = derivative(promote(f), axis);
    std::vector<double> out(total_);
    for (std::size_t i = 0; i < total_; ++i) out[i] = d[i].real();
    return out;
  }

  /// All axis derivatives sharing a single forward transform.
  std::vector<std::vector<cplx>> gradient(const std::vector<cplx>& f) const {
    std::vector<cplx> hat = dft(f, FFTW_FORWARD);
    std::vector<std::vector<cplx>> out(dim_);
    const double scale = 1.0 / static_cast<double>(total_);
    for (int a = 0; a < dim_; ++a) {
      std::vector<cplx> ha = hat;
      apply_spectral_derivative(ha, a);
      out[a] = dft(ha, FFTW_BACKWARD);
      for (cplx& v : out[a]) v *= scale;
    }
    return out;
  }

  // ---- trigonometric interpolation --------------------------------------

  /// Fill the per-axis evaluation table for the trig interpolant at
  /// coordinate x: tab[idx] = parity(idx) * exp(i gamma(idx) x), with the
  /// Nyquist entry symmetrized to a cosine so real data stays real.
  void interp_table(double x, cplx* tab) const {
    // exp(i pi m x / L): build by recurrence over m >= 0 and conjugate.
    const cplx step = std::polar(1.0, M_PI * x / L_);
    cplx pos = 1.0;
    for (int m = 0; m < n_ / 2; ++m) {
      const double par = (m & 1) ? -1.0 : 1.0;
      tab[m] = par * pos;
      if (m > 0) tab[n_ - m] = par * std::conj(pos);
      pos *= step;
    }
    const double par_nyq = ((n_ / 2) & 1) ? -1.0 : 1.0;
    tab[n_ / 2] = par_nyq * std::cos(M_PI * (n_ / 2) * x / L_);
  }

  /// Evaluate the trig interpolant of samples with plain forward-DFT
  /// coefficients `hat` at an arbitrary (periodically wrapped) point.
  /// `scratch` must provide dim*n complex slots.
  cplx interpolate(const std::vector<cplx>& hat, const double* x, cplx* scratch) const {
    check_size(hat.size());
    for (int a = 0; a < dim_; ++a) interp_table(x[a], scratch + a * n_);
    const double scale = 1.0 / static_cast<double>(total_);
    if (dim_ == 1) {
      cplx s = 0.0;
      for (int m = 0; m < n_; ++m) s += hat[m] * scratch[m];
      return s * scale;
    }
    if (dim_ == 2) {
      const cplx* t0 = scratch;
      const cplx* t1 = scratch + n_;
      cplx s = 0.0;
      for (int i = 0; i < n_; ++i) {
        cplx row = 0.0;
        const cplx* h = hat.data() + static_cast<std::size_t>(i) * n_;
        for (int j = 0; j < n_; ++j) row += h[j] * t1[j];
        s += t0[i] * row;
      }
      return s * scale;
    }
    const cplx* t0 = scratch;
    const cplx* t1 = scratch + n_;
    const cplx* t2 = scratch + 2 * n_;
    cplx s = 0.0;
    for (int i = 0; i < n_; ++i) {
      cplx plane = 0.0;
      for (int j = 0; j < n_; ++j) {
        cplx row = 0.0;
        const cplx* h = hat.data() + (static_cast<std::size_t>(i) * n_ + j) * n_;
        for (int k = 0; k < n_; ++k) row += h[k] * t2[k];
        plane += t1[j] * row;
      }
      s += t0[i] * plane;
    }
    return s * scale;
  }

  std::vector<cplx> promote(const std::vector<double>& f) const {
    check_size(f.size());
    std::vector<cplx> out(total_);
    for (std::size_t i = 0; i < total_; ++i) out[i] = f[i];
    return out;
  }

 private:
  ConfigurationGrid(int dim, int n, double L) : dim_(dim), n_(n), L_(L) {
    if (dim < 1 || dim > 3)
      throw std::invalid_argument("ConfigurationGrid: dim must be 1, 2, or 3");
    if (n < 2 || n % 2 != 0)
      throw std::invalid_argument("ConfigurationGrid: points_per_axis must be even and >= 2");
    if (!(L > 0.0))
      throw std::invalid_argument("ConfigurationGrid: half_width must be positive");
    total_ = 1;
    for (int a = 0; a < dim; ++a) {
      total_ *= static_cast<std::size_t>(n);
      if (total_ > kMaxTotalPoints)
        throw std::invalid_argument("ConfigurationGrid: total point budget (2^22) exceeded");
    }
    cell_volume_ = std::pow(2.0 * L / n, dim);
    dual_weight_ = std::pow(1.0 / (2.0 * L), dim);
    std::vector<cplx> dummy_in(total_), dummy_out(total_);
    int shape[3] = {n, n, n};
    plan_fwd_ = fftw_plan_dft(dim, shape,
                              reinterpret_cast<fftw_complex*>(dummy_in.data()),
                              reinterpret_cast<fftw_complex*>(dummy_out.data()),
                              FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    plan_bwd_ = fftw_plan_dft(dim, shape,
                              reinterpret_cast<fftw_complex*>(dummy_in.data()),
                              reinterpret_cast<fftw_complex*>(dummy_out.data()),
                              FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan_fwd_ == nullptr || plan_bwd_ == nullptr)
      throw std::runtime_error("ConfigurationGrid: FFTW plan creation failed");
  }

  void check_size(std::size_t s) const {
    if (s != total_)
      throw std::invalid_argument("ConfigurationGrid: field size does not match grid");
  }

  void check_axis(int a) const {
    if (a < 0 || a >= dim_) throw std::invalid_argument("ConfigurationGrid: axis out of range");
  }

  int dim_;
  int n_;
  double L_;
  std::size_t total_ = 0;
  double cell_volume_ = 0.0;
  double dual_weight_ = 0.0;
  fftw_plan plan_fwd_ = nullptr;
  fftw_plan plan_bwd_ = nullptr;
};

}  // namespace qtrans
