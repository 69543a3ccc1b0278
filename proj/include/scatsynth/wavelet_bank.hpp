#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "scatsynth/error.hpp"
#include "scatsynth/fft.hpp"

namespace scatsynth {

enum class WindowShape { Gaussian, RaisedCosine };

inline std::string to_string(WindowShape shape) {
  return shape == WindowShape::Gaussian ? "gaussian" : "raised-cosine";
}

inline WindowShape window_shape_from_string(const std::string& name) {
  if (name == "gaussian") return WindowShape::Gaussian;
  if (name == "raised-cosine") return WindowShape::RaisedCosine;
  throw Error(ErrorCode::UnsupportedFormat, "unknown window shape '" + name + "'");
}

/// Bandwidth parameter for which neighbouring filters 2^(1/Q) apart cross at
/// half power (|psi|^2 = 1/2 of the peak).
inline double half_power_bandwidth(double q_factor, WindowShape shape) {
  const double ratio = std::exp2(1.0 / q_factor);
  const double offset = (ratio - 1.0) / (ratio + 1.0);
  if (shape == WindowShape::Gaussian) return offset / std::sqrt(std::numbers::ln2);
  return std::numbers::pi * offset / (2.0 * std::acos(std::pow(2.0, -0.25)));
}

/// Analytic mother wavelet described by its frequency response, centred at 1.
///
/// For the Gaussian window the bandwidth factor is the standard deviation of the
/// bump relative to the centre; for the raised cosine it is the half-width of
/// the support. The response is exactly zero for omega <= 0.
struct MotherWavelet {
  double center_frequency = 1.0;
  double bandwidth_factor = 0.0;
  WindowShape window_shape = WindowShape::Gaussian;
  double peak = std::numbers::sqrt2;

  static MotherWavelet for_q_factor(double q_factor, WindowShape shape = WindowShape::Gaussian,
                                    double bandwidth_factor = 0.0) {
    MotherWavelet m;
    m.window_shape = shape;
    m.bandwidth_factor =
        bandwidth_factor > 0.0 ? bandwidth_factor : half_power_bandwidth(q_factor, shape);
    return m;
  }

  double operator()(double omega) const {
    if (omega <= 0.0) return 0.0;
    const double u = omega / center_frequency - 1.0;
    if (window_shape == WindowShape::Gaussian) {
      return peak * std::exp(-u * u / (2.0 * bandwidth_factor * bandwidth_factor));
    }
    if (std::abs(u) >= bandwidth_factor) return 0.0;
    const double c = std::cos(std::numbers::pi * u / (2.0 * bandwidth_factor));
    return peak * c * c;
  }
};

struct BankOptions {
  WindowShape window_shape = WindowShape::Gaussian;
  double bandwidth_factor = 0.0;  // 0 selects the half-power crossing for the bank's Q
  double max_frequency = 0.0;     // 0 selects Nyquist
  Fft::Strategy fft_strategy = Fft::Strategy::Auto;
};

struct FrameBounds {
  double epsilon = 1.0;
  double worst_frequency = 0.0;  // DFT bin where the lower bound is attained
  double max_coverage = 0.0;     // largest half-sum over all positive bins
  bool upper_bound_holds = false;
};

/// Frame coverage on the positive DFT bins 1..N/2: (1/2) sum |psi_lambda(k)|^2.
///
/// Filters carry a 1/sqrt(2) weight on the Nyquist bin (it is shared between
/// the positive and negative half), so its coverage is counted in full.
inline std::vector<double> coverage_profile(std::span<const double> filters, std::size_t bands,
                                            std::size_t n) {
  std::vector<double> cover(n / 2 + 1, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    const auto row = filters.subspan(b * n, n);
    for (std::size_t k = 1; k <= n / 2; ++k) cover[k] += row[k] * row[k];
  }
  for (std::size_t k = 1; k < n / 2; ++k) cover[k] *= 0.5;
  return cover;
}

/// Constant-Q analytic filter bank sampled on the N-point DFT grid.
///
/// Filter b is psi_hat(k / lambda_b) on bins 1..N/2 and zero on DC and on the
/// negative half of the grid. Centre frequencies are in cycles per signal.
class FilterBank {
 public:
  std::size_t signal_length() const noexcept { return n_; }
  double q_factor() const noexcept { return q_; }
  double min_frequency() const noexcept { return min_frequency_; }
  double max_frequency() const noexcept { return max_frequency_; }
  const std::vector<double>& lambda_grid() const noexcept { return lambdas_; }
  std::size_t size() const noexcept { return lambdas_.size(); }
  const MotherWavelet& mother() const noexcept { return mother_; }
  double frame_epsilon() const noexcept { return frame_epsilon_; }
  double normalization() const noexcept { return normalization_; }
  const Fft& fft() const noexcept { return *fft_; }

  std::span<const double> filter(std::size_t band) const {
    return std::span<const double>(filters_).subspan(band * n_, n_);
  }
  std::span<const double> all_filters() const noexcept { return filters_; }

  /// Copy restricted to the given bands (in the given order). Useful for
  /// frame diagnostics; the normalisation constant is kept as is.
  FilterBank select(std::span<const std::size_t> bands) const {
    FilterBank out = *this;
    out.lambdas_.clear();
    out.filters_.clear();
    for (const std::size_t b : bands) {
      require(b < size(), ErrorCode::InvalidArgument, "band index out of range");
      out.lambdas_.push_back(lambdas_[b]);
      const auto row = filter(b);
      out.filters_.insert(out.filters_.end(), row.begin(), row.end());
    }
    out.frame_epsilon_ = out.compute_bounds().epsilon;
    return out;
  }

  FilterBank without_band(std::size_t band) const {
    std::vector<std::size_t> keep;
    for (std::size_t b = 0; b < size(); ++b) {
      if (b != band) keep.push_back(b);
    }
    return select(keep);
  }

  FrameBounds compute_bounds() const {
    FrameBounds fb;
    const auto cover = coverage_profile(filters_, size(), n_);
    fb.max_coverage = *std::max_element(cover.begin() + 1, cover.end());
    fb.upper_bound_holds = fb.max_coverage <= 1.0 + 1e-12;
    const auto lo = static_cast<std::size_t>(std::ceil(min_frequency_ - 1e-9));
    const auto hi = static_cast<std::size_t>(std::floor(max_frequency_ + 1e-9));
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t k = std::max<std::size_t>(lo, 1); k <= std::min(hi, n_ / 2); ++k) {
      if (cover[k] < lowest) {
        lowest = cover[k];
        fb.worst_frequency = static_cast<double>(k);
      }
    }
    fb.epsilon = 1.0 - lowest;
    return fb;
  }

 private:
  friend FilterBank build_filter_bank(std::size_t, double, double, const BankOptions&);

  std::size_t n_ = 0;
  double q_ = 1.0;
  double min_frequency_ = 1.0;
  double max_frequency_ = 1.0;
  std::vector<double> lambdas_;
  std::vector<double> filters_;  // bands x n, row-major
  MotherWavelet mother_;
  double frame_epsilon_ = 1.0;
  double normalization_ = 1.0;
  std::shared_ptr<const Fft> fft_;
};

/// Builds the bank lambda_j = N0 2^(j/Q) for all lambda_j in [N0, max_frequency].
///
/// If the frame half-sum exceeds 1 anywhere, every filter is divided by the
/// square root of its maximum so that the upper bound holds.
inline FilterBank build_filter_bank(std::size_t signal_length, double q_factor,
                                    double min_frequency, const BankOptions& options = {}) {
  const std::size_t n = signal_length;
  require(n >= 16 && n % 2 == 0, ErrorCode::InvalidArgument,
          "signal length must be even and at least 16");
  require(q_factor >= 1.0 && q_factor <= 32.0, ErrorCode::InvalidArgument,
          "q factor must lie in [1, 32]");
  const double nyquist = static_cast<double>(n) / 2.0;
  require(min_frequency >= 1.0 && min_frequency < nyquist, ErrorCode::InvalidArgument,
          "min frequency must lie in [1, N/2)");
  const double max_frequency = options.max_frequency > 0.0 ? options.max_frequency : nyquist;
  require(max_frequency <= nyquist, ErrorCode::InvalidArgument,
          "max frequency cannot exceed Nyquist");

  FilterBank bank;
  bank.n_ = n;
  bank.q_ = q_factor;
  bank.min_frequency_ = min_frequency;
  bank.max_frequency_ = max_frequency;
  bank.mother_ = MotherWavelet::for_q_factor(q_factor, options.window_shape, options.bandwidth_factor);

  for (std::size_t j = 0;; ++j) {
    const double lambda = min_frequency * std::exp2(static_cast<double>(j) / q_factor);
    if (lambda > max_frequency * (1.0 + 1e-12)) break;
    bank.lambdas_.push_back(lambda);
  }
  require(bank.lambdas_.size() >= 2, ErrorCode::GridTooSmall,
          "fewer than two bands fit in [" + std::to_string(min_frequency) + ", " +
              std::to_string(max_frequency) + "]");

  bank.filters_.assign(bank.lambdas_.size() * n, 0.0);
  for (std::size_t b = 0; b < bank.lambdas_.size(); ++b) {
    double* row = bank.filters_.data() + b * n;
    for (std::size_t k = 1; k <= n / 2; ++k) {
      row[k] = bank.mother_(static_cast<double>(k) / bank.lambdas_[b]);
    }
    row[n / 2] *= (1.0 / std::numbers::sqrt2);
  }

  const auto cover = coverage_profile(bank.filters_, bank.lambdas_.size(), n);
  const double peak = *std::max_element(cover.begin() + 1, cover.end());
  if (peak > 1.0) {
    bank.normalization_ = 1.0 / std::sqrt(peak);
    for (auto& v : bank.filters_) v *= bank.normalization_;
  }

  bank.frame_epsilon_ = bank.compute_bounds().epsilon;
  require(bank.frame_epsilon_ < 1.0, ErrorCode::FrameFailure,
          "frame lower bound vanishes (epsilon = " + std::to_string(bank.frame_epsilon_) + ")");
  bank.fft_ = std::make_shared<const Fft>(n, options.fft_strategy);
  return bank;
}

inline FrameBounds frame_bounds(const FilterBank& bank) { return bank.compute_bounds(); }

/// Octave-bandwidth analytic filters along the log-frequency axis of a
/// scalogram, treated as circular with period K.
///
/// Scale s is centred at K / 2^(s+2) cycles per period, so adjacent centres are
/// an octave apart. kernel(s) holds the circular impulse response used for the
/// direct convolution along the band axis.
class LogFreqBank {
 public:
  std::size_t grid_length() const noexcept { return k_; }
  std::size_t alpha() const noexcept { return centers_.size(); }
  const std::vector<double>& centers() const noexcept { return centers_; }

  std::span<const double> filter(std::size_t scale) const {
    return std::span<const double>(filters_).subspan(scale * k_, k_);
  }
  std::span<const Complex> kernel(std::size_t scale) const {
    return std::span<const Complex>(kernels_).subspan(scale * k_, k_);
  }
  /// Kernel tap for output band `out` receiving input band `in`.
  Complex tap(std::size_t scale, std::size_t out, std::size_t in) const {
    return kernels_[scale * k_ + (out + k_ - in) % k_];
  }

 private:
  friend LogFreqBank build_logfreq_bank(std::size_t, std::size_t);

  std::size_t k_ = 0;
  std::vector<double> centers_;
  std::vector<double> filters_;
  std::vector<Complex> kernels_;
};

inline LogFreqBank build_logfreq_bank(std::size_t grid_length, std::size_t alpha) {
  require(alpha >= 1, ErrorCode::InvalidArgument, "alpha must be at least 1");
  require(grid_length >= 4, ErrorCode::GridTooSmall, "log-frequency grid needs at least 4 bands");
  const std::size_t k = grid_length;
  const double coarsest = static_cast<double>(k) / std::exp2(static_cast<double>(alpha) + 1.0);
  require(coarsest >= 1.0, ErrorCode::GridTooSmall,
          "log-frequency grid too short for " + std::to_string(alpha) + " octave scales");

  LogFreqBank bank;
  bank.k_ = k;
  const auto mother = MotherWavelet::for_q_factor(1.0);
  bank.filters_.assign(alpha * k, 0.0);
  bank.kernels_.assign(alpha * k, Complex(0.0, 0.0));
  for (std::size_t s = 0; s < alpha; ++s) {
    const double center = static_cast<double>(k) / std::exp2(static_cast<double>(s) + 2.0);
    bank.centers_.push_back(center);
    double* row = bank.filters_.data() + s * k;
    for (std::size_t f = 1; 2 * f <= k; ++f) row[f] = mother(static_cast<double>(f) / center);
    if (k % 2 == 0) row[k / 2] *= (1.0 / std::numbers::sqrt2);
    for (std::size_t m = 0; m < k; ++m) {
      Complex acc(0.0, 0.0);
      for (std::size_t f = 1; 2 * f <= k; ++f) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>((f * m) % k) /
                             static_cast<double>(k);
        acc += row[f] * Complex(std::cos(angle), std::sin(angle));
      }
      bank.kernels_[s * k + m] = acc / static_cast<double>(k);
    }
  }
  return bank;
}

}  // namespace scatsynth
