#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "scatsynth/error.hpp"

namespace scatsynth {

using Complex = std::complex<double>;

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Complex DFT of a fixed length.
///
/// Power-of-two lengths use an iterative radix-2 kernel; any other length goes
/// through Bluestein's chirp-z reduction onto a radix-2 transform. The
/// Bluestein path can also be forced for power-of-two sizes, which gives an
/// independent second route through the same transform.
///
/// forward() computes X[k] = sum_t x[t] exp(-2 pi i k t / n); inverse() includes
/// the 1/n factor. Instances are immutable and safe to share between threads.
class Fft {
 public:
  enum class Strategy { Auto, Radix2, Bluestein };

  explicit Fft(std::size_t n, Strategy strategy = Strategy::Auto) : n_(n) {
    require(n >= 1, ErrorCode::InvalidArgument, "FFT length must be positive");
    if (strategy == Strategy::Auto) {
      strategy = is_power_of_two(n) ? Strategy::Radix2 : Strategy::Bluestein;
    }
    require(strategy != Strategy::Radix2 || is_power_of_two(n), ErrorCode::InvalidArgument,
            "radix-2 FFT needs a power-of-two length");
    strategy_ = strategy;
    if (strategy_ == Strategy::Radix2) {
      init_radix2();
    } else {
      init_bluestein();
    }
  }

  std::size_t size() const noexcept { return n_; }
  Strategy strategy() const noexcept { return strategy_; }

  void forward(std::span<Complex> data) const {
    require(data.size() == n_, ErrorCode::LengthMismatch, "FFT input length");
    if (strategy_ == Strategy::Radix2) {
      radix2(data);
    } else {
      bluestein(data);
    }
  }

  void inverse(std::span<Complex> data) const {
    for (auto& v : data) v = std::conj(v);
    forward(data);
    const double scale = 1.0 / static_cast<double>(n_);
    for (auto& v : data) v = Complex(v.real() * scale, -v.imag() * scale);
  }

  /// Transform of a real sequence into a full length-n complex spectrum.
  std::vector<Complex> forward_real(std::span<const double> x) const {
    std::vector<Complex> out(x.begin(), x.end());
    forward(out);
    return out;
  }

 private:
  void init_radix2() {
    // Twiddles for the stage of span `len` live contiguously at [len/2 - 1, len - 1).
    twiddles_.resize(n_ > 1 ? n_ - 1 : 0);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      for (std::size_t k = 0; k < half; ++k) {
        const double angle =
            -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
        twiddles_[half - 1 + k] = Complex(std::cos(angle), std::sin(angle));
      }
    }
    bitrev_.resize(n_);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n_) ++bits;
    for (std::size_t i = 0; i < n_; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
  }

  void init_bluestein() {
    const std::size_t m = next_power_of_two(2 * n_ - 1);
    inner_ = std::make_shared<const Fft>(m, Strategy::Radix2);
    chirp_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      // k^2 mod 2n keeps the angle argument small for long transforms.
      const auto k2 = static_cast<double>((k * k) % (2 * n_));
      const double angle = -std::numbers::pi * k2 / static_cast<double>(n_);
      chirp_[k] = Complex(std::cos(angle), std::sin(angle));
    }
    std::vector<Complex> b(m, Complex(0.0, 0.0));
    b[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) {
      b[k] = std::conj(chirp_[k]);
      b[m - k] = std::conj(chirp_[k]);
    }
    inner_->forward(b);
    chirp_spectrum_ = std::move(b);
  }

  void radix2(std::span<Complex> data) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t j = bitrev_[i];
      if (i < j) std::swap(data[i], data[j]);
    }
    // std::complex<double> is layout-compatible with double[2].
    double* d = reinterpret_cast<double*>(data.data());
    // Stages up to kBlock only mix points within one aligned block, so they run
    // block by block while the block stays in cache. The arithmetic is unchanged.
    const std::size_t block = std::min(n_, kBlock);
    for (std::size_t start = 0; start < n_; start += block) {
      double* blk = d + 2 * start;
      for (std::size_t i = 0; i + 1 < block; i += 2) {
        const double ar = blk[2 * i], ai = blk[2 * i + 1];
        const double br = blk[2 * i + 2], bi = blk[2 * i + 3];
        blk[2 * i] = ar + br;
        blk[2 * i + 1] = ai + bi;
        blk[2 * i + 2] = ar - br;
        blk[2 * i + 3] = ai - bi;
      }
      for (std::size_t len = 4; len <= block; len <<= 1) butterflies(blk, block, len);
    }
    for (std::size_t len = 2 * block; len <= n_; len <<= 1) butterflies(d, n_, len);
  }

  void butterflies(double* d, std::size_t count, std::size_t len) const {
    const std::size_t half = len / 2;
    const double* __restrict w = reinterpret_cast<const double*>(twiddles_.data()) + 2 * (half - 1);
    for (std::size_t start = 0; start < count; start += len) {
      double* __restrict a = d + 2 * start;
      double* __restrict b = a + 2 * half;
      for (std::size_t k = 0; k < half; ++k) {
        const double wr = w[2 * k], wi = w[2 * k + 1];
        const double xr = b[2 * k], xi = b[2 * k + 1];
        const double br = xr * wr - xi * wi;
        const double bi = xr * wi + xi * wr;
        const double ar = a[2 * k], ai = a[2 * k + 1];
        b[2 * k] = ar - br;
        b[2 * k + 1] = ai - bi;
        a[2 * k] = ar + br;
        a[2 * k + 1] = ai + bi;
      }
    }
  }

  void bluestein(std::span<Complex> data) const {
    const std::size_t m = inner_->size();
    std::vector<Complex> a(m, Complex(0.0, 0.0));
    for (std::size_t k = 0; k < n_; ++k) a[k] = data[k] * chirp_[k];
    inner_->forward(a);
    for (std::size_t k = 0; k < m; ++k) a[k] *= chirp_spectrum_[k];
    inner_->inverse(a);
    for (std::size_t k = 0; k < n_; ++k) data[k] = a[k] * chirp_[k];
  }

  static constexpr std::size_t kBlock = 2048;

  std::size_t n_;
  Strategy strategy_ = Strategy::Radix2;
  std::vector<Complex> twiddles_;
  std::vector<std::size_t> bitrev_;
  std::shared_ptr<const Fft> inner_;
  std::vector<Complex> chirp_;
  std::vector<Complex> chirp_spectrum_;
};

}  // namespace scatsynth
