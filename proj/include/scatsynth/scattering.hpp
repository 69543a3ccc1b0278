#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scatsynth/error.hpp"
#include "scatsynth/fft.hpp"
#include "scatsynth/wavelet_bank.hpp"

namespace scatsynth {

/// Parameters that fully determine a descriptor layout. Two descriptors are
/// comparable only when their configs produce the same digest.
struct DescriptorConfig {
  std::size_t signal_length = 16384;
  double q1 = 4.0;
  double q2 = 1.0;
  double min_frequency = 4.0;
  double max_frequency = 0.0;  // 0 selects Nyquist
  std::size_t alpha = 2;
  bool include_freq_scattering = true;
  bool include_dyadic_bank = false;
  bool dyadic_order2 = true;
  WindowShape window_shape = WindowShape::Gaussian;

  BankOptions bank_options() const {
    BankOptions o;
    o.window_shape = window_shape;
    o.max_frequency = max_frequency;
    return o;
  }

  std::string canonical() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "N=%zu;q1=%.17g;q2=%.17g;n0=%.17g;fmax=%.17g;alpha=%zu;freq=%d;dyadic=%d;"
                  "dyadic2=%d;window=%s",
                  signal_length, q1, q2, min_frequency, max_frequency, alpha,
                  int{include_freq_scattering}, int{include_dyadic_bank}, int{dyadic_order2},
                  to_string(window_shape).c_str());
    return buf;
  }

  /// 64-bit FNV-1a of the canonical parameter string, as 16 hex digits.
  std::string digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

enum class CoefficientKind { Order1, Order2, FreqOrder2 };
enum class BankId { Primary, Dyadic };

inline std::string to_string(CoefficientKind kind) {
  switch (kind) {
    case CoefficientKind::Order1: return "order1";
    case CoefficientKind::Order2: return "order2";
    case CoefficientKind::FreqOrder2: return "freq";
  }
  return "unknown";
}

struct ScatteringIndex {
  CoefficientKind kind = CoefficientKind::Order1;
  BankId bank = BankId::Primary;
  std::size_t band1 = 0;
  double lambda1 = 0.0;
  std::size_t band2 = 0;       // Order2: index into the second-layer grid
  double lambda2 = 0.0;        // Order2 only
  std::size_t scale = 0;       // FreqOrder2: log-frequency scale id
  double bar_lambda2 = 0.0;    // FreqOrder2: scale centre in cycles per log-frequency period

  bool operator==(const ScatteringIndex&) const = default;
};

/// Values paired with their typed indices, in emission order.
struct IndexedValues {
  std::vector<ScatteringIndex> indices;
  std::vector<double> values;

  void push(const ScatteringIndex& index, double value) {
    indices.push_back(index);
    values.push_back(value);
  }
};

/// Modulus envelopes |x * psi_lambda|(t), bands x time, row-major.
struct Scalogram {
  std::size_t bands = 0;
  std::size_t length = 0;
  std::vector<double> values;
  std::vector<double> lambda_grid;

  std::span<const double> row(std::size_t band) const {
    return std::span<const double>(values).subspan(band * length, length);
  }
  std::span<double> row(std::size_t band) {
    return std::span<double>(values).subspan(band * length, length);
  }
  double at(std::size_t band, std::size_t t) const { return values[band * length + t]; }
};

struct SignalStats {
  double mean = 0.0;
  double variance = 0.0;  // time-average variance, 1/N normalisation
};

inline SignalStats signal_stats(std::span<const double> x) {
  SignalStats s;
  if (x.empty()) return s;
  for (const double v : x) s.mean += v;
  s.mean /= static_cast<double>(x.size());
  for (const double v : x) s.variance += (v - s.mean) * (v - s.mean);
  s.variance /= static_cast<double>(x.size());
  return s;
}

inline double mean_of(std::span<const double> v) {
  double acc = 0.0;
  for (const double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double modulus(Complex z) {
  return std::sqrt(z.real() * z.real() + z.imag() * z.imag());
}

inline double mean_modulus(std::span<const Complex> v) {
  double acc = 0.0;
  for (const Complex& z : v) acc += modulus(z);
  return acc / static_cast<double>(v.size());
}

/// Inverse transform of spectrum .* filter, i.e. the circular convolution of
/// the underlying signal with the filter's impulse response.
inline void apply_filter(std::span<const Complex> spectrum, std::span<const double> filter,
                         const Fft& fft, std::vector<Complex>& out) {
  out.resize(spectrum.size());
  for (std::size_t k = 0; k < spectrum.size(); ++k) out[k] = spectrum[k] * filter[k];
  fft.inverse(out);
}

/// Second-order pairs are kept only when lambda2 < lambda1 strictly.
inline bool order2_pair_kept(double lambda1, double lambda2) {
  return lambda2 < lambda1 * (1.0 - 1e-9);
}

inline Scalogram scalogram(std::span<const double> x, const FilterBank& bank) {
  require(x.size() == bank.signal_length(), ErrorCode::LengthMismatch,
          "signal has " + std::to_string(x.size()) + " samples, bank expects " +
              std::to_string(bank.signal_length()));
  Scalogram scal;
  scal.bands = bank.size();
  scal.length = x.size();
  scal.lambda_grid = bank.lambda_grid();
  scal.values.resize(scal.bands * scal.length);
  const auto spectrum = bank.fft().forward_real(x);
  std::vector<Complex> work;
  for (std::size_t b = 0; b < bank.size(); ++b) {
    apply_filter(spectrum, bank.filter(b), bank.fft(), work);
    auto row = scal.row(b);
    for (std::size_t t = 0; t < scal.length; ++t) row[t] = modulus(work[t]);
  }
  return scal;
}

inline IndexedValues scatter_order1(const Scalogram& scal, BankId bank = BankId::Primary) {
  IndexedValues out;
  for (std::size_t b = 0; b < scal.bands; ++b) {
    ScatteringIndex idx;
    idx.kind = CoefficientKind::Order1;
    idx.bank = bank;
    idx.band1 = b;
    idx.lambda1 = scal.lambda_grid[b];
    out.push(idx, mean_of(scal.row(b)));
  }
  return out;
}

namespace detail {

template <class Keep>
IndexedValues scatter_second_layer(const Scalogram& scal, const FilterBank& bank2, BankId bank,
                                   Keep keep) {
  require(bank2.signal_length() == scal.length, ErrorCode::LengthMismatch,
          "second-layer bank length differs from scalogram length");
  IndexedValues out;
  std::vector<Complex> work;
  for (std::size_t b = 0; b < scal.bands; ++b) {
    const double lambda1 = scal.lambda_grid[b];
    std::optional<std::vector<Complex>> envelope_spectrum;
    for (std::size_t l = 0; l < bank2.size(); ++l) {
      const double lambda2 = bank2.lambda_grid()[l];
      if (!keep(lambda1, lambda2)) continue;
      if (!envelope_spectrum) envelope_spectrum = bank2.fft().forward_real(scal.row(b));
      apply_filter(*envelope_spectrum, bank2.filter(l), bank2.fft(), work);
      ScatteringIndex idx;
      idx.kind = CoefficientKind::Order2;
      idx.bank = bank;
      idx.band1 = b;
      idx.lambda1 = lambda1;
      idx.band2 = l;
      idx.lambda2 = lambda2;
      out.push(idx, mean_modulus(work));
    }
  }
  return out;
}

}  // namespace detail

/// mean_t | (scalogram row lambda1) * psi_lambda2 | for every lambda2 < lambda1.
inline IndexedValues scatter_order2(const Scalogram& scal, const FilterBank& bank2,
                                    BankId bank = BankId::Primary) {
  return detail::scatter_second_layer(scal, bank2, bank, order2_pair_kept);
}

/// The pairs scatter_order2 leaves out (lambda2 >= lambda1). Diagnostic only.
inline IndexedValues scatter_order2_excluded(const Scalogram& scal, const FilterBank& bank2) {
  return detail::scatter_second_layer(scal, bank2, BankId::Primary, [](double l1, double l2) {
    return !order2_pair_kept(l1, l2);
  });
}

/// Output band `band` of the circular band-axis convolution of a bands x N
/// field with log-frequency scale `scale`, split into real and imaginary parts.
inline void logfreq_convolve(const LogFreqBank& lf, std::size_t scale, std::size_t band,
                             std::span<const double> field, std::size_t bands, std::size_t n,
                             std::span<double> re, std::span<double> im) {
  std::fill(re.begin(), re.end(), 0.0);
  std::fill(im.begin(), im.end(), 0.0);
  for (std::size_t m = 0; m < bands; ++m) {
    const Complex h = lf.tap(scale, band, m);
    const double hr = h.real();
    const double hi = h.imag();
    const double* row = field.data() + m * n;
    for (std::size_t t = 0; t < n; ++t) {
      re[t] += hr * row[t];
      im[t] += hi * row[t];
    }
  }
}

/// Band-axis convolution as a real matrix acting on scalogram columns: row
/// 2 * (b * alpha + s) gives the real part of output band b at scale s, the
/// next row its imaginary part.
inline Eigen::MatrixXd logfreq_matrix(const LogFreqBank& lf) {
  const std::size_t k = lf.grid_length();
  Eigen::MatrixXd h(static_cast<Eigen::Index>(2 * k * lf.alpha()), static_cast<Eigen::Index>(k));
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t s = 0; s < lf.alpha(); ++s) {
      const auto row = static_cast<Eigen::Index>(2 * (b * lf.alpha() + s));
      for (std::size_t m = 0; m < k; ++m) {
        const Complex tap = lf.tap(s, b, m);
        h(row, static_cast<Eigen::Index>(m)) = tap.real();
        h(row + 1, static_cast<Eigen::Index>(m)) = tap.imag();
      }
    }
  }
  return h;
}

/// Time frames processed per matrix product in the frequency-scattering pass.
inline constexpr std::size_t kFreqBlock = 512;

/// Calls visit(row, t, z) for every output row b * alpha + s and time t, where
/// z is the band-axis convolution of the bands x n field. Columns are handled
/// in blocks of kFreqBlock with a fixed visiting order, so every caller sees
/// bit-identical values.
template <class Visit>
void logfreq_transform(const LogFreqBank& lf, std::span<const double> field, std::size_t n,
                       Visit&& visit) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t k = lf.grid_length();
  const std::size_t rows = k * lf.alpha();
  const Eigen::MatrixXd h = logfreq_matrix(lf);
  RowMajor out;
  for (std::size_t t0 = 0; t0 < n; t0 += kFreqBlock) {
    const std::size_t len = std::min(kFreqBlock, n - t0);
    const Eigen::Map<const RowMajor, 0, Eigen::OuterStride<>> cols(
        field.data() + t0, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(len),
        Eigen::OuterStride<>(static_cast<Eigen::Index>(n)));
    out.noalias() = h * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* re = out.data() + 2 * r * len;
      const double* im = re + len;
      for (std::size_t t = 0; t < len; ++t) visit(r, t0 + t, Complex(re[t], im[t]));
    }
  }
}

/// Frequency scattering: every time column F_t of the scalogram is convolved
/// along the (circular) band axis with each log-frequency wavelet, and the
/// modulus is averaged over time.
inline IndexedValues scatter_freq(const Scalogram& scal, const LogFreqBank& lf) {
  require(lf.grid_length() == scal.bands, ErrorCode::GridMismatch,
          "log-frequency bank has " + std::to_string(lf.grid_length()) +
              " points, scalogram has " + std::to_string(scal.bands) + " bands");
  std::vector<double> acc(scal.bands * lf.alpha(), 0.0);
  logfreq_transform(lf, scal.values, scal.length,
                    [&](std::size_t row, std::size_t, Complex z) { acc[row] += modulus(z); });
  IndexedValues out;
  for (std::size_t b = 0; b < scal.bands; ++b) {
    for (std::size_t s = 0; s < lf.alpha(); ++s) {
      ScatteringIndex idx;
      idx.kind = CoefficientKind::FreqOrder2;
      idx.band1 = b;
      idx.lambda1 = scal.lambda_grid[b];
      idx.scale = s;
      idx.bar_lambda2 = lf.centers()[s];
      out.push(idx, acc[b * lf.alpha() + s] / static_cast<double>(scal.length));
    }
  }
  return out;
}

struct BlockCounts {
  std::size_t order1 = 0;
  std::size_t order2 = 0;
  std::size_t freq = 0;
  std::size_t dyadic_order1 = 0;
  std::size_t dyadic_order2 = 0;

  std::size_t total() const { return order1 + order2 + freq + dyadic_order1 + dyadic_order2; }
  bool operator==(const BlockCounts&) const = default;
};

/// Flat descriptor: Order1 (ascending lambda1), Order2 (lambda1 then lambda2),
/// FreqOrder2 (lambda1 then scale), then the optional dyadic-bank blocks.
struct ScatteringVector {
  std::vector<ScatteringIndex> indices;
  std::vector<double> values;
  std::string config_digest;
  DescriptorConfig config;
  BlockCounts counts;
  SignalStats stats;

  std::size_t size() const { return values.size(); }
};

/// Sum of squared order-1 and order-2 values of the primary bank.
inline double descriptor_energy(const ScatteringVector& s) {
  double e = 0.0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const auto& idx = s.indices[i];
    if (idx.bank == BankId::Primary && idx.kind != CoefficientKind::FreqOrder2) {
      e += s.values[i] * s.values[i];
    }
  }
  return e;
}

/// ||a - b|| / ||b||; refuses descriptors produced by different configs.
inline double relative_distance(const ScatteringVector& a, const ScatteringVector& b) {
  require(a.config_digest == b.config_digest, ErrorCode::DigestMismatch,
          "descriptor digests differ (" + a.config_digest + " vs " + b.config_digest + ")");
  require(a.size() == b.size(), ErrorCode::DigestMismatch, "descriptor lengths differ");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    den += b.values[i] * b.values[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Filter banks and index layout for one DescriptorConfig.
///
/// Construction builds every bank once; describe() is then a pure function of
/// the signal and may be called concurrently.
class ScatteringModel {
 public:
  explicit ScatteringModel(const DescriptorConfig& cfg)
      : cfg_(cfg),
        bank1_(build_filter_bank(cfg.signal_length, cfg.q1, cfg.min_frequency, cfg.bank_options())),
        bank2_(build_filter_bank(cfg.signal_length, cfg.q2, cfg.min_frequency, cfg.bank_options())),
        digest_(cfg.digest()) {
    if (cfg.include_freq_scattering) logfreq_ = build_logfreq_bank(bank1_.size(), cfg.alpha);
    if (cfg.include_dyadic_bank) {
      dyadic_ = build_filter_bank(cfg.signal_length, 1.0, cfg.min_frequency, cfg.bank_options());
    }
    build_layout();
  }

  const DescriptorConfig& config() const noexcept { return cfg_; }
  const FilterBank& first_bank() const noexcept { return bank1_; }
  const FilterBank& second_bank() const noexcept { return bank2_; }
  const LogFreqBank* logfreq_bank() const noexcept { return logfreq_ ? &*logfreq_ : nullptr; }
  const FilterBank* dyadic_bank() const noexcept { return dyadic_ ? &*dyadic_ : nullptr; }
  const std::vector<ScatteringIndex>& indices() const noexcept { return indices_; }
  const BlockCounts& counts() const noexcept { return counts_; }
  std::size_t size() const noexcept { return indices_.size(); }
  std::size_t signal_length() const noexcept { return cfg_.signal_length; }
  const std::string& digest() const noexcept { return digest_; }

  ScatteringVector describe(std::span<const double> x) const {
    require(x.size() == cfg_.signal_length, ErrorCode::LengthMismatch,
            "signal has " + std::to_string(x.size()) + " samples, config expects " +
                std::to_string(cfg_.signal_length));
    ScatteringVector out = empty_vector();
    out.stats = signal_stats(x);
    out.values.reserve(size());
    auto append = [&](const IndexedValues& block) {
      out.values.insert(out.values.end(), block.values.begin(), block.values.end());
    };
    const Scalogram scal = scalogram(x, bank1_);
    append(scatter_order1(scal));
    append(scatter_order2(scal, bank2_));
    if (logfreq_) append(scatter_freq(scal, *logfreq_));
    if (dyadic_) {
      const Scalogram dscal = scalogram(x, *dyadic_);
      append(scatter_order1(dscal, BankId::Dyadic));
      if (cfg_.dyadic_order2) append(scatter_order2(dscal, bank2_, BankId::Dyadic));
    }
    return out;
  }

  /// Descriptor skeleton with indices and metadata but no values.
  ScatteringVector empty_vector() const {
    ScatteringVector v;
    v.indices = indices_;
    v.config_digest = digest_;
    v.config = cfg_;
    v.counts = counts_;
    return v;
  }

 private:
  void add_time_blocks(const FilterBank& bank, BankId id, bool with_order2, std::size_t& n1,
                       std::size_t& n2) {
    for (std::size_t b = 0; b < bank.size(); ++b) {
      ScatteringIndex idx;
      idx.kind = CoefficientKind::Order1;
      idx.bank = id;
      idx.band1 = b;
      idx.lambda1 = bank.lambda_grid()[b];
      indices_.push_back(idx);
      ++n1;
    }
    if (!with_order2) return;
    for (std::size_t b = 0; b < bank.size(); ++b) {
      for (std::size_t l = 0; l < bank2_.size(); ++l) {
        if (!order2_pair_kept(bank.lambda_grid()[b], bank2_.lambda_grid()[l])) continue;
        ScatteringIndex idx;
        idx.kind = CoefficientKind::Order2;
        idx.bank = id;
        idx.band1 = b;
        idx.lambda1 = bank.lambda_grid()[b];
        idx.band2 = l;
        idx.lambda2 = bank2_.lambda_grid()[l];
        indices_.push_back(idx);
        ++n2;
      }
    }
  }

  void build_layout() {
    std::size_t order1 = 0;
    std::size_t order2 = 0;
    add_time_blocks(bank1_, BankId::Primary, true, order1, order2);
    counts_.order1 = order1;
    counts_.order2 = order2;
    if (logfreq_) {
      for (std::size_t b = 0; b < bank1_.size(); ++b) {
        for (std::size_t s = 0; s < logfreq_->alpha(); ++s) {
          ScatteringIndex idx;
          idx.kind = CoefficientKind::FreqOrder2;
          idx.band1 = b;
          idx.lambda1 = bank1_.lambda_grid()[b];
          idx.scale = s;
          idx.bar_lambda2 = logfreq_->centers()[s];
          indices_.push_back(idx);
          ++counts_.freq;
        }
      }
    }
    if (dyadic_) {
      add_time_blocks(*dyadic_, BankId::Dyadic, cfg_.dyadic_order2, counts_.dyadic_order1,
                      counts_.dyadic_order2);
    }
  }

  DescriptorConfig cfg_;
  FilterBank bank1_;
  FilterBank bank2_;
  std::optional<LogFreqBank> logfreq_;
  std::optional<FilterBank> dyadic_;
  std::string digest_;
  std::vector<ScatteringIndex> indices_;
  BlockCounts counts_;
};

inline ScatteringVector full_descriptor(std::span<const double> x, const DescriptorConfig& cfg) {
  return ScatteringModel(cfg).describe(x);
}

}  // namespace scatsynth
