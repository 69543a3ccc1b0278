#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scatsynth/error.hpp"
#include "scatsynth/scattering.hpp"

namespace scatsynth {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Relative guard: a modulus derivative is zeroed where |z| <= this fraction
/// of the layer's largest envelope.
inline constexpr double kRelativeGuard = 1e-10;

/// Phase field z/|z| where |z| > guard, 0 elsewhere. This is the chain-rule
/// factor of the modulus used by every tangent and adjoint product.
inline std::vector<Complex> modulus_gradient(std::span<const Complex> z, double guard) {
  std::vector<Complex> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double a = modulus(z[i]);
    out[i] = a > guard ? z[i] / a : Complex(0.0, 0.0);
  }
  return out;
}

namespace detail {

inline double max_modulus(std::span<const Complex> z) {
  double m = 0.0;
  for (const Complex& v : z) m = std::max(m, modulus(v));
  return m;
}

// Converts a buffer of complex responses into guarded phases in place.
inline void to_phase(std::span<Complex> z, double guard) {
  for (Complex& v : z) {
    const double a = modulus(v);
    v = a > guard ? v / a : Complex(0.0, 0.0);
  }
}

inline double real_dot_conj(Complex p, Complex d) { return p.real() * d.real() + p.imag() * d.imag(); }

}  // namespace detail

/// Forward intermediates of one time-scattering block (first-layer bank plus
/// its second-layer pairs), kept for tangent and adjoint passes.
struct TimeBlockCache {
  const FilterBank* bank = nullptr;
  std::size_t order1_offset = 0;
  std::size_t order2_offset = 0;
  std::vector<Complex> phase1;    // bands x N
  std::vector<double> envelope;   // bands x N
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (band1, band2)
  std::vector<Complex> phase2;    // pairs x N
  double guard1 = 0.0;
  double guard2 = 0.0;

  std::span<const Complex> p1(std::size_t b, std::size_t n) const {
    return std::span<const Complex>(phase1).subspan(b * n, n);
  }
  std::span<const double> u1(std::size_t b, std::size_t n) const {
    return std::span<const double>(envelope).subspan(b * n, n);
  }
  std::span<const Complex> p2(std::size_t pair, std::size_t n) const {
    return std::span<const Complex>(phase2).subspan(pair * n, n);
  }
};

struct ForwardPass {
  const ScatteringModel* model = nullptr;
  std::vector<double> signal;
  std::vector<double> values;
  TimeBlockCache primary;
  std::optional<TimeBlockCache> dyadic;
  std::size_t freq_offset = 0;
  std::vector<Complex> freq_phase;  // (bands * alpha) x N, band-major
  double guard_freq = 0.0;
};

namespace detail {

inline void forward_time_block(const ScatteringModel& model, const FilterBank& bank,
                               std::span<const Complex> spectrum, bool with_order2,
                               TimeBlockCache& cache, std::vector<double>& values) {
  const std::size_t n = model.signal_length();
  const FilterBank& bank2 = model.second_bank();
  cache.bank = &bank;
  cache.phase1.resize(bank.size() * n);
  cache.envelope.resize(bank.size() * n);
  std::vector<Complex> work;
  for (std::size_t b = 0; b < bank.size(); ++b) {
    apply_filter(spectrum, bank.filter(b), bank.fft(), work);
    std::copy(work.begin(), work.end(), cache.phase1.begin() + static_cast<std::ptrdiff_t>(b * n));
    for (std::size_t t = 0; t < n; ++t) cache.envelope[b * n + t] = modulus(work[t]);
    values[cache.order1_offset + b] = mean_of(cache.u1(b, n));
  }
  cache.guard1 = kRelativeGuard * max_modulus(cache.phase1);
  to_phase(cache.phase1, cache.guard1);

  if (!with_order2) return;
  for (std::size_t b = 0; b < bank.size(); ++b) {
    for (std::size_t l = 0; l < bank2.size(); ++l) {
      if (order2_pair_kept(bank.lambda_grid()[b], bank2.lambda_grid()[l])) cache.pairs.emplace_back(b, l);
    }
  }
  cache.phase2.resize(cache.pairs.size() * n);
  std::vector<Complex> envelope_spectrum;
  std::size_t last_band = bank.size();
  for (std::size_t p = 0; p < cache.pairs.size(); ++p) {
    const auto [b, l] = cache.pairs[p];
    if (b != last_band) {
      envelope_spectrum = bank2.fft().forward_real(cache.u1(b, n));
      last_band = b;
    }
    apply_filter(envelope_spectrum, bank2.filter(l), bank2.fft(), work);
    std::copy(work.begin(), work.end(), cache.phase2.begin() + static_cast<std::ptrdiff_t>(p * n));
    values[cache.order2_offset + p] = mean_modulus(work);
  }
  cache.guard2 = kRelativeGuard * max_modulus(cache.phase2);
  to_phase(cache.phase2, cache.guard2);
}

}  // namespace detail

/// Runs the descriptor forward and keeps every intermediate needed to
/// differentiate it. values matches ScatteringModel::describe().
inline ForwardPass forward_pass(const ScatteringModel& model, std::span<const double> x) {
  const std::size_t n = model.signal_length();
  require(x.size() == n, ErrorCode::LengthMismatch, "signal length does not match config");
  const auto& counts = model.counts();
  ForwardPass fp;
  fp.model = &model;
  fp.signal.assign(x.begin(), x.end());
  fp.values.assign(model.size(), 0.0);

  const auto spectrum = model.first_bank().fft().forward_real(x);
  fp.primary.order1_offset = 0;
  fp.primary.order2_offset = counts.order1;
  detail::forward_time_block(model, model.first_bank(), spectrum, true, fp.primary, fp.values);

  fp.freq_offset = counts.order1 + counts.order2;
  if (const LogFreqBank* lf = model.logfreq_bank()) {
    const std::size_t bands = model.first_bank().size();
    fp.freq_phase.assign(bands * lf->alpha() * n, Complex(0.0, 0.0));
    std::vector<double> acc(bands * lf->alpha(), 0.0);
    logfreq_transform(*lf, fp.primary.envelope, n, [&](std::size_t row, std::size_t t, Complex z) {
      fp.freq_phase[row * n + t] = z;
      acc[row] += modulus(z);
    });
    for (std::size_t row = 0; row < acc.size(); ++row) {
      fp.values[fp.freq_offset + row] = acc[row] / static_cast<double>(n);
    }
    fp.guard_freq = kRelativeGuard * detail::max_modulus(fp.freq_phase);
    detail::to_phase(fp.freq_phase, fp.guard_freq);
  }

  if (const FilterBank* dyadic = model.dyadic_bank()) {
    fp.dyadic.emplace();
    fp.dyadic->order1_offset = fp.freq_offset + counts.freq;
    fp.dyadic->order2_offset = fp.dyadic->order1_offset + counts.dyadic_order1;
    detail::forward_time_block(model, *dyadic, spectrum, model.config().dyadic_order2, *fp.dyadic,
                               fp.values);
  }
  return fp;
}

namespace detail {

// Tangent of the first-layer envelopes: dU_b = Re(conj(p1_b) (v * psi_b)).
inline std::vector<double> envelope_tangent(const TimeBlockCache& cache,
                                            std::span<const Complex> v_spectrum, std::size_t n) {
  const FilterBank& bank = *cache.bank;
  std::vector<double> du(bank.size() * n);
  std::vector<Complex> work;
  for (std::size_t b = 0; b < bank.size(); ++b) {
    apply_filter(v_spectrum, bank.filter(b), bank.fft(), work);
    const auto p = cache.p1(b, n);
    for (std::size_t t = 0; t < n; ++t) du[b * n + t] = real_dot_conj(p[t], work[t]);
  }
  return du;
}

inline void tangent_time_block(const ScatteringModel& model, const TimeBlockCache& cache,
                               std::span<const double> du, std::vector<double>& out) {
  const std::size_t n = model.signal_length();
  const FilterBank& bank2 = model.second_bank();
  for (std::size_t b = 0; b < cache.bank->size(); ++b) {
    out[cache.order1_offset + b] = mean_of(du.subspan(b * n, n));
  }
  std::vector<Complex> spectrum;
  std::vector<Complex> work;
  std::size_t last_band = cache.bank->size();
  for (std::size_t p = 0; p < cache.pairs.size(); ++p) {
    const auto [b, l] = cache.pairs[p];
    if (b != last_band) {
      spectrum = bank2.fft().forward_real(du.subspan(b * n, n));
      last_band = b;
    }
    apply_filter(spectrum, bank2.filter(l), bank2.fft(), work);
    const auto phase = cache.p2(p, n);
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += real_dot_conj(phase[t], work[t]);
    out[cache.order2_offset + p] = acc / static_cast<double>(n);
  }
}

}  // namespace detail

/// Forward-mode product J(x) v, propagated through the cached phases.
inline std::vector<double> jvp(const ForwardPass& fp, std::span<const double> v) {
  const ScatteringModel& model = *fp.model;
  const std::size_t n = model.signal_length();
  require(v.size() == n, ErrorCode::LengthMismatch, "tangent length does not match signal");
  std::vector<double> out(model.size(), 0.0);
  const auto v_spectrum = model.first_bank().fft().forward_real(v);

  const auto du = detail::envelope_tangent(fp.primary, v_spectrum, n);
  detail::tangent_time_block(model, fp.primary, du, out);

  if (const LogFreqBank* lf = model.logfreq_bank()) {
    const std::size_t bands = model.first_bank().size();
    std::vector<double> re(n);
    std::vector<double> im(n);
    for (std::size_t b = 0; b < bands; ++b) {
      for (std::size_t s = 0; s < lf->alpha(); ++s) {
        const std::size_t row = b * lf->alpha() + s;
        logfreq_convolve(*lf, s, b, du, bands, n, re, im);
        const Complex* q = fp.freq_phase.data() + row * n;
        double sum = 0.0;
        for (std::size_t t = 0; t < n; ++t) sum += q[t].real() * re[t] + q[t].imag() * im[t];
        out[fp.freq_offset + row] = sum / static_cast<double>(n);
      }
    }
  }

  if (fp.dyadic) {
    const auto ddu = detail::envelope_tangent(*fp.dyadic, v_spectrum, n);
    detail::tangent_time_block(model, *fp.dyadic, ddu, out);
  }
  return out;
}

namespace detail {

// Envelope cotangents G_b(t) for one first-layer bank; rows stay empty until
// some descriptor entry touches them.
struct EnvelopeCotangent {
  std::vector<std::vector<double>> rows;

  std::vector<double>& row(std::size_t b, std::size_t n) {
    if (rows[b].empty()) rows[b].assign(n, 0.0);
    return rows[b];
  }
};

inline EnvelopeCotangent adjoint_time_block(const ScatteringModel& model,
                                            const TimeBlockCache& cache,
                                            std::span<const double> w) {
  const std::size_t n = model.signal_length();
  const double inv_n = 1.0 / static_cast<double>(n);
  const FilterBank& bank2 = model.second_bank();
  EnvelopeCotangent g{std::vector<std::vector<double>>(cache.bank->size())};

  for (std::size_t b = 0; b < cache.bank->size(); ++b) {
    const double wb = w[cache.order1_offset + b];
    if (wb == 0.0) continue;
    auto& row = g.row(b, n);
    for (std::size_t t = 0; t < n; ++t) row[t] += wb * inv_n;
  }

  // Second layer: accumulate sum_l FFT(w p2 / N) psi2_l per band, one inverse.
  std::vector<Complex> acc;
  std::vector<Complex> work(n);
  std::size_t current = cache.bank->size();
  auto flush = [&] {
    if (current == cache.bank->size() || acc.empty()) return;
    bank2.fft().inverse(acc);
    auto& row = g.row(current, n);
    for (std::size_t t = 0; t < n; ++t) row[t] += acc[t].real();
    acc.clear();
  };
  for (std::size_t p = 0; p < cache.pairs.size(); ++p) {
    const auto [b, l] = cache.pairs[p];
    if (b != current) {
      flush();
      current = b;
    }
    const double wp = w[cache.order2_offset + p];
    if (wp == 0.0) continue;
    if (acc.empty()) acc.assign(n, Complex(0.0, 0.0));
    const auto phase = cache.p2(p, n);
    for (std::size_t t = 0; t < n; ++t) work[t] = phase[t] * (wp * inv_n);
    bank2.fft().forward(work);
    const auto filt = bank2.filter(l);
    for (std::size_t k = 0; k < n; ++k) acc[k] += work[k] * filt[k];
  }
  flush();
  return g;
}

// Adds sum_b FFT(G_b p1_b) psi_b into a shared spectrum accumulator.
inline void accumulate_first_layer(const TimeBlockCache& cache, const EnvelopeCotangent& g,
                                   std::size_t n, std::vector<Complex>& spectrum) {
  const FilterBank& bank = *cache.bank;
  std::vector<Complex> work(n);
  for (std::size_t b = 0; b < bank.size(); ++b) {
    if (g.rows[b].empty()) continue;
    const auto p = cache.p1(b, n);
    for (std::size_t t = 0; t < n; ++t) work[t] = p[t] * g.rows[b][t];
    bank.fft().forward(work);
    const auto filt = bank.filter(b);
    for (std::size_t k = 0; k < n; ++k) spectrum[k] += work[k] * filt[k];
  }
}

}  // namespace detail

/// Reverse-mode product J(x)^T w without materialising J.
inline std::vector<double> vjp(const ForwardPass& fp, std::span<const double> w) {
  const ScatteringModel& model = *fp.model;
  const std::size_t n = model.signal_length();
  require(w.size() == model.size(), ErrorCode::LengthMismatch,
          "cotangent length does not match descriptor");
  const double inv_n = 1.0 / static_cast<double>(n);

  auto g = detail::adjoint_time_block(model, fp.primary, w);
  if (const LogFreqBank* lf = model.logfreq_bank()) {
    const std::size_t bands = model.first_bank().size();
    for (std::size_t b = 0; b < bands; ++b) {
      for (std::size_t s = 0; s < lf->alpha(); ++s) {
        const std::size_t row = b * lf->alpha() + s;
        const double wr = w[fp.freq_offset + row];
        if (wr == 0.0) continue;
        const double* q = reinterpret_cast<const double*>(fp.freq_phase.data() + row * n);
        for (std::size_t m = 0; m < bands; ++m) {
          const Complex h = lf->tap(s, b, m) * (wr * inv_n);
          const double hr = h.real();
          const double hi = h.imag();
          double* grow = g.row(m, n).data();
          for (std::size_t t = 0; t < n; ++t) grow[t] += q[2 * t] * hr + q[2 * t + 1] * hi;
        }
      }
    }
  }

  std::vector<Complex> spectrum(n, Complex(0.0, 0.0));
  detail::accumulate_first_layer(fp.primary, g, n, spectrum);
  if (fp.dyadic) {
    const auto dg = detail::adjoint_time_block(model, *fp.dyadic, w);
    detail::accumulate_first_layer(*fp.dyadic, dg, n, spectrum);
  }
  model.first_bank().fft().inverse(spectrum);
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = spectrum[t].real();
  return out;
}

inline std::vector<double> jacobian_vjp(const ScatteringModel& model, std::span<const double> x,
                                        std::span<const double> cotangent) {
  return vjp(forward_pass(model, x), cotangent);
}

struct ScatteringJacobian {
  RowMatrix rows;                 // M x N
  std::vector<double> base_point;
  std::vector<double> values;     // descriptor at base_point
  double guard_threshold = 0.0;   // first-layer modulus guard
};

inline constexpr std::size_t kDefaultDenseCap = 4096;

/// Dense Jacobian, one adjoint pass per descriptor entry over a shared forward.
inline ScatteringJacobian jacobian_dense(const ForwardPass& fp,
                                         std::size_t cap = kDefaultDenseCap) {
  const ScatteringModel& model = *fp.model;
  const std::size_t m = model.size();
  require(m <= cap, ErrorCode::CapExceeded,
          "descriptor length " + std::to_string(m) + " exceeds dense cap " + std::to_string(cap));
  const std::size_t n = model.signal_length();
  ScatteringJacobian jac;
  jac.rows.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  jac.base_point = fp.signal;
  jac.values = fp.values;
  jac.guard_threshold = fp.primary.guard1;
  std::vector<double> unit(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    unit[k] = 1.0;
    const auto row = vjp(fp, unit);
    unit[k] = 0.0;
    std::copy(row.begin(), row.end(), jac.rows.row(static_cast<Eigen::Index>(k)).data());
  }
  return jac;
}

inline ScatteringJacobian jacobian_dense(const ScatteringModel& model, std::span<const double> x,
                                         std::size_t cap = kDefaultDenseCap) {
  require(model.size() <= cap, ErrorCode::CapExceeded,
          "descriptor length " + std::to_string(model.size()) + " exceeds dense cap " +
              std::to_string(cap));
  return jacobian_dense(forward_pass(model, x), cap);
}

/// Binary dump: M and N as little-endian uint64, then row-major little-endian doubles.
inline void write_jacobian_binary(const std::string& path, const RowMatrix& rows) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot open " + path);
  auto put_u64 = [&](std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(bytes), 8);
  };
  put_u64(static_cast<std::uint64_t>(rows.rows()));
  put_u64(static_cast<std::uint64_t>(rows.cols()));
  for (Eigen::Index i = 0; i < rows.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(rows.data()[i]);
    put_u64(bits);
  }
  require(static_cast<bool>(os), ErrorCode::IoError, "write failed for " + path);
}

inline RowMatrix read_jacobian_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path);
  auto get_u64 = [&]() {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    require(static_cast<bool>(is), ErrorCode::UnsupportedFormat, "truncated Jacobian file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
  };
  const auto m = static_cast<Eigen::Index>(get_u64());
  const auto n = static_cast<Eigen::Index>(get_u64());
  RowMatrix rows(m, n);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = std::bit_cast<double>(get_u64());
  return rows;
}

}  // namespace scatsynth
