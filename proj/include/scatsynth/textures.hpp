#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "scatsynth/error.hpp"
#include "scatsynth/fft.hpp"

namespace scatsynth {

/// Seeded synthetic stationary signals used as synthesis targets and test inputs.
enum class TextureKind { WhiteNoise, AmNoise, FilteredNoise, AmTone, Crackle };

inline std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::WhiteNoise: return "white-noise";
    case TextureKind::AmNoise: return "am-noise";
    case TextureKind::FilteredNoise: return "filtered-noise";
    case TextureKind::AmTone: return "am-tone";
    case TextureKind::Crackle: return "crackle";
  }
  return "unknown";
}

inline TextureKind texture_kind_from_string(const std::string& name) {
  for (auto k : {TextureKind::WhiteNoise, TextureKind::AmNoise, TextureKind::FilteredNoise,
                 TextureKind::AmTone, TextureKind::Crackle}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown texture '" + name + "'");
}

inline double phase_at(double cycles, std::size_t t, std::size_t n) {
  return 2.0 * std::numbers::pi * cycles * static_cast<double>(t) / static_cast<double>(n);
}

inline std::vector<double> white_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = normal(rng);
  return x;
}

/// White noise kept only on DFT bins [lo, hi] (and their mirrors), rescaled to unit RMS.
inline std::vector<double> band_noise(std::size_t n, std::uint64_t seed, double lo, double hi) {
  const auto w = white_noise(n, seed);
  const Fft fft(n);
  auto spectrum = fft.forward_real(w);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k));
    if (f < lo || f > hi) spectrum[k] = 0.0;
  }
  fft.inverse(spectrum);
  std::vector<double> x(n);
  double power = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = spectrum[t].real();
    power += x[t] * x[t];
  }
  const double scale = power > 0.0 ? std::sqrt(static_cast<double>(n) / power) : 0.0;
  for (auto& v : x) v *= scale;
  return x;
}

/// (1 + depth cos(2 pi g t / N)) times white noise; g in cycles per signal.
inline std::vector<double> am_noise(std::size_t n, std::uint64_t seed, double modulation,
                                    double depth = 0.8) {
  auto x = white_noise(n, seed);
  for (std::size_t t = 0; t < n; ++t) x[t] *= 1.0 + depth * std::cos(phase_at(modulation, t, n));
  return x;
}

/// (1 + depth cos(2 pi g t / N)) cos(2 pi f t / N).
inline std::vector<double> am_tone(std::size_t n, double carrier, double modulation,
                                   double depth = 1.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = (1.0 + depth * std::cos(phase_at(modulation, t, n))) * std::cos(phase_at(carrier, t, n));
  }
  return x;
}

/// Sparse decaying resonant clicks at random times, a rough rain-like texture.
inline std::vector<double> crackle(std::size_t n, std::uint64_t seed, double rate = 0.004) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  const std::size_t span = std::max<std::size_t>(8, n / 256);
  for (std::size_t t = 0; t < n; ++t) {
    if (uniform(rng) >= rate) continue;
    const double amp = normal(rng);
    const double freq = 0.05 + 0.35 * uniform(rng);  // cycles per sample
    const double decay = 4.0 / static_cast<double>(span);
    for (std::size_t k = 0; k < span; ++k) {
      x[(t + k) % n] += amp * std::exp(-decay * static_cast<double>(k)) *
                        std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(k));
    }
  }
  return x;
}

/// One seeded instance of each texture family, peak-normalised to 0.5.
inline std::vector<double> generate_texture(TextureKind kind, std::size_t n, std::uint64_t seed) {
  std::vector<double> x;
  const double nn = static_cast<double>(n);
  switch (kind) {
    case TextureKind::WhiteNoise: x = white_noise(n, seed); break;
    case TextureKind::AmNoise: x = am_noise(n, seed, std::max(2.0, nn / 512.0)); break;
    case TextureKind::FilteredNoise: x = band_noise(n, seed, nn / 64.0, nn / 8.0); break;
    case TextureKind::AmTone: x = am_tone(n, nn / 16.0, std::max(2.0, nn / 1024.0)); break;
    case TextureKind::Crackle: x = crackle(n, seed); break;
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : x) v *= 0.5 / peak;
  }
  return x;
}

}  // namespace scatsynth
