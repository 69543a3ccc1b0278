#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "scatsynth/scattering.hpp"
#include "scatsynth/textures.hpp"

using namespace scatsynth;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double relative_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

// Definition-level reference: filters rebuilt from the Gaussian window formula,
// impulse responses by explicit inverse DFT, O(N^2) circular convolution.
struct NaiveBank {
  std::vector<double> lambdas;
  std::vector<std::vector<Complex>> impulse;  // psi_lambda(t)
};

NaiveBank naive_bank(std::size_t n, double q, double n0, double fmax) {
  NaiveBank bank;
  for (int j = 0;; ++j) {
    const double lambda = n0 * std::pow(2.0, j / q);
    if (lambda > fmax * (1.0 + 1e-12)) break;
    bank.lambdas.push_back(lambda);
  }
  const double r = std::pow(2.0, 1.0 / q);
  const double sigma = (r - 1.0) / (r + 1.0) / std::sqrt(std::log(2.0));
  std::vector<std::vector<double>> hat;
  for (double lambda : bank.lambdas) {
    std::vector<double> h(n, 0.0);
    for (std::size_t k = 1; k <= n / 2; ++k) {
      const double u = static_cast<double>(k) / lambda - 1.0;
      h[k] = std::sqrt(2.0) * std::exp(-u * u / (2.0 * sigma * sigma));
    }
    h[n / 2] /= std::sqrt(2.0);
    hat.push_back(h);
  }
  double peak = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    double c = 0.0;
    for (const auto& h : hat) c += h[k] * h[k];
    if (k < n / 2) c *= 0.5;
    peak = std::max(peak, c);
  }
  const double norm = peak > 1.0 ? 1.0 / std::sqrt(peak) : 1.0;
  for (const auto& h : hat) {
    std::vector<Complex> psi(n);
    for (std::size_t t = 0; t < n; ++t) {
      Complex acc(0.0, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double angle = kTwoPi * static_cast<double>(k * t) / static_cast<double>(n);
        acc += norm * h[k] * Complex(std::cos(angle), std::sin(angle));
      }
      psi[t] = acc / static_cast<double>(n);
    }
    bank.impulse.push_back(psi);
  }
  return bank;
}

std::vector<double> naive_envelope(const std::vector<double>& x, const std::vector<Complex>& psi) {
  const std::size_t n = x.size();
  std::vector<double> env(n);
  for (std::size_t t = 0; t < n; ++t) {
    Complex acc(0.0, 0.0);
    for (std::size_t s = 0; s < n; ++s) acc += x[s] * psi[(t + n - s) % n];
    env[t] = std::abs(acc);
  }
  return env;
}

double naive_mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

// Order 1 and order 2 (lambda2 < lambda1), then frequency scattering if alpha > 0.
std::vector<double> naive_descriptor(const std::vector<double>& x, double q1, double q2, double n0,
                                     double fmax, std::size_t alpha) {
  const std::size_t n = x.size();
  const auto b1 = naive_bank(n, q1, n0, fmax);
  const auto b2 = naive_bank(n, q2, n0, fmax);
  std::vector<std::vector<double>> scal;
  std::vector<double> out;
  for (const auto& psi : b1.impulse) {
    scal.push_back(naive_envelope(x, psi));
    out.push_back(naive_mean(scal.back()));
  }
  for (std::size_t a = 0; a < b1.lambdas.size(); ++a) {
    for (std::size_t l = 0; l < b2.lambdas.size(); ++l) {
      if (!(b2.lambdas[l] < b1.lambdas[a] * (1.0 - 1e-9))) continue;
      out.push_back(naive_mean(naive_envelope(scal[a], b2.impulse[l])));
    }
  }
  if (alpha == 0) return out;
  const std::size_t k = b1.lambdas.size();
  const double sigma = (1.0 / 3.0) / std::sqrt(std::log(2.0));
  std::vector<std::vector<Complex>> kernels;
  for (std::size_t s = 0; s < alpha; ++s) {
    const double centre = static_cast<double>(k) / std::pow(2.0, static_cast<double>(s) + 2.0);
    std::vector<double> h(k, 0.0);
    for (std::size_t f = 1; 2 * f <= k; ++f) {
      const double u = static_cast<double>(f) / centre - 1.0;
      h[f] = std::sqrt(2.0) * std::exp(-u * u / (2.0 * sigma * sigma));
    }
    if (k % 2 == 0) h[k / 2] /= std::sqrt(2.0);
    std::vector<Complex> ker(k);
    for (std::size_t m = 0; m < k; ++m) {
      Complex acc(0.0, 0.0);
      for (std::size_t f = 0; f < k; ++f) {
        const double angle = kTwoPi * static_cast<double>(f * m) / static_cast<double>(k);
        acc += h[f] * Complex(std::cos(angle), std::sin(angle));
      }
      ker[m] = acc / static_cast<double>(k);
    }
    kernels.push_back(ker);
  }
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t s = 0; s < alpha; ++s) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        Complex z(0.0, 0.0);
        for (std::size_t m = 0; m < k; ++m) z += kernels[s][(b + k - m) % k] * scal[m][t];
        acc += std::abs(z);
      }
      out.push_back(acc / static_cast<double>(n));
    }
  }
  return out;
}

std::vector<double> cosine(std::size_t n, double f, double amplitude = 1.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = amplitude * std::cos(phase_at(f, t, n));
  return x;
}

}  // namespace

TEST(Scalogram, ZeroAndConstantInputsVanish) {
  const auto bank = build_filter_bank(256, 2.0, 4.0);
  for (double c : {0.0, 3.5}) {
    const auto scal = scalogram(std::vector<double>(256, c), bank);
    EXPECT_EQ(scal.bands, bank.size());
    EXPECT_EQ(scal.length, 256u);
    for (double v : scal.values) EXPECT_LT(v, 1e-13);
  }
}

TEST(Scalogram, PureToneRowsEqualHalfFilterGain) {
  const std::size_t n = 1024;
  const auto bank = build_filter_bank(n, 4.0, 4.0);
  const std::size_t f = 64;
  const auto scal = scalogram(cosine(n, static_cast<double>(f)), bank);
  std::size_t brightest = 0;
  for (std::size_t b = 0; b < bank.size(); ++b) {
    const double expected = bank.filter(b)[f] / 2.0;
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(scal.at(b, t), expected, 1e-12);
    if (scal.at(b, 0) > scal.at(brightest, 0)) brightest = b;
  }
  EXPECT_DOUBLE_EQ(bank.lambda_grid()[brightest], 64.0);
}

TEST(Scalogram, RejectsLengthMismatch) {
  const auto bank = build_filter_bank(256, 1.0, 4.0);
  try {
    scalogram(std::vector<double>(128, 0.0), bank);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(Order1, MeanOfRowsAndHomogeneity) {
  const std::size_t n = 512;
  const auto bank = build_filter_bank(n, 2.0, 4.0);
  const auto x = white_noise(n, 4);
  const auto scal = scalogram(x, bank);
  const auto s1 = scatter_order1(scal);
  ASSERT_EQ(s1.values.size(), bank.size());
  for (std::size_t b = 0; b < bank.size(); ++b) {
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += scal.at(b, t);
    EXPECT_NEAR(s1.values[b], acc / n, 1e-14);
  }
  auto scaled = x;
  for (auto& v : scaled) v *= -4.0;
  const auto s1b = scatter_order1(scalogram(scaled, bank));
  for (std::size_t b = 0; b < bank.size(); ++b) EXPECT_DOUBLE_EQ(s1b.values[b], 4.0 * s1.values[b]);
}

TEST(Order1, WhiteNoiseEnergyBound) {
  const std::size_t n = 1024;
  const auto bank = build_filter_bank(n, 2.0, 4.0);
  std::vector<double> mean_square(bank.size(), 0.0);
  const int draws = 100;
  for (int d = 0; d < draws; ++d) {
    const auto scal = scalogram(white_noise(n, 1000 + d), bank);
    const auto s1 = scatter_order1(scal);
    for (std::size_t b = 0; b < bank.size(); ++b) {
      double ms = 0.0;
      for (std::size_t t = 0; t < n; ++t) ms += scal.at(b, t) * scal.at(b, t) / n;
      EXPECT_LE(s1.values[b] * s1.values[b], ms + 1e-15);
      mean_square[b] += ms / draws;
    }
  }
  double total = 0.0;
  for (double v : mean_square) total += v;
  EXPECT_LE(total, 1.05);
}

TEST(Order2, PureToneGivesNearZero) {
  const std::size_t n = 1024;
  const auto b1 = build_filter_bank(n, 4.0, 4.0);
  const auto b2 = build_filter_bank(n, 1.0, 4.0);
  const auto s2 = scatter_order2(scalogram(cosine(n, 128.0), b1), b2);
  for (double v : s2.values) EXPECT_LT(v, 1e-12);
}

TEST(Order2, AmToneModulationPeak) {
  const std::size_t n = 4096;
  const auto b1 = build_filter_bank(n, 4.0, 4.0);
  const auto b2 = build_filter_bank(n, 1.0, 4.0);
  const double f = 512.0;
  const double g = 16.0;
  const auto scal = scalogram(am_tone(n, f, g), b1);
  const auto s2 = scatter_order2(scal, b2);
  const std::size_t band1 = static_cast<std::size_t>(
      std::find(b1.lambda_grid().begin(), b1.lambda_grid().end(), f) - b1.lambda_grid().begin());
  ASSERT_LT(band1, b1.size());

  std::size_t best = 0;
  double best_value = -1.0;
  double at_g = 0.0;
  std::size_t g_band = 0;
  for (std::size_t i = 0; i < s2.indices.size(); ++i) {
    if (s2.indices[i].band1 != band1) continue;
    if (s2.values[i] > best_value) {
      best_value = s2.values[i];
      best = s2.indices[i].band2;
    }
    if (s2.indices[i].lambda2 == g) {
      at_g = s2.values[i];
      g_band = s2.indices[i].band2;
    }
  }
  EXPECT_EQ(best, g_band);
  // Envelope at band f is A (1 + cos 2 pi g t / N) with A = psi_f(f) / 2; its
  // wavelet modulus at lambda2 = g is A psi_g(g) / 2.
  const double amplitude = b1.filter(band1)[static_cast<std::size_t>(f)] / 2.0;
  const double predicted = amplitude * b2.filter(g_band)[static_cast<std::size_t>(g)] / 2.0;
  EXPECT_NEAR(at_g, predicted, 0.1 * predicted);
}

TEST(Order2, IndexIsStrictlyTriangular) {
  const auto b1 = build_filter_bank(2048, 4.0, 4.0);
  const auto b2 = build_filter_bank(2048, 1.0, 4.0);
  const auto scal = scalogram(white_noise(2048, 1), b1);
  const auto kept = scatter_order2(scal, b2);
  const auto excluded = scatter_order2_excluded(scal, b2);
  std::size_t expected = 0;
  for (double l1 : b1.lambda_grid()) {
    for (double l2 : b2.lambda_grid()) expected += l2 < l1 ? 1 : 0;
  }
  EXPECT_EQ(kept.values.size(), expected);
  EXPECT_EQ(kept.values.size() + excluded.values.size(), b1.size() * b2.size());
  for (const auto& idx : kept.indices) EXPECT_LT(idx.lambda2, idx.lambda1);
  for (const auto& idx : excluded.indices) EXPECT_GE(idx.lambda2, idx.lambda1);
}

TEST(FreqScattering, FlatColumnsVanish) {
  Scalogram scal;
  scal.bands = 16;
  scal.length = 32;
  scal.lambda_grid.resize(16);
  scal.values.resize(16 * 32);
  for (std::size_t b = 0; b < 16; ++b) {
    scal.lambda_grid[b] = 4.0 * std::exp2(b / 4.0);
    for (std::size_t t = 0; t < 32; ++t) scal.values[b * 32 + t] = 1.0 + std::sin(0.4 * t);
  }
  const auto out = scatter_freq(scal, build_logfreq_bank(16, 2));
  for (double v : out.values) EXPECT_LT(v, 1e-13);
}

TEST(FreqScattering, IsolatedLineMatchesImpulseResponse) {
  const std::size_t k = 24;
  const std::size_t active = 9;
  const double amplitude = 2.5;
  Scalogram scal;
  scal.bands = k;
  scal.length = 8;
  scal.lambda_grid.resize(k);
  scal.values.assign(k * 8, 0.0);
  for (std::size_t b = 0; b < k; ++b) scal.lambda_grid[b] = 4.0 * std::exp2(b / 4.0);
  for (std::size_t t = 0; t < 8; ++t) scal.values[active * 8 + t] = amplitude;
  const auto lf = build_logfreq_bank(k, 2);
  const auto out = scatter_freq(scal, lf);
  ASSERT_EQ(out.values.size(), 2 * k);

  // Reference impulse response: inverse DFT of the octave filter on the
  // circular grid, evaluated independently of the bank's stored kernel.
  const double sigma = (1.0 / 3.0) / std::sqrt(std::log(2.0));
  for (std::size_t s = 0; s < 2; ++s) {
    const double centre = static_cast<double>(k) / std::exp2(s + 2.0);
    std::size_t argmax = 0;
    double best = -1.0;
    for (std::size_t b = 0; b < k; ++b) {
      const std::size_t offset = (b + k - active) % k;
      Complex h(0.0, 0.0);
      for (std::size_t f = 1; 2 * f <= k; ++f) {
        const double u = f / centre - 1.0;
        double gain = std::sqrt(2.0) * std::exp(-u * u / (2.0 * sigma * sigma));
        if (2 * f == k) gain /= std::sqrt(2.0);
        h += gain * std::polar(1.0, kTwoPi * static_cast<double>(f * offset) / k);
      }
      const double expected = amplitude * std::abs(h) / static_cast<double>(k);
      const double got = out.values[b * 2 + s];
      EXPECT_NEAR(got, expected, 1e-12);
      if (got > best) {
        best = got;
        argmax = b;
      }
    }
    EXPECT_EQ(argmax, active);
  }
}

TEST(FreqScattering, RejectsGridMismatch) {
  const auto bank = build_filter_bank(256, 2.0, 4.0);
  const auto scal = scalogram(white_noise(256, 2), bank);
  try {
    scatter_freq(scal, build_logfreq_bank(bank.size() + 1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
  }
}

TEST(Descriptor, MatchesNaiveOracleOnDyadicTwoBandBank) {
  DescriptorConfig cfg;
  cfg.signal_length = 64;
  cfg.q1 = 1.0;
  cfg.q2 = 1.0;
  cfg.min_frequency = 4.0;
  cfg.max_frequency = 8.0;
  cfg.include_freq_scattering = false;
  const ScatteringModel model(cfg);
  ASSERT_EQ(model.first_bank().size(), 2u);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = white_noise(64, seed);
    const auto got = model.describe(x);
    const auto expected = naive_descriptor(x, 1.0, 1.0, 4.0, 8.0, 0);
    ASSERT_EQ(got.values.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_NEAR(got.values[i], expected[i], 1e-10 * std::max(1.0, expected[i]));
    }
  }
}

TEST(Descriptor, MatchesNaiveOracleWithFrequencyScattering) {
  DescriptorConfig cfg;
  cfg.signal_length = 64;
  cfg.q1 = 2.0;
  cfg.q2 = 1.0;
  cfg.min_frequency = 4.0;
  cfg.alpha = 1;
  const ScatteringModel model(cfg);
  const auto x = generate_texture(TextureKind::Crackle, 64, 3);
  const auto got = model.describe(x);
  const auto expected = naive_descriptor(x, 2.0, 1.0, 4.0, 32.0, 1);
  ASSERT_EQ(got.values.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(got.values[i], expected[i], 1e-10 * std::max(1.0, expected[i]));
  }
}

TEST(Descriptor, DefaultCountsAndOrdering) {
  const ScatteringModel model(DescriptorConfig{});
  const auto& c = model.counts();
  EXPECT_EQ(c.order1, 45u);
  EXPECT_EQ(c.order1, model.first_bank().size());
  std::size_t pairs = 0;
  for (double l1 : model.first_bank().lambda_grid()) {
    for (double l2 : model.second_bank().lambda_grid()) pairs += l2 < l1 ? 1 : 0;
  }
  EXPECT_EQ(c.order2, pairs);
  EXPECT_EQ(c.order2, 264u);
  EXPECT_EQ(c.freq, 2 * c.order1);
  EXPECT_EQ(c.total(), model.size());

  std::set<std::tuple<int, int, std::size_t, std::size_t, std::size_t>> seen;
  const auto& idx = model.indices();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    EXPECT_TRUE(seen.emplace(static_cast<int>(idx[i].kind), static_cast<int>(idx[i].bank),
                             idx[i].band1, idx[i].band2, idx[i].scale)
                    .second);
    if (i == 0) continue;
    const auto& p = idx[i - 1];
    const auto& q = idx[i];
    if (p.kind != q.kind) {
      EXPECT_LT(static_cast<int>(p.kind), static_cast<int>(q.kind));
      continue;
    }
    if (q.kind == CoefficientKind::Order1) {
      EXPECT_LT(p.lambda1, q.lambda1);
    }
    if (q.kind == CoefficientKind::Order2) {
      EXPECT_TRUE(p.lambda1 < q.lambda1 || (p.lambda1 == q.lambda1 && p.lambda2 < q.lambda2));
    }
    if (q.kind == CoefficientKind::FreqOrder2) {
      EXPECT_TRUE(p.lambda1 < q.lambda1 || (p.lambda1 == q.lambda1 && p.scale < q.scale));
    }
  }
}

TEST(Descriptor, DyadicBankAddsHundredTwentyAtNominalLength) {
  DescriptorConfig cfg;
  cfg.signal_length = 1 << 17;
  cfg.include_dyadic_bank = true;
  const ScatteringModel model(cfg);
  EXPECT_EQ(model.counts().dyadic_order1 + model.counts().dyadic_order2, 120u);
  EXPECT_EQ(model.counts().dyadic_order1, model.dyadic_bank()->size());
}

TEST(Descriptor, ZeroSignalGivesZeroVector) {
  DescriptorConfig cfg;
  cfg.signal_length = 1024;
  const auto d = full_descriptor(std::vector<double>(1024, 0.0), cfg);
  EXPECT_EQ(d.size(), ScatteringModel(cfg).size());
  for (double v : d.values) EXPECT_EQ(v, 0.0);
}

TEST(Descriptor, HomogeneityAndShiftInvariance) {
  DescriptorConfig cfg;
  cfg.signal_length = 2048;
  cfg.include_dyadic_bank = true;
  const ScatteringModel model(cfg);
  const auto x = generate_texture(TextureKind::AmNoise, 2048, 5);
  const auto base = model.describe(x);
  for (double v : base.values) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
  }
  for (double a : {-2.5, 0.3, 7.0}) {
    auto y = x;
    for (auto& v : y) v *= a;
    auto expected = base.values;
    for (auto& v : expected) v *= std::abs(a);
    EXPECT_LT(relative_diff(model.describe(y).values, expected), 1e-12);
  }
  for (std::size_t shift : {1ul, 37ul, 1000ul}) {
    std::vector<double> y(2048);
    for (std::size_t t = 0; t < 2048; ++t) y[(t + shift) % 2048] = x[t];
    EXPECT_LT(relative_diff(model.describe(y).values, base.values), 1e-12);
  }
}

TEST(Descriptor, EnergyBoundedByVariance) {
  DescriptorConfig cfg;
  cfg.signal_length = 1024;
  const ScatteringModel model(cfg);
  for (auto kind : {TextureKind::WhiteNoise, TextureKind::AmTone, TextureKind::FilteredNoise}) {
    const auto d = model.describe(generate_texture(kind, 1024, 8));
    EXPECT_LE(descriptor_energy(d), d.stats.variance * (1.0 + 1e-8));
    EXPECT_GT(descriptor_energy(d), 0.0);
  }
  EXPECT_EQ(descriptor_energy(model.empty_vector()), 0.0);
}

TEST(Descriptor, ImpulseEnergyIndependentOfFftRoute) {
  const std::size_t n = 1024;
  std::vector<double> impulse(n, 0.0);
  impulse[0] = 1.0;
  auto energy = [&](Fft::Strategy strategy) {
    BankOptions opts;
    opts.fft_strategy = strategy;
    const auto b1 = build_filter_bank(n, 4.0, 4.0, opts);
    const auto b2 = build_filter_bank(n, 1.0, 4.0, opts);
    EXPECT_EQ(b1.fft().strategy(), strategy);
    const auto scal = scalogram(impulse, b1);
    double e = 0.0;
    for (double v : scatter_order1(scal).values) e += v * v;
    for (double v : scatter_order2(scal, b2).values) e += v * v;
    return e;
  };
  const double radix2 = energy(Fft::Strategy::Radix2);
  const double bluestein = energy(Fft::Strategy::Bluestein);
  EXPECT_NEAR(radix2, bluestein, 1e-12 * radix2);
}

TEST(Descriptor, DistanceRefusesDifferentConfigs) {
  DescriptorConfig a;
  a.signal_length = 256;
  DescriptorConfig b = a;
  b.q1 = 2.0;
  const auto da = full_descriptor(white_noise(256, 1), a);
  const auto db = full_descriptor(white_noise(256, 1), b);
  EXPECT_EQ(relative_distance(da, da), 0.0);
  try {
    relative_distance(da, db);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DigestMismatch);
  }
  EXPECT_NE(a.digest(), b.digest());
  EXPECT_EQ(a.digest().size(), 16u);
}
