// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scatsynth/jacobian.hpp"
#include "scatsynth/scattering.hpp"
#include "scatsynth/serialization.hpp"
#include "scatsynth/synthesis.hpp"
#include "scatsynth/textures.hpp"

using namespace scatsynth;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;
using Cplx = std::complex<double>;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double rel_gap(std::span<const double> a, std::span<const double> b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
// 1. Frame condition

Outcome frame_condition() {
  const std::size_t n = 1 << 14;
  std::string detail;
  bool ok = true;
  for (double q : {1.0, 4.0}) {
    const auto bank = build_filter_bank(n, q, 4.0);
    const auto cover = coverage_profile(bank.all_filters(), bank.size(), n);
    double upper = 0.0;
    double lower = 1e300;
    for (std::size_t k = 4; k <= n / 2; ++k) {
      upper = std::max(upper, cover[k]);
      if (static_cast<double>(k) <= bank.max_frequency()) lower = std::min(lower, cover[k]);
    }
    const double eps = 1.0 - lower;
    ok = ok && eps < 1.0 && bank.frame_epsilon() < 1.0 && upper <= 1.0 + 1e-12;
    if (!detail.empty()) detail += "; ";
    detail += "Q=" + fmt("%g", q) + " eps " + fmt("%.4f", eps) + " max " + fmt("%.15g", upper);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 2. Energy inequality

Outcome energy_inequality() {
  const std::size_t n = 1 << 12;
  DescriptorConfig cfg;
  cfg.signal_length = n;
  const ScatteringModel model(cfg);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x;
    const auto seed = static_cast<std::uint64_t>(1000 + i);
    switch (i % 3) {
      case 0: x = white_noise(n, seed); break;
      case 1: x = am_tone(n, 32.0 + std::floor(900.0 * u(rng)), 2.0 + std::floor(30.0 * u(rng)), u(rng)); break;
      default: {
        const double lo = 8.0 + std::floor(200.0 * u(rng));
        x = band_noise(n, seed, lo, lo + 16.0 + std::floor(800.0 * u(rng)));
      }
    }
    const auto v = model.describe(x);
    worst = std::max(worst, descriptor_energy(v) / v.stats.variance);
  }
  return {worst <= 1.0 + 1e-8, "max energy/variance " + fmt("%.9f", worst) + " over 100 signals"};
}

// ---------------------------------------------------------------------------
// 3. Homogeneity and shift invariance

Outcome homogeneity_and_shift() {
  const std::size_t n = 1 << 12;
  DescriptorConfig cfg;
  cfg.signal_length = n;
  cfg.include_dyadic_bank = true;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_h = 0.0;
  double worst_s = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto x = generate_texture(static_cast<TextureKind>(i % 5), n, 500 + i);
    const double a = std::copysign(std::pow(10.0, u(rng)), u(rng));
    auto ax = x;
    for (auto& v : ax) v *= a;
    const auto base = full_descriptor(x, cfg).values;
    auto expect = base;
    for (auto& v : expect) v *= std::abs(a);
    worst_h = std::max(worst_h, rel_gap(full_descriptor(ax, cfg).values, expect));
    auto sx = x;
    const auto shift = static_cast<long>(rng() % n);
    std::rotate(sx.begin(), sx.begin() + shift, sx.end());
    worst_s = std::max(worst_s, rel_gap(full_descriptor(sx, cfg).values, base));
  }
  return {worst_h <= 1e-12 && worst_s <= 1e-12,
          "homogeneity " + fmt("%.2e", worst_h) + ", shift " + fmt("%.2e", worst_s) + " over 20 cases"};
}

// ---------------------------------------------------------------------------
// 4. Definition-level oracle: Gaussian filters from the formula, explicit
// inverse DFT impulse responses, O(N^2) circular convolutions.

std::vector<std::vector<Cplx>> naive_filters(std::size_t n, double q, double n0, double fmax,
                                             std::vector<double>& lambdas) {
  lambdas.clear();
  for (int j = 0;; ++j) {
    const double l = n0 * std::pow(2.0, j / q);
    if (l > fmax * (1.0 + 1e-12)) break;
    lambdas.push_back(l);
  }
  const double r = std::pow(2.0, 1.0 / q);
  const double sigma = (r - 1.0) / (r + 1.0) / std::sqrt(std::log(2.0));
  std::vector<std::vector<double>> hat;
  for (double l : lambdas) {
    std::vector<double> h(n, 0.0);
    for (std::size_t k = 1; k <= n / 2; ++k) {
      const double z = static_cast<double>(k) / l - 1.0;
      h[k] = std::sqrt(2.0) * std::exp(-z * z / (2.0 * sigma * sigma));
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
  std::vector<std::vector<Cplx>> out;
  for (const auto& h : hat) {
    std::vector<Cplx> psi(n);
    for (std::size_t t = 0; t < n; ++t) {
      Cplx acc(0.0, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
        acc += norm * h[k] * Cplx(std::cos(ang), std::sin(ang));
      }
      psi[t] = acc / static_cast<double>(n);
    }
    out.push_back(psi);
  }
  return out;
}

std::vector<double> naive_envelope(const std::vector<double>& x, const std::vector<Cplx>& psi) {
  const std::size_t n = x.size();
  std::vector<double> env(n);
  for (std::size_t t = 0; t < n; ++t) {
    Cplx acc(0.0, 0.0);
    for (std::size_t s = 0; s < n; ++s) acc += x[s] * psi[(t + n - s) % n];
    env[t] = std::abs(acc);
  }
  return env;
}

double naive_mean(const std::vector<double>& v) {
  double a = 0.0;
  for (double x : v) a += x;
  return a / static_cast<double>(v.size());
}

std::vector<double> naive_descriptor(const std::vector<double>& x, const DescriptorConfig& cfg) {
  const std::size_t n = x.size();
  const double fmax = cfg.max_frequency > 0.0 ? cfg.max_frequency : static_cast<double>(n / 2);
  std::vector<double> l1;
  std::vector<double> l2;
  const auto b1 = naive_filters(n, cfg.q1, cfg.min_frequency, fmax, l1);
  const auto b2 = naive_filters(n, cfg.q2, cfg.min_frequency, fmax, l2);
  std::vector<std::vector<double>> scal;
  std::vector<double> out;
  for (const auto& psi : b1) {
    scal.push_back(naive_envelope(x, psi));
    out.push_back(naive_mean(scal.back()));
  }
  for (std::size_t a = 0; a < b1.size(); ++a) {
    for (std::size_t b = 0; b < b2.size(); ++b) {
      if (l2[b] < l1[a] * (1.0 - 1e-9)) out.push_back(naive_mean(naive_envelope(scal[a], b2[b])));
    }
  }
  if (!cfg.include_freq_scattering) return out;
  const std::size_t k = b1.size();
  const double sigma = (1.0 / 3.0) / std::sqrt(std::log(2.0));
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t s = 0; s < cfg.alpha; ++s) {
      const double centre = static_cast<double>(k) / std::pow(2.0, static_cast<double>(s) + 2.0);
      std::vector<double> h(k, 0.0);
      for (std::size_t f = 1; 2 * f <= k; ++f) {
        const double z = static_cast<double>(f) / centre - 1.0;
        h[f] = std::sqrt(2.0) * std::exp(-z * z / (2.0 * sigma * sigma));
      }
      if (k % 2 == 0) h[k / 2] /= std::sqrt(2.0);
      std::vector<Cplx> ker(k);
      for (std::size_t m = 0; m < k; ++m) {
        Cplx acc(0.0, 0.0);
        for (std::size_t f = 0; f < k; ++f) {
          const double ang = 2.0 * std::numbers::pi * static_cast<double>(f * m) / static_cast<double>(k);
          acc += h[f] * Cplx(std::cos(ang), std::sin(ang));
        }
        ker[m] = acc / static_cast<double>(k);
      }
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        Cplx z(0.0, 0.0);
        for (std::size_t m = 0; m < k; ++m) z += ker[(b + k - m) % k] * scal[m][t];
        acc += std::abs(z);
      }
      out.push_back(acc / static_cast<double>(n));
    }
  }
  return out;
}

Outcome small_instance_oracle() {
  // A dyadic two-band bank (lambda 8 and 16) and a Q=2 bank carrying one
  // log-frequency scale, both on N = 64.
  DescriptorConfig dyadic;
  dyadic.signal_length = 64;
  dyadic.q1 = 1.0;
  dyadic.q2 = 1.0;
  dyadic.min_frequency = 8.0;
  dyadic.max_frequency = 16.0;
  dyadic.include_freq_scattering = false;
  DescriptorConfig freq;
  freq.signal_length = 64;
  freq.q1 = 2.0;
  freq.q2 = 1.0;
  freq.alpha = 1;
  double worst = 0.0;
  const std::size_t bands = ScatteringModel(dyadic).first_bank().size();
  for (const auto& cfg : {dyadic, freq}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto x = white_noise(64, 40 + seed);
      const ScatteringModel model(cfg);
      const auto fast = model.describe(x).values;
      const auto slow = naive_descriptor(x, cfg);
      if (fast.size() != slow.size()) return {false, "descriptor sizes differ"};
      worst = std::max(worst, rel_gap(fast, slow));
    }
  }
  return {worst <= 1e-10 && bands == 2,
          "max relative deviation " + fmt("%.2e", worst) + " (dyadic bank with " + std::to_string(bands) +
              " bands, plus Q=2 with frequency scattering)"};
}

// ---------------------------------------------------------------------------
// 5. Jacobian

std::vector<double> smooth_point(std::size_t n, std::uint64_t seed) {
  const auto w = white_noise(n, seed);
  const Fft fft(n);
  auto s = fft.forward_real(w);
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(std::min(k, n - k)) / static_cast<double>(n);
    s[k] *= 1.0 / (1.0 + 16.0 * f * f);
  }
  fft.inverse(s);
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = s[t].real();
  return x;
}

Outcome jacobian_correctness() {
  const std::size_t n = 512;
  DescriptorConfig cfg;
  cfg.signal_length = n;
  const ScatteringModel model(cfg);
  double worst_adj = 0.0;
  double worst_fd = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = smooth_point(n, seed);
    const auto fp = forward_pass(model, x);
    auto v = white_noise(n, 50 + seed);
    const double vn = std::sqrt(dot(v, v));
    for (auto& e : v) e /= vn;
    const auto w = white_noise(model.size(), 80 + seed);
    const auto jv = jvp(fp, v);
    const double lhs = dot(jv, w);
    const double rhs = dot(v, vjp(fp, w));
    worst_adj = std::max(worst_adj, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));

    const double h = 1e-5 * std::sqrt(dot(x, x));
    auto xp = x;
    auto xm = x;
    for (std::size_t t = 0; t < n; ++t) {
      xp[t] += h * v[t];
      xm[t] -= h * v[t];
    }
    const auto sp = model.describe(xp).values;
    const auto sm = model.describe(xm).values;
    std::vector<double> fd(sp.size());
    for (std::size_t i = 0; i < fd.size(); ++i) fd[i] = (sp[i] - sm[i]) / (2.0 * h);
    worst_fd = std::max(worst_fd, rel_gap(fd, jv));
  }
  return {worst_adj <= 1e-10 && worst_fd <= 1e-4,
          "adjoint " + fmt("%.2e", worst_adj) + ", finite differences " + fmt("%.2e", worst_fd) + " over 10 points"};
}

// ---------------------------------------------------------------------------
// 6. Order-2 triangularity

Outcome triangularity() {
  const std::size_t n = 1 << 14;
  DescriptorConfig cfg;
  cfg.signal_length = n;
  const ScatteringModel model(cfg);
  const auto mean = [](const IndexedValues& v) {
    return std::accumulate(v.values.begin(), v.values.end(), 0.0) / static_cast<double>(v.values.size());
  };
  double worst = 0.0;
  double worst_above = 0.0;
  for (int i = 0; i < 5; ++i) {
    const auto scal = scalogram(generate_texture(static_cast<TextureKind>(i), n, 60 + i), model.first_bank());
    const double kept = mean(scatter_order2(scal, model.second_bank()));
    const double dropped = mean(scatter_order2_excluded(scal, model.second_bank()));
    const double above = mean(detail::scatter_second_layer(scal, model.second_bank(), BankId::Primary,
                                                           [](double l1, double l2) { return l2 > l1 * (1.0 + 1e-9); }));
    worst = std::max(worst, dropped / kept);
    worst_above = std::max(worst_above, above / kept);
  }
  return {worst <= 0.05, "max excluded/retained mean ratio " + fmt("%.4f", worst) + " over 5 textures, " +
                             fmt("%.4f", worst_above) + " counting only lambda2 > lambda1"};
}

// ---------------------------------------------------------------------------
// 7. LMA convergence anchor

std::size_t first_below(const std::vector<double>& history, double level) {
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i] <= level) return i;
  }
  return SIZE_MAX;
}

std::string iterations(std::size_t k) { return k == SIZE_MAX ? "never" : std::to_string(k); }

Outcome lma_anchor() {
  const std::size_t n = 1 << 14;
  DescriptorConfig cfg;
  cfg.signal_length = n;
  cfg.q1 = 4.0;
  cfg.q2 = 1.0;
  const ScatteringModel model(cfg);
  const auto target = model.describe(generate_texture(TextureKind::AmNoise, n, 7));

  SynthesisConfig lma;
  lma.rng_seed = 11;
  lma.max_iterations = 100;
  lma.target_relative_error = 1e-4;
  const auto a = synthesize(model, target, n, lma);
  const auto lma2 = first_below(a.state.error_history, 1e-2);
  const auto lma4 = first_below(a.state.error_history, 1e-4);

  SynthesisConfig gd = lma;
  gd.optimizer = Optimizer::GradientDescent;
  gd.target_relative_error = 1e-2;
  const auto g = synthesize(model, target, n, gd);
  const auto gd2 = first_below(g.state.error_history, 1e-2);

  const bool ok = lma2 <= 50 && lma4 <= 100 && gd2 > lma2;
  return {ok, "LMA reaches 1e-2 at iteration " + iterations(lma2) + ", 1e-4 at " + iterations(lma4) +
                  "; GD reaches 1e-2 at " + iterations(gd2) + " (cap 100, final " +
                  fmt("%.3e", g.state.error_history.back()) + ")"};
}

// ---------------------------------------------------------------------------
// 8 and 9 drive the command-line tool.

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quote(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_after(const std::string& text, const std::string& key) {
  const auto at = text.find(key);
  return at == std::string::npos ? SIZE_MAX : std::stoul(text.substr(at + key.size()));
}

Outcome coefficient_budget(const fs::path& work, double& seconds) {
  const fs::path config = fs::path(SCATSYNTH_CONFIG_DIR) / "nominal.json";
  const fs::path log = work / "validate.txt";
  const auto t0 = Clock::now();
  const int code = shell(quote(SCATSYNTH_CLI) + " validate --config " + quote(config) + " > " + quote(log) + " 2>&1");
  seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  const auto text = slurp(log);

  const auto cfg = config_from_json(load_json_file(config.string(), "config"));
  const ScatteringModel model(cfg);
  std::size_t k2 = 0;
  for (double l1 : model.first_bank().lambda_grid()) {
    for (double l2 : model.second_bank().lambda_grid()) k2 += l2 < l1 ? 1 : 0;
  }
  const std::size_t k1 = model.first_bank().size();
  const std::size_t kf = cfg.alpha * k1;
  const bool printed = count_after(text, "order1 ") == k1 && count_after(text, "order2 ") == k2 &&
                       count_after(text, "freq ") == kf && count_after(text, "total ") == k1 + k2 + kf;
  const bool flagged = text.find("published budget of 46 / 266 / 92 (402 total)") != std::string::npos;
  const bool emitted = text.find("ok    counting formulas") != std::string::npos;
  return {code == 0 && printed && flagged && emitted,
          "N " + std::to_string(cfg.signal_length) + ": K1 " + std::to_string(k1) + ", K2 " + std::to_string(k2) +
              ", Kf " + std::to_string(kf) + ", exit " + std::to_string(code) +
              (flagged ? ", deviation flagged" : ", deviation NOT flagged") +
              (emitted ? ", emitted descriptor agrees" : ", emitted descriptor disagrees")};
}

Outcome end_to_end(const fs::path& work) {
  const std::string cli = quote(SCATSYNTH_CLI);
  const double tol = 1e-2;
  std::string detail;
  bool ok = true;
  const std::vector<std::pair<std::string, int>> textures = {{"am-noise", 21}, {"filtered-noise", 22}};
  for (const auto& [kind, seed] : textures) {
    const fs::path dir = work / kind;
    fs::create_directories(dir);
    const auto log = quote(dir / "log.txt");
    const auto src = dir / "source.wav";
    const auto target = dir / "target.json";
    const auto synth = dir / "synth.wav";
    const auto again = dir / "synth.json";
    int code = shell(cli + " generate " + kind + " -o " + quote(src) + " -n 16384 --seed " +
                     std::to_string(seed) + " >> " + log + " 2>&1");
    code = code ? code : shell(cli + " analyze " + quote(src) + " -o " + quote(target) + " >> " + log + " 2>&1");
    code = code ? code
                : shell(cli + " synthesize " + quote(target) + " -o " + quote(synth) + " --seed " +
                        std::to_string(seed + 100) + " --optimizer lma --max-iter 100 --tol " + fmt("%g", tol) +
                        " -q >> " + log + " 2>&1");
    code = code ? code : shell(cli + " analyze " + quote(synth) + " -o " + quote(again) + " >> " + log + " 2>&1");
    const auto cmp = dir / "compare.txt";
    code = code ? code : shell(cli + " compare " + quote(again) + " " + quote(target) + " > " + quote(cmp) + " 2>&1");
    const auto text = slurp(cmp);
    const auto at = text.find("distance ");
    const double d = at == std::string::npos ? 1e300 : std::stod(text.substr(at + 9));

    bool same = true;
    for (const auto& m : {src, target, synth, again}) {
      const fs::path manifest = m.string() + ".manifest.json";
      same = same && shell(cli + " reproduce " + quote(manifest) + " --out-dir " + quote(dir / "redo") + " >> " +
                           log + " 2>&1") == 0;
    }
    const bool pass = code == 0 && d <= tol * 1.1 && same;
    ok = ok && pass;
    detail += kind + " distance " + fmt("%.3e", d) + (same ? " reproducible" : " NOT reproducible") + "; ";
  }
  return {ok, detail + "bound " + fmt("%.3g", tol * 1.1)};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "scatsynth_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome(double&)> run;
  };
  auto timed = [](std::function<Outcome()> f) {
    return [f](double& seconds) {
      const auto t0 = Clock::now();
      auto o = f();
      seconds = std::chrono::duration<double>(Clock::now() - t0).count();
      return o;
    };
  };
  const std::vector<Criterion> criteria = {
      {1, "frame condition", 1.0, timed(frame_condition)},
      {2, "energy inequality", 30.0, timed(energy_inequality)},
      {3, "homogeneity and shift invariance", 10.0, timed(homogeneity_and_shift)},
      {4, "small-instance oracle", 5.0, timed(small_instance_oracle)},
      {5, "Jacobian correctness", 60.0, timed(jacobian_correctness)},
      {6, "order-2 triangularity", 30.0, timed(triangularity)},
      {7, "LMA convergence anchor", 600.0, timed(lma_anchor)},
      {8, "coefficient budget", 5.0, [&](double& s) { return coefficient_budget(work, s); }},
      {9, "end-to-end pipeline", 900.0, timed([&] { return end_to_end(work); })},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    double seconds = 0.0;
    Outcome o;
    try {
      o = c.run(seconds);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool in_time = seconds < c.budget_s;
    const bool pass = o.passed && in_time;
    failures += pass ? 0 : 1;
    std::printf("criterion %d %s: %s (%s; %.2f s of %.0f s budget%s)\n", c.id, c.name, pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds, c.budget_s, in_time ? "" : ", OVER BUDGET");
    std::fflush(stdout);
  }
  fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
