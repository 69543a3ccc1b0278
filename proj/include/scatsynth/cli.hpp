#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "scatsynth/audio_io.hpp"
#include "scatsynth/error.hpp"
#include "scatsynth/jacobian.hpp"
#include "scatsynth/render.hpp"
#include "scatsynth/scattering.hpp"
#include "scatsynth/serialization.hpp"
#include "scatsynth/synthesis.hpp"
#include "scatsynth/textures.hpp"
#include "scatsynth/version.hpp"

namespace scatsynth::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitNumerical = 4;

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::GridTooSmall:
      return kExitUsage;
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::IoError:
    case ErrorCode::DigestMismatch:
    case ErrorCode::LengthMismatch:
    case ErrorCode::GridMismatch:
      return kExitFormat;
    default:
      return kExitNumerical;
  }
}

inline std::string num(double v, const char* fmt = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string absolute_path(const std::string& p) {
  return fs::absolute(fs::path(p)).lexically_normal().string();
}

/// Path next to `output` sharing its stem, e.g. out.wav -> out.history.csv.
inline std::string sibling(const std::string& output, const std::string& suffix) {
  fs::path p(output);
  p.replace_extension("");
  return p.string() + suffix;
}

/// Every command writes its manifest next to its primary output: out.wav -> out.wav.manifest.json.
inline std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

inline OutputRecord output_record(const std::string& role, const std::string& path, bool digested = true) {
  return {role, absolute_path(path), digested ? file_digest(path) : std::string()};
}

inline InputRecord input_record(const std::string& path) {
  return {absolute_path(path), file_digest(path)};
}

inline std::string to_string(LengthPolicy p) { return p == LengthPolicy::ZeroPad ? "zero-pad" : "truncate"; }

inline LengthPolicy length_policy_from_string(const std::string& s) {
  if (s == "zero-pad") return LengthPolicy::ZeroPad;
  if (s == "truncate") return LengthPolicy::Truncate;
  throw Error(ErrorCode::UnsupportedFormat, "unknown length policy '" + s + "'");
}

inline DescriptorConfig load_config(const std::string& path) {
  return config_from_json(load_json_file(path, "config"));
}

// ---------------------------------------------------------------------------
// Commands. Each writes its artifacts plus a manifest and returns the manifest.

struct AnalyzeRequest {
  std::string input;
  std::string output;
  std::optional<DescriptorConfig> config;  // empty: length taken from the recording
  LengthPolicy policy = LengthPolicy::Truncate;
};

inline RunManifest run_analyze(const AnalyzeRequest& req) {
  const auto audio = load_wav(req.input);
  DescriptorConfig cfg = req.config.value_or(DescriptorConfig{});
  if (!req.config) cfg.signal_length = coerced_length(audio.samples.size(), req.policy);
  const auto samples = conform_length(audio.samples, cfg.signal_length, req.policy);
  const ScatteringModel model(cfg);
  const auto v = model.describe(samples);

  RunManifest m;
  m.command = "analyze";
  m.inputs.push_back(input_record(req.input));
  m.config = cfg;
  const Json metadata{{"source", m.inputs.front().path},
                      {"source_digest", m.inputs.front().digest},
                      {"sample_rate", audio.sample_rate},
                      {"source_format", to_string(audio.source_format)},
                      {"source_channels", audio.source_channels},
                      {"source_length", audio.samples.size()},
                      {"length_policy", to_string(req.policy)}};
  save_descriptor(req.output, v, metadata);
  m.options = {{"length_policy", to_string(req.policy)}};
  m.outputs.push_back(output_record("descriptor", req.output));
  m.results = {{"counts", counts_to_json(v.counts)}, {"energy", descriptor_energy(v)}};
  save_manifest(manifest_path(req.output), m);
  return m;
}

struct SynthesizeRequest {
  std::string descriptor;
  std::string output;
  SynthesisConfig synthesis;
  std::optional<double> sample_rate;  // empty: taken from the descriptor metadata
  SampleFormat format = SampleFormat::Float32;
};

inline RunManifest run_synthesize(const SynthesizeRequest& req, std::ostream* progress) {
  const Json doc = load_json_file(req.descriptor, "descriptor");
  const auto target = descriptor_from_json(doc);
  double rate = 20000.0;
  if (req.sample_rate) {
    rate = *req.sample_rate;
  } else if (doc.contains("metadata") && doc["metadata"].contains("sample_rate")) {
    rate = doc["metadata"]["sample_rate"].get<double>();
  }
  const ScatteringModel model(target.config);
  const std::size_t n = model.signal_length();

  const std::string log_path = sibling(req.output, ".log.jsonl");
  const std::string history_path = sibling(req.output, ".history.csv");
  const std::string before_path = sibling(req.output, ".before.png");
  const std::string after_path = sibling(req.output, ".after.png");

  const auto start = initial_state(model, target, req.synthesis);
  render_scalogram(scalogram(start.iterate, model.first_bank()), before_path);

  std::ofstream log(log_path);
  require(static_cast<bool>(log), ErrorCode::IoError, "cannot create " + log_path);
  std::vector<IterationRecord> records;
  const auto result = synthesize(model, target, n, req.synthesis, [&](const IterationRecord& rec) {
    records.push_back(rec);
    log << Json{{"iteration", rec.iteration},
                {"relative_error", rec.relative_error},
                {"damping", rec.damping},
                {"wall_ms", rec.wall_ms}}
               .dump()
        << '\n'
        << std::flush;
    if (progress) {
      *progress << "iteration " << rec.iteration << "  relative error " << num(rec.relative_error, "%.4e")
                << '\n'
                << std::flush;
    }
  });
  log.close();

  save_wav(req.output, result.signal, rate, req.format);
  std::string csv = "iteration,relative_error,damping\n";
  for (const auto& rec : records) {
    csv += std::to_string(rec.iteration) + "," + num(rec.relative_error, "%.17g") + "," +
           num(rec.damping, "%.17g") + "\n";
  }
  write_file_bytes(history_path, std::span(reinterpret_cast<const unsigned char*>(csv.data()), csv.size()));
  render_scalogram(scalogram(result.signal, model.first_bank()), after_path);

  const auto& sc = req.synthesis;
  RunManifest m;
  m.command = "synthesize";
  m.inputs.push_back(input_record(req.descriptor));
  m.config = target.config;
  m.options = {{"seed", sc.rng_seed},
               {"optimizer", sc.optimizer == Optimizer::LevenbergMarquardt ? "lma" : "gd"},
               {"max_iterations", sc.max_iterations},
               {"target_relative_error", sc.target_relative_error},
               {"step_gamma", sc.step_gamma ? Json(*sc.step_gamma) : Json()},
               {"damping_mu", sc.damping_mu ? Json(*sc.damping_mu) : Json()},
               {"sample_rate", rate},
               {"format", to_string(req.format)}};
  m.outputs = {output_record("audio", req.output), output_record("history", history_path),
               output_record("scalogram-before", before_path), output_record("scalogram-after", after_path),
               output_record("log", log_path, false)};
  m.achieved_error = result.state.error_history.back();
  m.results = {{"stop_reason", to_string(result.reason)},
               {"iterations", result.state.iteration},
               {"initial_error", result.state.error_history.front()},
               {"achieved_error", m.achieved_error}};
  save_manifest(manifest_path(req.output), m);
  return m;
}

struct RenderRequest {
  std::string input;
  std::string output;
  std::optional<DescriptorConfig> config;
  LengthPolicy policy = LengthPolicy::Truncate;
  RenderOptions options;
};

inline RunManifest run_render(const RenderRequest& req) {
  const auto audio = load_wav(req.input);
  DescriptorConfig cfg = req.config.value_or(DescriptorConfig{});
  if (!req.config) cfg.signal_length = coerced_length(audio.samples.size(), req.policy);
  const auto samples = conform_length(audio.samples, cfg.signal_length, req.policy);
  const auto bank = build_filter_bank(cfg.signal_length, cfg.q1, cfg.min_frequency, cfg.bank_options());
  render_scalogram(scalogram(samples, bank), req.output, req.options);

  RunManifest m;
  m.command = "render";
  m.inputs.push_back(input_record(req.input));
  m.config = cfg;
  m.options = {{"length_policy", to_string(req.policy)},
               {"max_width", req.options.max_width},
               {"dynamic_range_db", req.options.dynamic_range_db}};
  m.outputs.push_back(output_record("image", req.output));
  save_manifest(manifest_path(req.output), m);
  return m;
}

struct GenerateRequest {
  TextureKind kind = TextureKind::AmNoise;
  std::size_t length = 16384;
  std::uint64_t seed = 1;
  double sample_rate = 20000.0;
  SampleFormat format = SampleFormat::Float32;
  std::string output;
};

inline RunManifest run_generate(const GenerateRequest& req) {
  require(is_power_of_two(req.length) && req.length >= 16, ErrorCode::InvalidArgument,
          "texture length must be a power of two >= 16");
  save_wav(req.output, generate_texture(req.kind, req.length, req.seed), req.sample_rate, req.format);
  RunManifest m;
  m.command = "generate";
  m.config.signal_length = req.length;
  m.options = {{"kind", to_string(req.kind)},
               {"length", req.length},
               {"seed", req.seed},
               {"sample_rate", req.sample_rate},
               {"format", to_string(req.format)}};
  m.outputs.push_back(output_record("audio", req.output));
  save_manifest(manifest_path(req.output), m);
  return m;
}

// ---------------------------------------------------------------------------
// compare

inline std::string block_name(const ScatteringIndex& idx) {
  const std::string kind = to_string(idx.kind);
  return idx.bank == BankId::Dyadic ? "dyadic-" + kind : kind;
}

struct BlockDistance {
  std::string name;
  std::size_t size = 0;
  double distance = 0.0;
};

/// Relative distance ||a - b|| / ||b|| restricted to each block, in layout order.
inline std::vector<BlockDistance> block_distances(const ScatteringVector& a, const ScatteringVector& b) {
  relative_distance(a, b);  // digest and length checks
  std::vector<BlockDistance> out;
  std::vector<double> num2;
  std::vector<double> den2;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto name = block_name(b.indices[i]);
    if (out.empty() || out.back().name != name) {
      out.push_back({name, 0, 0.0});
      num2.push_back(0.0);
      den2.push_back(0.0);
    }
    ++out.back().size;
    num2.back() += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    den2.back() += b.values[i] * b.values[i];
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].distance = den2[k] > 0.0 ? std::sqrt(num2[k] / den2[k]) : std::sqrt(num2[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// validate

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::size_t count_pairs(const FilterBank& first, const FilterBank& second) {
  std::size_t k = 0;
  for (double l1 : first.lambda_grid()) {
    for (double l2 : second.lambda_grid()) k += order2_pair_kept(l1, l2) ? 1 : 0;
  }
  return k;
}

inline double relative_gap(std::span<const double> a, std::span<const double> b) {
  double num2 = 0.0;
  double den2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num2 += (a[i] - b[i]) * (a[i] - b[i]);
    den2 += b[i] * b[i];
  }
  return den2 > 0.0 ? std::sqrt(num2 / den2) : std::sqrt(num2);
}

inline CheckResult check_frame(const std::string& label, const FilterBank& bank) {
  const auto fb = bank.compute_bounds();
  return {"frame " + label,
          fb.epsilon < 1.0 && fb.max_coverage <= 1.0 + 1e-12,
          "epsilon " + num(fb.epsilon) + ", max half-sum " + num(fb.max_coverage, "%.15g")};
}

/// Counting formulas K1 = |grid|, K2 = |{lambda2 < lambda1}|, Kf = alpha K1
/// (and the dyadic analogues) checked against the blocks of an emitted descriptor.
inline CheckResult check_counts(const ScatteringModel& model, const ScatteringVector& emitted) {
  const auto& cfg = model.config();
  BlockCounts formula;
  formula.order1 = model.first_bank().size();
  formula.order2 = count_pairs(model.first_bank(), model.second_bank());
  formula.freq = cfg.include_freq_scattering ? cfg.alpha * formula.order1 : 0;
  if (const FilterBank* d = model.dyadic_bank()) {
    formula.dyadic_order1 = d->size();
    formula.dyadic_order2 = cfg.dyadic_order2 ? count_pairs(*d, model.second_bank()) : 0;
  }
  BlockCounts seen;
  for (const auto& idx : emitted.indices) {
    const bool dyadic = idx.bank == BankId::Dyadic;
    switch (idx.kind) {
      case CoefficientKind::Order1: ++(dyadic ? seen.dyadic_order1 : seen.order1); break;
      case CoefficientKind::Order2: ++(dyadic ? seen.dyadic_order2 : seen.order2); break;
      case CoefficientKind::FreqOrder2: ++seen.freq; break;
    }
  }
  const bool ok = formula == seen && seen == emitted.counts && emitted.values.size() == formula.total();
  return {"counting formulas", ok,
          "K1 " + std::to_string(formula.order1) + ", K2 " + std::to_string(formula.order2) + ", Kf " +
              std::to_string(formula.freq) + ", dyadic " + std::to_string(formula.dyadic_order1) + " + " +
              std::to_string(formula.dyadic_order2) + "; emitted " + std::to_string(emitted.values.size())};
}

/// Invariant battery on a small instance of the configuration.
inline std::vector<CheckResult> self_test_battery(const DescriptorConfig& cfg) {
  std::vector<CheckResult> out;
  const ScatteringModel model(cfg);
  const std::size_t n = model.signal_length();

  double worst_energy = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto kind = static_cast<TextureKind>(seed % 5);
    const auto x = generate_texture(kind, n, 100 + seed);
    const auto v = model.describe(x);
    worst_energy = std::max(worst_energy, descriptor_energy(v) / v.stats.variance);
  }
  out.push_back({"energy bound", worst_energy <= 1.0 + 1e-8,
                 "max energy / variance " + num(worst_energy, "%.9f")});

  double worst_hom = 0.0;
  double worst_shift = 0.0;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const auto x = white_noise(n, 200 + seed);
    const auto base = model.describe(x);
    auto scaled = x;
    for (auto& v : scaled) v *= -2.5;
    auto expect = base.values;
    for (auto& v : expect) v *= 2.5;
    worst_hom = std::max(worst_hom, relative_gap(model.describe(scaled).values, expect));
    auto shifted = x;
    std::rotate(shifted.begin(), shifted.begin() + static_cast<long>(n / 3 + seed), shifted.end());
    worst_shift = std::max(worst_shift, relative_gap(model.describe(shifted).values, base.values));
  }
  out.push_back({"homogeneity", worst_hom <= 1e-12, "relative gap " + num(worst_hom, "%.3e")});
  out.push_back({"shift invariance", worst_shift <= 1e-12, "relative gap " + num(worst_shift, "%.3e")});

  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& e : v) e = g(rng);
  std::vector<double> w(model.size());
  for (auto& e : w) e = g(rng);
  const auto fp = forward_pass(model, generate_texture(TextureKind::FilteredNoise, n, 3));
  const auto jv = jvp(fp, v);
  const auto jw = vjp(fp, w);
  double lhs = 0.0;
  double rhs = 0.0;
  for (std::size_t i = 0; i < jv.size(); ++i) lhs += jv[i] * w[i];
  for (std::size_t i = 0; i < n; ++i) rhs += v[i] * jw[i];
  const double adj = std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs));
  out.push_back({"adjoint identity", adj <= 1e-10, "relative gap " + num(adj, "%.3e")});
  return out;
}

inline int run_validate(const DescriptorConfig& cfg, std::ostream& out) {
  const ScatteringModel model(cfg);
  const auto& c = model.counts();
  out << "configuration " << model.digest() << "\n";
  out << "  N " << cfg.signal_length << ", Q1 " << num(cfg.q1) << ", Q2 " << num(cfg.q2) << ", N0 "
      << num(cfg.min_frequency) << ", max frequency " << num(model.first_bank().max_frequency())
      << ", alpha " << cfg.alpha << "\n";

  std::vector<CheckResult> checks;
  auto report_bank = [&](const std::string& label, const FilterBank& bank) {
    out << label << ": " << bank.size() << " bands, lambda " << num(bank.lambda_grid().front()) << " .. "
        << num(bank.lambda_grid().back()) << ", frame epsilon " << num(bank.frame_epsilon()) << "\n";
    checks.push_back(check_frame(label, bank));
  };
  report_bank("first-layer bank", model.first_bank());
  report_bank("second-layer bank", model.second_bank());
  if (const FilterBank* d = model.dyadic_bank()) report_bank("dyadic bank", *d);

  out << "coefficients: order1 " << c.order1 << ", order2 " << c.order2 << ", freq " << c.freq;
  if (model.dyadic_bank()) out << ", dyadic order1 " << c.dyadic_order1 << ", dyadic order2 " << c.dyadic_order2;
  out << ", total " << c.total() << "\n";
  out << "note: the published budget of 46 / 266 / 92 (402 total) for N ~ 1e5 rests on a grid-endpoint\n"
         "      convention that cannot be recovered; these counts follow K1 = |grid|,\n"
         "      K2 = |{lambda2 < lambda1}|, Kf = alpha * K1 on the configured grid\n";

  const auto emitted = model.describe(generate_texture(TextureKind::AmNoise, cfg.signal_length, 1));
  checks.push_back(check_counts(model, emitted));

  DescriptorConfig small = cfg;
  small.signal_length = std::min<std::size_t>(cfg.signal_length, 4096);
  std::vector<CheckResult> battery;
  try {
    battery = self_test_battery(small);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::GridTooSmall || small.signal_length == cfg.signal_length) throw;
    small.signal_length = cfg.signal_length;
    battery = self_test_battery(small);
  }
  for (auto& b : battery) b.name += " (N " + std::to_string(small.signal_length) + ")";
  checks.insert(checks.end(), battery.begin(), battery.end());

  bool all = true;
  for (const auto& ch : checks) {
    out << (ch.passed ? "  ok    " : "  FAIL  ") << ch.name << ": " << ch.detail << "\n";
    all = all && ch.passed;
  }
  out << (all ? "validate: all checks passed\n" : "validate: FAILED\n");
  return all ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// reproduce

inline std::string redirect(const std::string& path, const fs::path& dir) {
  return (dir / fs::path(path).filename()).string();
}

inline const OutputRecord& output_with_role(const RunManifest& m, const std::string& role) {
  for (const auto& o : m.outputs) {
    if (o.role == role) return o;
  }
  throw Error(ErrorCode::UnsupportedFormat, "manifest has no '" + role + "' output");
}

/// Reruns a manifest into `dir` and compares every digested output.
inline int run_reproduce(const std::string& path, const std::string& dir, std::ostream& out) {
  const auto m = load_manifest(path);
  for (const auto& in : m.inputs) {
    require(file_digest(in.path) == in.digest, ErrorCode::DigestMismatch,
            "input " + in.path + " changed since the run (digest " + in.digest + ")");
  }
  const fs::path outdir(dir);
  fs::create_directories(outdir);
  const Json& o = m.options;
  RunManifest redo;
  detail::guarded("manifest options", [&] {
    if (m.command == "analyze") {
      redo = run_analyze({m.inputs.at(0).path, redirect(output_with_role(m, "descriptor").path, outdir),
                          m.config, length_policy_from_string(o.at("length_policy"))});
    } else if (m.command == "synthesize") {
      SynthesizeRequest req;
      req.descriptor = m.inputs.at(0).path;
      req.output = redirect(output_with_role(m, "audio").path, outdir);
      req.synthesis.rng_seed = o.at("seed").get<std::uint64_t>();
      req.synthesis.optimizer = optimizer_from_string(o.at("optimizer"));
      req.synthesis.max_iterations = o.at("max_iterations").get<std::size_t>();
      req.synthesis.target_relative_error = o.at("target_relative_error").get<double>();
      if (!o.at("step_gamma").is_null()) req.synthesis.step_gamma = o.at("step_gamma").get<double>();
      if (!o.at("damping_mu").is_null()) req.synthesis.damping_mu = o.at("damping_mu").get<double>();
      req.sample_rate = o.at("sample_rate").get<double>();
      req.format = sample_format_from_string(o.at("format"));
      redo = run_synthesize(req, nullptr);
    } else if (m.command == "render") {
      RenderRequest req{m.inputs.at(0).path, redirect(output_with_role(m, "image").path, outdir), m.config,
                        length_policy_from_string(o.at("length_policy")), {}};
      req.options.max_width = o.at("max_width").get<std::size_t>();
      req.options.dynamic_range_db = o.at("dynamic_range_db").get<double>();
      redo = run_render(req);
    } else if (m.command == "generate") {
      GenerateRequest req;
      req.kind = texture_kind_from_string(o.at("kind"));
      req.length = o.at("length").get<std::size_t>();
      req.seed = o.at("seed").get<std::uint64_t>();
      req.sample_rate = o.at("sample_rate").get<double>();
      req.format = sample_format_from_string(o.at("format"));
      req.output = redirect(output_with_role(m, "audio").path, outdir);
      redo = run_generate(req);
    } else {
      throw Error(ErrorCode::UnsupportedFormat, "unknown manifest command '" + m.command + "'");
    }
    return 0;
  });

  bool all = true;
  for (const auto& rec : m.outputs) {
    if (rec.digest.empty()) {
      out << "  skip   " << rec.role << " (not digested)\n";
      continue;
    }
    const auto& now = output_with_role(redo, rec.role);
    const bool same = now.digest == rec.digest;
    all = all && same;
    out << (same ? "  match  " : "  DIFFER ") << rec.role << " " << now.path << " " << now.digest << "\n";
  }
  out << (all ? "reproduce: all outputs identical\n" : "reproduce: outputs differ\n");
  return all ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// Command line.

template <class F>
int guarded_run(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const Json::exception& e) {
    err << "error: unsupported-format: " << e.what() << "\n";
    return kExitFormat;
  } catch (const fs::filesystem_error& e) {
    err << "error: io-error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scattering-moment analysis and texture synthesis", "scatsynth"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::vector<std::string> inputs;
  std::string output;
  std::string out_dir;
  std::string config_path;
  bool pad = false;

  auto* analyze = app.add_subcommand("analyze", "Compute scattering descriptors of WAV files");
  analyze->add_option("inputs", inputs, "Input WAV files")->required();
  analyze->add_option("-o,--output", output, "Descriptor JSON (single input)");
  analyze->add_option("--out-dir", out_dir, "Directory for one descriptor per input");
  analyze->add_option("--config", config_path, "Descriptor configuration JSON");
  analyze->add_flag("--pad", pad, "Zero-pad short recordings instead of truncating");

  std::string descriptor;
  std::uint64_t seed = 0;
  std::string optimizer = "lma";
  std::size_t max_iter = 100;
  double tol = 1e-2;
  std::optional<double> step;
  std::optional<double> damping;
  std::optional<double> sample_rate;
  std::string format = "float32";
  bool quiet = false;
  auto* synth = app.add_subcommand("synthesize", "Synthesize a signal matching a descriptor");
  synth->add_option("descriptor", descriptor, "Target descriptor JSON")->required();
  synth->add_option("-o,--output", output, "Output WAV")->required();
  synth->add_option("--seed", seed, "Seed of the initial white noise");
  synth->add_option("--optimizer", optimizer, "lma or gd")->check(CLI::IsMember({"lma", "gd"}));
  synth->add_option("--max-iter", max_iter, "Iteration cap");
  synth->add_option("--tol", tol, "Target relative descriptor error");
  synth->add_option("--step", step, "Gradient-descent step (default: scale-free automatic)");
  synth->add_option("--damping", damping, "Initial LMA damping (default: 1e-3 trace(JJ^T)/M)");
  synth->add_option("--sample-rate", sample_rate, "Output sample rate (default: from the descriptor)");
  synth->add_option("--format", format, "Output sample format: float32 or pcm16");
  synth->add_flag("-q,--quiet", quiet, "No per-iteration progress");

  auto* validate = app.add_subcommand("validate", "Check banks, coefficient counts and invariants");
  validate->add_option("--config", config_path, "Descriptor configuration JSON (default built-in)");

  std::size_t max_width = 2048;
  double range_db = 80.0;
  std::string render_input;
  auto* render = app.add_subcommand("render", "Render the first-layer scalogram as PNG");
  render->add_option("input", render_input, "Input WAV")->required();
  render->add_option("-o,--output", output, "Output PNG")->required();
  render->add_option("--config", config_path, "Descriptor configuration JSON");
  render->add_flag("--pad", pad, "Zero-pad instead of truncating");
  render->add_option("--max-width", max_width, "Maximum image width in columns");
  render->add_option("--range-db", range_db, "Displayed dynamic range in dB");

  std::string path_a;
  std::string path_b;
  std::optional<double> max_distance;
  auto* compare = app.add_subcommand("compare", "Relative descriptor distance ||a - b|| / ||b||");
  compare->add_option("a", path_a, "Descriptor JSON")->required();
  compare->add_option("b", path_b, "Reference descriptor JSON")->required();
  compare->add_option("--max-distance", max_distance, "Exit with status 4 above this distance");

  std::string manifest;
  auto* reproduce = app.add_subcommand("reproduce", "Rerun a manifest and compare output digests");
  reproduce->add_option("manifest", manifest, "Run manifest JSON")->required();
  reproduce->add_option("--out-dir", out_dir, "Directory for the rerun outputs")->required();

  std::string kind;
  std::size_t length = 16384;
  std::uint64_t gen_seed = 1;
  double gen_rate = 20000.0;
  auto* generate = app.add_subcommand("generate", "Write a seeded synthetic texture");
  generate->add_option("kind", kind, "white-noise, am-noise, filtered-noise, am-tone or crackle")->required();
  generate->add_option("-o,--output", output, "Output WAV")->required();
  generate->add_option("-n,--length", length, "Number of samples (power of two)");
  generate->add_option("--seed", gen_seed, "Random seed");
  generate->add_option("--sample-rate", gen_rate, "Sample rate in Hz");
  generate->add_option("--format", format, "float32 or pcm16");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return guarded_run(err, [&]() -> int {
    const auto policy = pad ? LengthPolicy::ZeroPad : LengthPolicy::Truncate;
    std::optional<DescriptorConfig> cfg;
    if (!config_path.empty()) cfg = load_config(config_path);

    if (analyze->parsed()) {
      require(output.empty() != out_dir.empty(), ErrorCode::InvalidArgument,
              "give exactly one of --output or --out-dir");
      if (!output.empty()) {
        require(inputs.size() == 1, ErrorCode::InvalidArgument, "--output takes a single input; use --out-dir");
        const auto m = run_analyze({inputs.front(), output, cfg, policy});
        out << "wrote " << output << " (" << m.results["counts"]["total"].get<std::size_t>()
            << " coefficients)\n";
        return kExitOk;
      }
      fs::create_directories(out_dir);
      const std::size_t lanes = std::max(1u, std::thread::hardware_concurrency());
      int worst = kExitOk;
      for (std::size_t first = 0; first < inputs.size(); first += lanes) {
        std::vector<std::pair<std::string, std::future<int>>> jobs;
        for (std::size_t i = first; i < std::min(inputs.size(), first + lanes); ++i) {
          const std::string target = (fs::path(out_dir) / fs::path(inputs[i]).stem()).string() + ".json";
          jobs.emplace_back(target, std::async(std::launch::async, [&, i, target] {
                              std::ostringstream local;
                              const int code = guarded_run(local, [&] {
                                run_analyze({inputs[i], target, cfg, policy});
                                return kExitOk;
                              });
                              if (code != kExitOk) throw std::runtime_error(inputs[i] + ": " + local.str());
                              return code;
                            }));
        }
        for (auto& [target, job] : jobs) {
          try {
            job.get();
            out << "wrote " << target << "\n";
          } catch (const std::runtime_error& e) {
            err << e.what();
            worst = std::max(worst, kExitFormat);
          }
        }
      }
      return worst;
    }

    if (synth->parsed()) {
      SynthesizeRequest req;
      req.descriptor = descriptor;
      req.output = output;
      req.synthesis.optimizer = optimizer_from_string(optimizer);
      req.synthesis.rng_seed = seed;
      req.synthesis.max_iterations = max_iter;
      req.synthesis.target_relative_error = tol;
      req.synthesis.step_gamma = step;
      req.synthesis.damping_mu = damping;
      req.synthesis.validate();
      req.sample_rate = sample_rate;
      req.format = sample_format_from_string(format);
      const auto m = run_synthesize(req, quiet ? nullptr : &out);
      out << "stop: " << m.results["stop_reason"].get<std::string>() << " after "
          << m.results["iterations"].get<std::size_t>() << " iterations, relative error "
          << num(m.achieved_error, "%.4e") << "\n";
      out << "wrote " << output << " and " << manifest_path(output) << "\n";
      return kExitOk;
    }

    if (validate->parsed()) return run_validate(cfg.value_or(DescriptorConfig{}), out);

    if (render->parsed()) {
      RenderRequest req{render_input, output, cfg, policy, {}};
      req.options.max_width = max_width;
      req.options.dynamic_range_db = range_db;
      run_render(req);
      out << "wrote " << output << "\n";
      return kExitOk;
    }

    if (compare->parsed()) {
      const auto a = load_descriptor(path_a);
      const auto b = load_descriptor(path_b);
      const double d = relative_distance(a, b);
      out << "distance " << num(d, "%.6e") << "\n";
      for (const auto& blk : block_distances(a, b)) {
        out << "  " << blk.name << " (" << blk.size << "): " << num(blk.distance, "%.6e") << "\n";
      }
      if (max_distance && !(d <= *max_distance)) {
        err << "distance " << num(d, "%.6e") << " exceeds " << num(*max_distance) << "\n";
        return kExitNumerical;
      }
      return kExitOk;
    }

    if (reproduce->parsed()) return run_reproduce(manifest, out_dir, out);

    if (generate->parsed()) {
      GenerateRequest req;
      req.kind = texture_kind_from_string(kind);
      req.length = length;
      req.seed = gen_seed;
      req.sample_rate = gen_rate;
      req.format = sample_format_from_string(format);
      req.output = output;
      run_generate(req);
      out << "wrote " << output << "\n";
      return kExitOk;
    }
    return kExitUsage;
  });
}

}  // namespace scatsynth::cli
