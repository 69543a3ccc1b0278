#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "scatsynth/audio_io.hpp"
#include "scatsynth/error.hpp"
#include "scatsynth/scattering.hpp"
#include "scatsynth/version.hpp"

namespace scatsynth {

using Json = nlohmann::json;

/// Version stamped into every JSON document this library writes.
inline constexpr int kFormatVersion = 1;

inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_digest(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

namespace detail {

inline void check_header(const Json& j, const char* format) {
  require(j.is_object(), ErrorCode::UnsupportedFormat, std::string(format) + " must be a JSON object");
  if (j.contains("format")) {
    require(j["format"] == format, ErrorCode::UnsupportedFormat,
            "expected a " + std::string(format) + " document");
  }
  if (j.contains("version")) {
    require(j["version"] == kFormatVersion, ErrorCode::UnsupportedFormat,
            "unsupported " + std::string(format) + " version " + j["version"].dump());
  }
}

template <class F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::UnsupportedFormat, std::string("malformed ") + what + ": " + e.what());
  }
}

inline Json parse_json(std::string_view text, const char* what) {
  return guarded(what, [&] { return Json::parse(text); });
}

inline std::string read_text(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::span<const unsigned char>(
                             reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

}  // namespace detail

// ---------------------------------------------------------------- config

inline Json config_to_json(const DescriptorConfig& cfg) {
  return Json{{"format", "scatsynth-config"},
              {"version", kFormatVersion},
              {"signal_length", cfg.signal_length},
              {"q1", cfg.q1},
              {"q2", cfg.q2},
              {"min_frequency", cfg.min_frequency},
              {"max_frequency", cfg.max_frequency},
              {"alpha", cfg.alpha},
              {"frequency_scattering", cfg.include_freq_scattering},
              {"dyadic_bank", cfg.include_dyadic_bank},
              {"dyadic_order2", cfg.dyadic_order2},
              {"window_shape", to_string(cfg.window_shape)}};
}

/// Applies the keys present in `j` on top of `base`; unknown keys are refused.
inline DescriptorConfig config_from_json(const Json& j, DescriptorConfig base = {}) {
  detail::check_header(j, "scatsynth-config");
  return detail::guarded("config", [&] {
    for (const auto& [key, value] : j.items()) {
      if (key == "format" || key == "version") continue;
      if (key == "signal_length") base.signal_length = value.get<std::size_t>();
      else if (key == "q1") base.q1 = value.get<double>();
      else if (key == "q2") base.q2 = value.get<double>();
      else if (key == "min_frequency") base.min_frequency = value.get<double>();
      else if (key == "max_frequency") base.max_frequency = value.get<double>();
      else if (key == "alpha") base.alpha = value.get<std::size_t>();
      else if (key == "frequency_scattering") base.include_freq_scattering = value.get<bool>();
      else if (key == "dyadic_bank") base.include_dyadic_bank = value.get<bool>();
      else if (key == "dyadic_order2") base.dyadic_order2 = value.get<bool>();
      else if (key == "window_shape") base.window_shape = window_shape_from_string(value.get<std::string>());
      else throw Error(ErrorCode::UnsupportedFormat, "unknown config key '" + key + "'");
    }
    return base;
  });
}

inline Json load_json_file(const std::string& path, const char* what) {
  return detail::parse_json(detail::read_text(path), what);
}

inline void save_config(const std::string& path, const DescriptorConfig& cfg) {
  detail::write_text(path, config_to_json(cfg).dump(2) + "\n");
}

// ---------------------------------------------------------------- bank

/// Parameters only; filters are rebuilt deterministically by bank_from_json.
inline Json bank_to_json(const FilterBank& bank) {
  return Json{{"format", "scatsynth-bank"},
              {"version", kFormatVersion},
              {"N", bank.signal_length()},
              {"Q", bank.q_factor()},
              {"N0", bank.min_frequency()},
              {"max_frequency", bank.max_frequency()},
              {"lambda_grid", bank.lambda_grid()},
              {"window_shape", to_string(bank.mother().window_shape)},
              {"bandwidth_factor", bank.mother().bandwidth_factor},
              {"frame_epsilon", bank.frame_epsilon()}};
}

inline FilterBank bank_from_json(const Json& j) {
  detail::check_header(j, "scatsynth-bank");
  return detail::guarded("bank", [&] {
    BankOptions opts;
    opts.window_shape = window_shape_from_string(j.at("window_shape").get<std::string>());
    opts.bandwidth_factor = j.at("bandwidth_factor").get<double>();
    opts.max_frequency = j.value("max_frequency", 0.0);
    auto bank = build_filter_bank(j.at("N").get<std::size_t>(), j.at("Q").get<double>(),
                                  j.at("N0").get<double>(), opts);
    require(bank.lambda_grid() == j.at("lambda_grid").get<std::vector<double>>(),
            ErrorCode::UnsupportedFormat, "stored lambda grid disagrees with the parameters");
    return bank;
  });
}

// ---------------------------------------------------------------- descriptor

inline Json index_to_json(const ScatteringIndex& idx) {
  Json j{{"kind", to_string(idx.kind)},
         {"bank", idx.bank == BankId::Primary ? "primary" : "dyadic"},
         {"band1", idx.band1},
         {"lambda1", idx.lambda1}};
  if (idx.kind == CoefficientKind::Order2) {
    j["band2"] = idx.band2;
    j["lambda2"] = idx.lambda2;
  } else if (idx.kind == CoefficientKind::FreqOrder2) {
    j["scale"] = idx.scale;
    j["bar_lambda2"] = idx.bar_lambda2;
  }
  return j;
}

inline ScatteringIndex index_from_json(const Json& j) {
  ScatteringIndex idx;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "order1") idx.kind = CoefficientKind::Order1;
  else if (kind == "order2") idx.kind = CoefficientKind::Order2;
  else if (kind == "freq") idx.kind = CoefficientKind::FreqOrder2;
  else throw Error(ErrorCode::UnsupportedFormat, "unknown coefficient kind '" + kind + "'");
  const auto bank = j.at("bank").get<std::string>();
  require(bank == "primary" || bank == "dyadic", ErrorCode::UnsupportedFormat,
          "unknown bank '" + bank + "'");
  idx.bank = bank == "primary" ? BankId::Primary : BankId::Dyadic;
  idx.band1 = j.at("band1").get<std::size_t>();
  idx.lambda1 = j.at("lambda1").get<double>();
  if (idx.kind == CoefficientKind::Order2) {
    idx.band2 = j.at("band2").get<std::size_t>();
    idx.lambda2 = j.at("lambda2").get<double>();
  } else if (idx.kind == CoefficientKind::FreqOrder2) {
    idx.scale = j.at("scale").get<std::size_t>();
    idx.bar_lambda2 = j.at("bar_lambda2").get<double>();
  }
  return idx;
}

inline Json counts_to_json(const BlockCounts& c) {
  return Json{{"order1", c.order1},
              {"order2", c.order2},
              {"freq", c.freq},
              {"dyadic_order1", c.dyadic_order1},
              {"dyadic_order2", c.dyadic_order2},
              {"total", c.total()}};
}

/// Descriptor document. Values are written with 17 significant digits so
/// that reading them back reproduces every double exactly.
inline std::string descriptor_to_string(const ScatteringVector& v, const Json& metadata = Json::object()) {
  Json j{{"format", "scatsynth-descriptor"},
         {"version", kFormatVersion},
         {"config", config_to_json(v.config)},
         {"config_digest", v.config_digest},
         {"counts", counts_to_json(v.counts)},
         {"stats", {{"mean", v.stats.mean}, {"variance", v.stats.variance}}},
         {"metadata", metadata.is_null() ? Json::object() : metadata}};
  Json indices = Json::array();
  for (const auto& idx : v.indices) indices.push_back(index_to_json(idx));
  j["indices"] = std::move(indices);
  static constexpr const char* kPlaceholder = "@values@";
  j["values"] = kPlaceholder;

  std::string values = "[";
  char buf[40];
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v.values[i]);
    values += (i ? ",\n    " : "\n    ");
    values += buf;
  }
  values += v.values.empty() ? "]" : "\n  ]";

  std::string text = j.dump(2);
  const std::string quoted = std::string("\"") + kPlaceholder + "\"";
  text.replace(text.find(quoted), quoted.size(), values);
  return text + "\n";
}

inline ScatteringVector descriptor_from_json(const Json& j) {
  detail::check_header(j, "scatsynth-descriptor");
  return detail::guarded("descriptor", [&] {
    ScatteringVector v;
    v.config = config_from_json(j.at("config"));
    v.config_digest = j.at("config_digest").get<std::string>();
    require(v.config_digest == v.config.digest(), ErrorCode::DigestMismatch,
            "stored digest " + v.config_digest + " does not match its config (" +
                v.config.digest() + ")");
    const auto& c = j.at("counts");
    v.counts.order1 = c.at("order1").get<std::size_t>();
    v.counts.order2 = c.at("order2").get<std::size_t>();
    v.counts.freq = c.at("freq").get<std::size_t>();
    v.counts.dyadic_order1 = c.value("dyadic_order1", std::size_t{0});
    v.counts.dyadic_order2 = c.value("dyadic_order2", std::size_t{0});
    v.stats.mean = j.at("stats").at("mean").get<double>();
    v.stats.variance = j.at("stats").at("variance").get<double>();
    for (const auto& idx : j.at("indices")) v.indices.push_back(index_from_json(idx));
    v.values = j.at("values").get<std::vector<double>>();
    require(v.values.size() == v.indices.size() && v.values.size() == v.counts.total(),
            ErrorCode::UnsupportedFormat,
            "descriptor has " + std::to_string(v.values.size()) + " values, " +
                std::to_string(v.indices.size()) + " indices and a declared total of " +
                std::to_string(v.counts.total()));
    return v;
  });
}

inline ScatteringVector descriptor_from_string(std::string_view text) {
  return descriptor_from_json(detail::parse_json(text, "descriptor"));
}

inline void save_descriptor(const std::string& path, const ScatteringVector& v,
                            const Json& metadata = Json::object()) {
  detail::write_text(path, descriptor_to_string(v, metadata));
}

inline ScatteringVector load_descriptor(const std::string& path) {
  return descriptor_from_string(detail::read_text(path));
}

// ---------------------------------------------------------------- manifest

struct InputRecord {
  std::string path;
  std::string digest;
  bool operator==(const InputRecord&) const = default;
};

struct OutputRecord {
  std::string role;
  std::string path;
  std::string digest;
  bool operator==(const OutputRecord&) const = default;
};

/// Everything needed to rerun a command and check its outputs byte for byte.
struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::vector<InputRecord> inputs;
  DescriptorConfig config;
  Json options = Json::object();
  std::vector<OutputRecord> outputs;
  double achieved_error = 0.0;
  Json results = Json::object();
};

inline Json manifest_to_json(const RunManifest& m) {
  Json inputs = Json::array();
  for (const auto& in : m.inputs) inputs.push_back({{"path", in.path}, {"digest", in.digest}});
  Json outputs = Json::array();
  for (const auto& out : m.outputs) {
    outputs.push_back({{"role", out.role}, {"path", out.path}, {"digest", out.digest}});
  }
  return Json{{"format", "scatsynth-manifest"},
              {"version", kFormatVersion},
              {"tool_version", m.tool_version},
              {"command", m.command},
              {"inputs", inputs},
              {"config", config_to_json(m.config)},
              {"config_digest", m.config.digest()},
              {"options", m.options},
              {"outputs", outputs},
              {"achieved_error", m.achieved_error},
              {"results", m.results}};
}

inline RunManifest manifest_from_json(const Json& j) {
  detail::check_header(j, "scatsynth-manifest");
  return detail::guarded("manifest", [&] {
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    for (const auto& in : j.at("inputs")) {
      m.inputs.push_back({in.at("path").get<std::string>(), in.at("digest").get<std::string>()});
    }
    m.config = config_from_json(j.at("config"));
    m.options = j.at("options");
    for (const auto& out : j.at("outputs")) {
      m.outputs.push_back({out.at("role").get<std::string>(), out.at("path").get<std::string>(),
                           out.at("digest").get<std::string>()});
    }
    m.achieved_error = j.value("achieved_error", 0.0);
    m.results = j.value("results", Json::object());
    return m;
  });
}

inline void save_manifest(const std::string& path, const RunManifest& m) {
  detail::write_text(path, manifest_to_json(m).dump(2) + "\n");
}

inline RunManifest load_manifest(const std::string& path) {
  return manifest_from_json(load_json_file(path, "manifest"));
}

}  // namespace scatsynth
