#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "scatsynth/error.hpp"
#include "scatsynth/fft.hpp"

namespace scatsynth {

enum class SampleFormat { Pcm16, Float32 };

inline std::string to_string(SampleFormat f) { return f == SampleFormat::Pcm16 ? "pcm16" : "float32"; }

inline SampleFormat sample_format_from_string(const std::string& name) {
  if (name == "pcm16") return SampleFormat::Pcm16;
  if (name == "float32" || name == "float") return SampleFormat::Float32;
  throw Error(ErrorCode::InvalidArgument, "unknown sample format '" + name + "'");
}

/// Mono audio with samples nominally in [-1, 1]. PCM16 decodes as v / 32768.
struct AudioBuffer {
  std::vector<double> samples;
  double sample_rate = 0.0;
  std::size_t channels = 1;
  SampleFormat source_format = SampleFormat::Float32;
  std::size_t source_channels = 1;
};

namespace detail {

inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace detail

/// Parses a RIFF/WAVE image holding 16-bit PCM or 32-bit IEEE float samples,
/// including the WAVE_FORMAT_EXTENSIBLE variants. Channels are averaged.
inline AudioBuffer decode_wav(std::span<const unsigned char> bytes) {
  using detail::le16;
  using detail::le32;
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          ErrorCode::UnsupportedFormat, "not a RIFF/WAVE file");

  std::uint16_t format_tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + at;
    const std::size_t size = le32(chunk + 4);
    const std::size_t available = bytes.size() - at - 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(size >= 16 && size <= available, ErrorCode::UnsupportedFormat, "short fmt chunk");
      format_tag = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format_tag == 0xFFFE) {
        require(size >= 40, ErrorCode::UnsupportedFormat, "short extensible fmt chunk");
        format_tag = le16(chunk + 32);  // first two bytes of the sub-format GUID
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min(size, available);  // tolerate a truncated final chunk
      break;
    }
    at += 8 + size + (size & 1);
  }
  require(channels > 0 && rate > 0, ErrorCode::UnsupportedFormat, "missing or invalid fmt chunk");
  require(data != nullptr, ErrorCode::UnsupportedFormat, "missing data chunk");

  AudioBuffer out;
  out.sample_rate = static_cast<double>(rate);
  out.source_channels = channels;
  std::size_t width = 0;
  if (format_tag == 1 && bits == 16) {
    out.source_format = SampleFormat::Pcm16;
    width = 2;
  } else if (format_tag == 3 && bits == 32) {
    out.source_format = SampleFormat::Float32;
    width = 4;
  } else {
    throw Error(ErrorCode::UnsupportedFormat, "only 16-bit PCM and 32-bit float WAV are supported (format " +
                                                  std::to_string(format_tag) + ", " +
                                                  std::to_string(bits) + " bits)");
  }

  const std::size_t frames = data_size / (width * channels);
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (f * channels + c) * width;
      if (width == 2) {
        acc += static_cast<double>(static_cast<std::int16_t>(le16(p))) / 32768.0;
      } else {
        acc += static_cast<double>(std::bit_cast<float>(le32(p)));
      }
    }
    out.samples[f] = acc / static_cast<double>(channels);
    require(std::isfinite(out.samples[f]), ErrorCode::UnsupportedFormat, "non-finite sample");
  }
  return out;
}

/// Mono RIFF/WAVE image. PCM16 rounds v * 32768 and clips to [-32768, 32767].
inline std::vector<unsigned char> encode_wav(std::span<const double> samples, double sample_rate,
                                             SampleFormat format) {
  require(sample_rate > 0.0 && sample_rate < 4.0e9, ErrorCode::InvalidArgument, "bad sample rate");
  const std::uint16_t width = format == SampleFormat::Pcm16 ? 2 : 4;
  const auto rate = static_cast<std::uint32_t>(std::lround(sample_rate));
  const auto data_size = static_cast<std::uint32_t>(samples.size() * width);
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  detail::put_tag(out, "RIFF");
  detail::put32(out, 36 + data_size);
  detail::put_tag(out, "WAVE");
  detail::put_tag(out, "fmt ");
  detail::put32(out, 16);
  detail::put16(out, format == SampleFormat::Pcm16 ? 1 : 3);
  detail::put16(out, 1);
  detail::put32(out, rate);
  detail::put32(out, rate * width);
  detail::put16(out, width);
  detail::put16(out, static_cast<std::uint16_t>(8 * width));
  detail::put_tag(out, "data");
  detail::put32(out, data_size);
  for (const double v : samples) {
    if (format == SampleFormat::Pcm16) {
      const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
      detail::put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      detail::put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  require(!is.bad(), ErrorCode::IoError, "read failed for " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, std::span<const unsigned char> bytes) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot create " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorCode::IoError, "write failed for " + path);
}

inline AudioBuffer load_wav(const std::string& path) { return decode_wav(read_file_bytes(path)); }

inline void save_wav(const std::string& path, std::span<const double> samples, double sample_rate,
                     SampleFormat format = SampleFormat::Float32) {
  write_file_bytes(path, encode_wav(samples, sample_rate, format));
}

/// How a recording is brought to a power-of-two analysis length.
enum class LengthPolicy { Truncate, ZeroPad };

/// Largest power of two not above `length` (Truncate) or smallest not below it (ZeroPad).
inline std::size_t coerced_length(std::size_t length, LengthPolicy policy) {
  require(length > 0, ErrorCode::LengthMismatch, "empty recording");
  const std::size_t up = next_power_of_two(length);
  if (up == length || policy == LengthPolicy::ZeroPad) return up;
  return up / 2;
}

/// Truncates to `n`, or zero-pads when the policy allows and the input is shorter.
inline std::vector<double> conform_length(std::vector<double> samples, std::size_t n,
                                          LengthPolicy policy) {
  if (samples.size() > n) {
    samples.resize(n);
  } else if (samples.size() < n) {
    require(policy == LengthPolicy::ZeroPad, ErrorCode::LengthMismatch,
            "recording has " + std::to_string(samples.size()) + " samples, configuration needs " +
                std::to_string(n) + " (allow zero-padding to extend it)");
    samples.resize(n, 0.0);
  }
  return samples;
}

}  // namespace scatsynth
