#pragma once

// RIFF/WAVE reader (16-bit PCM, 32-bit float) and 32-bit float mono writer.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lded/error.hpp"
#include "lded/signal.hpp"

namespace lded {

namespace detail {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

inline std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace detail

inline AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail(ErrorKind::data, "not a RIFF/WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) fail(ErrorKind::data, "truncated fmt chunk");
      format = detail::read_u16(chunk + 8);
      channels = detail::read_u16(chunk + 10);
      rate = detail::read_u32(chunk + 12);
      bits = detail::read_u16(chunk + 22);
      if (format == 0xFFFE && size >= 40 && avail >= 40) format = detail::read_u16(chunk + 32);  // extensible
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, avail);
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || data == nullptr) fail(ErrorKind::data, "WAV file lacks fmt or data chunk");
  if (channels == 0 || rate == 0) fail(ErrorKind::data, "WAV header has zero channels or sample rate");

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) fail(ErrorKind::data, "unsupported WAV encoding (need 16-bit PCM or 32-bit float)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t n_frames = data_size / (bytes_per_sample * channels);
  if (n_frames == 0) fail(ErrorKind::data, "WAV file contains no audio");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per_sample;
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += static_cast<double>(v);
      }
    }
    clip.samples[i] = channels == 1 ? acc : acc / channels;
  }
  clip.validate();
  return clip;
}

/// Writes mono 32-bit IEEE float; values outside [-1, 1] are kept as is.
inline void save_wav(const AudioClip& clip, const std::filesystem::path& path) {
  clip.validate();
  const auto n = static_cast<std::uint32_t>(clip.size());
  std::string out;
  out.reserve(44 + 4 * clip.size());
  out += "RIFF";
  detail::put<std::uint32_t>(out, 36 + 4 * n);
  out += "WAVEfmt ";
  detail::put<std::uint32_t>(out, 16);
  detail::put<std::uint16_t>(out, 3);  // IEEE float
  detail::put<std::uint16_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * 4);
  detail::put<std::uint16_t>(out, 4);
  detail::put<std::uint16_t>(out, 32);
  out += "data";
  detail::put<std::uint32_t>(out, 4 * n);
  for (double s : clip.samples) detail::put<float>(out, static_cast<float>(s));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace lded
