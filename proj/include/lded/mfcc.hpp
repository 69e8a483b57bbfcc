#pragma once

// Mel-frequency cepstral coefficients: power spectrum -> mel filterbank ->
// log -> orthonormal DCT-II -> first 20 coefficients -> [-1, 1] min-max.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lded/error.hpp"
#include "lded/signal.hpp"

namespace lded {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  std::size_t n_mels = 40;
  std::size_t n_bins = 257;
  double f_min = 0.0;
  double f_max = 22050.0;
  std::vector<double> weights;  // n_mels x n_bins, row-major

  double weight(std::size_t mel, std::size_t bin) const { return weights[mel * n_bins + bin]; }
};

/// Triangular filters at equally mel-spaced centres, each scaled by 2/(f_upper - f_lower).
/// Pass `normalize = false` for the raw unit-peak triangles.
inline MelFilterbank mel_filterbank(int sample_rate, std::size_t frame_size, std::size_t n_mels = 40, bool normalize = true) {
  require(sample_rate > 0, "sample rate must be positive");
  require(n_mels >= 2, "need at least two mel filters");
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = frame_size / 2 + 1;
  fb.f_max = 0.5 * sample_rate;
  fb.weights.assign(n_mels * fb.n_bins, 0.0);

  const double mel_lo = hz_to_mel(fb.f_min);
  const double mel_hi = hz_to_mel(fb.f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lower = edges[m], centre = edges[m + 1], upper = edges[m + 2];
    const double scale = normalize ? 2.0 / (upper - lower) : 1.0;
    bool any = false;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(frame_size);
      const double rise = (f - lower) / (centre - lower);
      const double fall = (upper - f) / (upper - centre);
      const double w = std::max(0.0, std::min(rise, fall));
      if (w > 0.0) any = true;
      fb.weights[m * fb.n_bins + k] = w * scale;
    }
    if (!any) fail(ErrorKind::invalid_argument, "too many mel filters for the FFT resolution: a filter covers no bins");
  }
  return fb;
}

/// Orthonormal DCT-II basis, rows = coefficients (n_out x n_in).
inline std::vector<double> dct2_matrix(std::size_t n_in, std::size_t n_out) {
  std::vector<double> d(n_out * n_in);
  const double s0 = std::sqrt(1.0 / static_cast<double>(n_in));
  const double s = std::sqrt(2.0 / static_cast<double>(n_in));
  for (std::size_t k = 0; k < n_out; ++k)
    for (std::size_t n = 0; n < n_in; ++n)
      d[k * n_in + n] = (k == 0 ? s0 : s) *
                        std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(n) + 1.0) / (2.0 * static_cast<double>(n_in)));
  return d;
}

inline std::vector<double> dct2(std::span<const double> x, std::size_t n_out) {
  const auto d = dct2_matrix(x.size(), n_out);
  std::vector<double> out(n_out, 0.0);
  for (std::size_t k = 0; k < n_out; ++k)
    for (std::size_t n = 0; n < x.size(); ++n) out[k] += d[k * x.size() + n] * x[n];
  return out;
}

inline constexpr std::size_t kMfccCoefficients = 20;
inline constexpr std::size_t kMfccFrames = 85;
inline constexpr double kLogFloor = 1e-10;

/// Coefficient matrix, coefficient-major (row c holds coefficient c across frames).
struct MfccMatrix {
  std::size_t n_coeffs = kMfccCoefficients;
  std::size_t n_frames = 0;
  std::vector<double> values;
  double norm_min = 0.0;  // range used by the [-1, 1] normalization
  double norm_max = 0.0;

  double at(std::size_t c, std::size_t t) const { return values[c * n_frames + t]; }
  double& at(std::size_t c, std::size_t t) { return values[c * n_frames + t]; }
};

/// Min-max to [-1, 1] over the whole matrix; a constant matrix maps to zeros.
inline void normalize_unit_range(MfccMatrix& m) {
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  m.norm_min = *lo;
  m.norm_max = *hi;
  const double range = m.norm_max - m.norm_min;
  if (!(range > 0.0)) {
    std::fill(m.values.begin(), m.values.end(), 0.0);
    return;
  }
  const double mn = m.norm_min;
  for (double& v : m.values) v = std::clamp(2.0 * (v - mn) / range - 1.0, -1.0, 1.0);
}

/// Un-normalized cepstra. Also reports whether every frame had zero power.
inline MfccMatrix mfcc_raw(const AudioClip& clip, const FramingConfig& cfg, const MelFilterbank& fb, bool* silent = nullptr) {
  const auto spec = stft(clip, cfg);
  if (fb.n_bins != spec.n_bins) fail(ErrorKind::invalid_argument, "filterbank does not match frame size");
  require(fb.n_mels >= kMfccCoefficients, "need at least 20 mel bands");
  const auto dct = dct2_matrix(fb.n_mels, kMfccCoefficients);
  MfccMatrix out;
  out.n_frames = spec.n_frames;
  out.values.assign(kMfccCoefficients * spec.n_frames, 0.0);
  bool all_zero = true;
  std::vector<double> power(spec.n_bins), logmel(fb.n_mels);
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    for (std::size_t k = 0; k < spec.n_bins; ++k) {
      power[k] = std::norm(spec.at(k, t));
      if (power[k] != 0.0) all_zero = false;
    }
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < spec.n_bins; ++k) e += fb.weight(m, k) * power[k];
      logmel[m] = std::log(e + kLogFloor);
    }
    for (std::size_t c = 0; c < kMfccCoefficients; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < fb.n_mels; ++m) acc += dct[c * fb.n_mels + m] * logmel[m];
      out.at(c, t) = acc;
    }
  }
  if (silent) *silent = all_zero;
  return out;
}

/// Normalized MFCC matrix of a segment. Silent input yields all zeros.
inline MfccMatrix mfcc(const Segment& segment, const FramingConfig& cfg, const MelFilterbank& fb) {
  bool silent = false;
  auto m = mfcc_raw(segment.clip, cfg, fb, &silent);
  if (silent) {
    m.norm_min = m.norm_max = 0.0;
    std::fill(m.values.begin(), m.values.end(), 0.0);
    return m;
  }
  normalize_unit_range(m);
  return m;
}

inline const MelFilterbank& default_filterbank(int sample_rate = 44100) {
  static const MelFilterbank fb44 = mel_filterbank(44100, 512, 40);
  if (sample_rate == 44100) return fb44;
  fail(ErrorKind::invalid_argument, "default filterbank is defined for 44100 Hz only");
}

/// The CNN input contract: a 22050-sample segment becomes a 20 x 85 matrix.
inline MfccMatrix mfcc_segment_tensor(const Segment& segment) {
  if (segment.clip.sample_rate != 44100 || segment.clip.size() != segment_length(44100))
    fail(ErrorKind::invalid_argument, "MFCC tensor needs a 500 ms segment at 44100 Hz (22050 samples)");
  auto m = mfcc(segment, FramingConfig{}, default_filterbank());
  if (m.n_frames != kMfccFrames) fail(ErrorKind::internal, "MFCC tensor shape mismatch");
  return m;
}

// Tensor files. Binary: uint32 rows, uint32 cols, then rows*cols float32 values
// row-major, all little-endian. CSV: one line per coefficient row.

inline void write_mfcc_binary(const MfccMatrix& m, std::ostream& out) {
  auto put32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put32(static_cast<std::uint32_t>(m.n_coeffs));
  put32(static_cast<std::uint32_t>(m.n_frames));
  for (double v : m.values) put32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline MfccMatrix read_mfcc_binary(std::istream& in) {
  auto get32 = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::data, "truncated MFCC tensor file");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 | static_cast<std::uint32_t>(b[2]) << 16 |
           static_cast<std::uint32_t>(b[3]) << 24;
  };
  MfccMatrix m;
  m.n_coeffs = get32();
  m.n_frames = get32();
  if (m.n_coeffs == 0 || m.n_frames == 0 || m.n_coeffs * m.n_frames > (1u << 26)) fail(ErrorKind::data, "implausible MFCC tensor shape");
  m.values.resize(m.n_coeffs * m.n_frames);
  for (auto& v : m.values) v = std::bit_cast<float>(get32());
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::data, "trailing bytes after MFCC tensor");
  return m;
}

inline void write_mfcc_csv(const MfccMatrix& m, std::ostream& out) {
  std::ostringstream line;
  line.precision(9);
  for (std::size_t c = 0; c < m.n_coeffs; ++c) {
    line.str("");
    for (std::size_t t = 0; t < m.n_frames; ++t) line << (t ? "," : "") << static_cast<float>(m.at(c, t));
    out << line.str() << '\n';
  }
}

}  // namespace lded
