#pragma once

// Per-frame time-domain and spectral descriptors and their per-segment
// mean/variance aggregation.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lded/error.hpp"
#include "lded/signal.hpp"

namespace lded {

struct FrameFeatureSeries {
  std::string name;
  std::vector<double> values;
  std::size_t hop = 256;
  int sample_rate = 44100;
};

// Base feature identifiers, in output column order.
inline constexpr std::array<std::string_view, 15> kFeatureNames = {
    "AE",          "RMS",        "ZCR",        "S-centroid", "S-bandwidth", "S-rolloff", "S-flatness", "BER",
    "S-contrast",  "S-variance", "S-skewness", "S-kurtosis", "S-crest",     "S-entropy", "S-flux",
};

inline constexpr std::array<std::string_view, 10> kDefaultModelFeatures = {
    "S-bandwidth mean", "S-entropy mean", "BER mean",  "BER var",         "S-centroid var",
    "ZCR var",          "ZCR mean",       "S-flux var", "S-centroid mean", "S-variance mean",
};

/// Floors used wherever a descriptor would otherwise divide by zero or take log 0.
inline constexpr double kFeatureEps = 1e-12;
inline constexpr double kRatioCap = 1e12;

// ---------------------------------------------------------------------------
// Time domain

using FrameView = std::span<const std::span<const double>>;

inline void require_frames(FrameView frames) {
  if (frames.empty()) fail(ErrorKind::invalid_argument, "no frames");
  for (const auto& f : frames)
    if (f.empty()) fail(ErrorKind::invalid_argument, "empty frame");
}

/// Peak absolute amplitude per frame.
inline std::vector<double> amplitude_envelope(FrameView frames) {
  require_frames(frames);
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    double m = 0.0;
    for (double s : f) m = std::max(m, std::abs(s));
    out.push_back(m);
  }
  return out;
}

inline std::vector<double> rms_energy(FrameView frames) {
  require_frames(frames);
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(rms(f));
  return out;
}

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

/// Raw count: half the summed |sgn(s_k) - sgn(s_{k+1})| over adjacent pairs.
inline std::vector<double> zero_crossing_rate(FrameView frames) {
  require_frames(frames);
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.size() < 2) fail(ErrorKind::invalid_argument, "zero crossing rate needs at least two samples per frame");
    int acc = 0;
    for (std::size_t k = 0; k + 1 < f.size(); ++k) acc += std::abs(sign_of(f[k]) - sign_of(f[k + 1]));
    out.push_back(0.5 * acc);
  }
  return out;
}

inline double zcr_per_second(double count, std::size_t frame_size, int sample_rate) {
  return count * sample_rate / static_cast<double>(frame_size);
}

// ---------------------------------------------------------------------------
// Spectral descriptors on magnitude frames m(n), n = 0..N-1 (bin indices).

struct SpectralParams {
  double rolloff_eta = 0.85;
  double ber_split_hz = 7000.0;
  double contrast_quantile = 0.2;
  double flux_norm_p = 2.0;
};

/// First bin whose centre frequency is at or above `split_hz`.
inline std::size_t split_bin(double split_hz, int sample_rate, std::size_t frame_size, std::size_t n_bins) {
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(frame_size);
  const auto k = static_cast<std::size_t>(std::ceil(split_hz / bin_hz - 1e-9));
  return std::min(k, n_bins);
}

struct SpectralFrameValues {
  double centroid = 0, bandwidth = 0, rolloff = 0, flatness = 1, ber = 0, contrast = 0;
  double variance = 0, skewness = 0, kurtosis = 0, crest = 1, entropy = 0, flux = 0;
};

/// All descriptors of one frame. `previous` is the preceding frame's magnitudes
/// (empty for the first frame, whose flux is 0).
inline SpectralFrameValues spectral_frame(std::span<const double> m, std::span<const double> previous, std::size_t split,
                                          const SpectralParams& params) {
  const std::size_t n = m.size();
  SpectralFrameValues v;

  if (!previous.empty()) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::pow(std::abs(m[k] - previous[k]), params.flux_norm_p);
    v.flux = std::pow(acc, 1.0 / params.flux_norm_p);
  }

  double sum = 0.0, peak = 0.0, log_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sum += m[k];
    peak = std::max(peak, m[k]);
    log_sum += std::log(std::max(m[k], kFeatureEps));
  }
  if (sum <= 0.0) return v;  // silent frame: policy values already set

  double weighted = 0.0;
  for (std::size_t k = 0; k < n; ++k) weighted += static_cast<double>(k) * m[k];
  v.centroid = weighted / sum;

  double abs_dev = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = static_cast<double>(k) - v.centroid;
    abs_dev += std::abs(d) * m[k];
    m2 += d * d * m[k];
    m3 += d * d * d * m[k];
    m4 += d * d * d * d * m[k];
  }
  v.bandwidth = abs_dev / sum;
  v.variance = std::sqrt(m2 / sum);
  if (v.variance > 0.0) {
    v.skewness = m3 / (std::pow(v.variance, 3) * sum);
    v.kurtosis = m4 / (std::pow(v.variance, 4) * sum);
  }

  const double target = params.rolloff_eta * sum;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    cumulative += m[k];
    if (cumulative >= target) {
      v.rolloff = static_cast<double>(k);
      break;
    }
  }

  const double mean = sum / static_cast<double>(n);
  v.flatness = std::exp(log_sum / static_cast<double>(n)) / mean;
  v.crest = peak / mean;

  double low = 0.0, high = 0.0;
  for (std::size_t k = 0; k < n; ++k) (k < split ? low : high) += m[k] * m[k];
  v.ber = std::min(low / std::max(high, kFeatureEps), kRatioCap);

  std::vector<double> energy(n);
  for (std::size_t k = 0; k < n; ++k) energy[k] = m[k] * m[k];
  std::sort(energy.begin(), energy.end());
  const auto q = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(params.contrast_quantile * static_cast<double>(n))));
  double valley = 0.0, top = 0.0;
  for (std::size_t k = 0; k < q; ++k) {
    valley += energy[k];
    top += energy[n - 1 - k];
  }
  v.contrast = std::min((top / q) / std::max(valley / q, kFeatureEps), kRatioCap);

  double h = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double p = m[k] / sum;
    if (p > 0.0) h -= p * std::log(p);
  }
  v.entropy = n > 1 ? h / std::log(static_cast<double>(n)) : 0.0;
  return v;
}

/// The twelve spectral series of a spectrogram, in kFeatureNames order (from index 3).
inline std::vector<FrameFeatureSeries> spectral_descriptors(const Spectrogram& spec, const SpectralParams& params = {}) {
  if (spec.n_frames == 0 || spec.n_bins == 0) fail(ErrorKind::invalid_argument, "empty spectrogram");
  const std::size_t split = split_bin(params.ber_split_hz, spec.sample_rate, spec.framing.frame_size, spec.n_bins);
  std::vector<FrameFeatureSeries> series(12);
  for (std::size_t i = 0; i < 12; ++i) {
    series[i].name = std::string(kFeatureNames[3 + i]);
    series[i].hop = spec.framing.hop;
    series[i].sample_rate = spec.sample_rate;
    series[i].values.reserve(spec.n_frames);
  }
  std::vector<double> prev;
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    std::vector<double> m(spec.n_bins);
    for (std::size_t k = 0; k < spec.n_bins; ++k) m[k] = std::abs(spec.at(k, t));
    const auto v = spectral_frame(m, prev, split, params);
    const double row[12] = {v.centroid, v.bandwidth, v.rolloff,  v.flatness, v.ber,     v.contrast,
                            v.variance, v.skewness,  v.kurtosis, v.crest,    v.entropy, v.flux};
    for (std::size_t i = 0; i < 12; ++i) series[i].values.push_back(row[i]);
    prev = std::move(m);
  }
  return series;
}

// ---------------------------------------------------------------------------
// Segment aggregation

/// Ordered (name, value) statistics for one segment: "<feature> mean", "<feature> var".
struct SegmentFeatureVector {
  std::vector<std::string> names;
  std::vector<double> values;

  double at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return values[i];
    fail(ErrorKind::invalid_argument, "unknown feature: " + std::string(name));
  }

  std::vector<double> select(std::span<const std::string> wanted) const {
    std::vector<double> out;
    out.reserve(wanted.size());
    for (const auto& w : wanted) out.push_back(at(w));
    return out;
  }
};

inline std::vector<std::string> segment_feature_names() {
  std::vector<std::string> names;
  for (auto f : kFeatureNames) {
    names.push_back(std::string(f) + " mean");
    names.push_back(std::string(f) + " var");
  }
  return names;
}

inline std::vector<std::string> default_model_features() {
  return {kDefaultModelFeatures.begin(), kDefaultModelFeatures.end()};
}

/// Population mean and variance of each series.
inline SegmentFeatureVector aggregate_segment(std::span<const FrameFeatureSeries> series) {
  if (series.empty()) fail(ErrorKind::invalid_argument, "no feature series");
  const std::size_t frames = series.front().values.size();
  SegmentFeatureVector out;
  for (const auto& s : series) {
    if (s.values.size() != frames || frames == 0) fail(ErrorKind::invalid_argument, "feature series frame counts differ");
    double mean = 0.0;
    for (double v : s.values) mean += v;
    mean /= static_cast<double>(frames);
    double var = 0.0;
    for (double v : s.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(frames);
    out.names.push_back(s.name + " mean");
    out.values.push_back(mean);
    out.names.push_back(s.name + " var");
    out.values.push_back(var);
  }
  return out;
}

/// All 15 frame series of a clip.
inline std::vector<FrameFeatureSeries> frame_features(const AudioClip& clip, const FramingConfig& cfg = {},
                                                      const SpectralParams& params = {}) {
  const auto frames = frame_signal(clip, cfg);
  std::vector<FrameFeatureSeries> out;
  auto add = [&](std::string_view name, std::vector<double> v) {
    out.push_back({std::string(name), std::move(v), cfg.hop, clip.sample_rate});
  };
  add("AE", amplitude_envelope(frames));
  add("RMS", rms_energy(frames));
  add("ZCR", zero_crossing_rate(frames));
  auto spectral = spectral_descriptors(stft(clip, cfg), params);
  for (auto& s : spectral) out.push_back(std::move(s));
  return out;
}

inline SegmentFeatureVector segment_features(const Segment& seg, const FramingConfig& cfg = {}, const SpectralParams& params = {}) {
  const auto series = frame_features(seg.clip, cfg, params);
  return aggregate_segment(series);
}

}  // namespace lded
