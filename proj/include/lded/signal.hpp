#pragma once

// Audio containers, framing, STFT / inverse STFT and fixed-length segmentation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lded/error.hpp"
#include "lded/fft.hpp"

namespace lded {

/// Mono audio. Samples are nominally in [-1, 1]; origin is the timestamp of
/// the first sample in seconds.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 44100;
  double origin = 0.0;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  double nyquist() const { return 0.5 * sample_rate; }

  void validate() const {
    require(sample_rate > 0, "sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) fail(ErrorKind::data, "audio contains non-finite samples");
  }
};

enum class Window { hann, rectangular };

struct FramingConfig {
  std::size_t frame_size = 512;
  std::size_t hop = 256;
  Window window = Window::hann;

  void validate() const {
    require(frame_size >= 2 && is_power_of_two(frame_size), "frame size must be a power of two >= 2");
    require(hop > 0 && hop <= frame_size, "hop must satisfy 0 < hop <= frame_size");
  }
  std::size_t n_bins() const { return frame_size / 2 + 1; }
};

/// Periodic window of the given length (periodic Hann satisfies COLA at hop = n/2).
inline std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::hann)
    for (std::size_t i = 0; i < n; ++i)
      out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return out;
}

inline std::size_t frame_count(std::size_t n_samples, const FramingConfig& cfg) {
  if (n_samples < cfg.frame_size) return 0;
  return (n_samples - cfg.frame_size) / cfg.hop + 1;
}

/// Non-centered framing: frame t covers [t*hop, t*hop + frame_size). Tail samples
/// that do not fill a frame are dropped.
inline std::vector<std::span<const double>> frame_signal(std::span<const double> samples, const FramingConfig& cfg) {
  cfg.validate();
  const std::size_t count = frame_count(samples.size(), cfg);
  if (count == 0) fail(ErrorKind::invalid_argument, "signal is shorter than one frame");
  std::vector<std::span<const double>> frames;
  frames.reserve(count);
  for (std::size_t t = 0; t < count; ++t) frames.push_back(samples.subspan(t * cfg.hop, cfg.frame_size));
  return frames;
}

inline std::vector<std::span<const double>> frame_signal(const AudioClip& clip, const FramingConfig& cfg) {
  return frame_signal(std::span<const double>(clip.samples), cfg);
}

/// Complex one-sided STFT, stored frame-major.
struct Spectrogram {
  std::size_t n_bins = 0;
  std::size_t n_frames = 0;
  FramingConfig framing;
  int sample_rate = 44100;
  double origin = 0.0;
  std::size_t signal_length = 0;  // length of the analysed clip, restored by istft
  std::vector<cplx> data;

  cplx& at(std::size_t bin, std::size_t frame) { return data[frame * n_bins + bin]; }
  const cplx& at(std::size_t bin, std::size_t frame) const { return data[frame * n_bins + bin]; }
  std::span<cplx> frame(std::size_t t) { return {data.data() + t * n_bins, n_bins}; }
  std::span<const cplx> frame(std::size_t t) const { return {data.data() + t * n_bins, n_bins}; }

  double bin_frequency(std::size_t bin) const {
    return static_cast<double>(bin) * sample_rate / static_cast<double>(framing.frame_size);
  }
};

/// Windowed FFT of one frame into `out` (n_bins values).
inline void analyse_frame(std::span<const double> frame, std::span<const double> window, std::span<cplx> out) {
  const std::size_t n = frame.size();
  std::vector<cplx> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = frame[i] * window[i];
  fft_plan(n).transform(buf, false);
  std::copy_n(buf.begin(), out.size(), out.begin());
}

inline Spectrogram stft(const AudioClip& clip, const FramingConfig& cfg) {
  const auto frames = frame_signal(clip, cfg);
  const auto window = make_window(cfg.window, cfg.frame_size);
  Spectrogram spec;
  spec.n_bins = cfg.n_bins();
  spec.n_frames = frames.size();
  spec.framing = cfg;
  spec.sample_rate = clip.sample_rate;
  spec.origin = clip.origin;
  spec.signal_length = clip.size();
  spec.data.resize(spec.n_bins * spec.n_frames);
  for (std::size_t t = 0; t < frames.size(); ++t) analyse_frame(frames[t], window, spec.frame(t));
  return spec;
}

/// Weighted overlap-add normalizer is floored here; below it a sample is
/// reconstructed from too little window mass to be trusted.
inline constexpr double kWindowSumFloor = 1e-3;

/// Running overlap-add state shared by the offline and block-wise inverse STFT so
/// both accumulate in the same order.
class OverlapAdd {
 public:
  explicit OverlapAdd(const FramingConfig& cfg)
      : cfg_(cfg), window_(make_window(cfg.window, cfg.frame_size)), acc_(cfg.frame_size, 0.0), wsum_(cfg.frame_size, 0.0) {}

  /// Adds one synthesised frame; returns the `hop` samples that no later frame touches.
  std::vector<double> push(std::span<const cplx> bins) {
    const auto time = irfft(bins, cfg_.frame_size);
    for (std::size_t i = 0; i < cfg_.frame_size; ++i) {
      acc_[i] += time[i] * window_[i];
      wsum_[i] += window_[i] * window_[i];
    }
    std::vector<double> out(cfg_.hop);
    for (std::size_t i = 0; i < cfg_.hop; ++i) out[i] = acc_[i] / std::max(wsum_[i], kWindowSumFloor);
    shift();
    return out;
  }

  /// Emits the remaining overlapped tail (frame_size - hop samples) after the last frame.
  std::vector<double> flush() const {
    std::vector<double> out(cfg_.frame_size - cfg_.hop);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = acc_[i] / std::max(wsum_[i], kWindowSumFloor);
    return out;
  }

 private:
  void shift() {
    std::rotate(acc_.begin(), acc_.begin() + static_cast<std::ptrdiff_t>(cfg_.hop), acc_.end());
    std::rotate(wsum_.begin(), wsum_.begin() + static_cast<std::ptrdiff_t>(cfg_.hop), wsum_.end());
    std::fill(acc_.end() - static_cast<std::ptrdiff_t>(cfg_.hop), acc_.end(), 0.0);
    std::fill(wsum_.end() - static_cast<std::ptrdiff_t>(cfg_.hop), wsum_.end(), 0.0);
  }

  FramingConfig cfg_;
  std::vector<double> window_;
  std::vector<double> acc_;
  std::vector<double> wsum_;
};

/// Weighted overlap-add inverse. Output length equals the analysed clip length;
/// samples past the last full frame are zero.
inline AudioClip istft(const Spectrogram& spec) {
  spec.framing.validate();
  if (spec.n_bins != spec.framing.n_bins() || spec.data.size() != spec.n_bins * spec.n_frames)
    fail(ErrorKind::data, "spectrogram metadata is inconsistent");
  if (spec.n_frames > 0 && spec.signal_length < (spec.n_frames - 1) * spec.framing.hop + spec.framing.frame_size)
    fail(ErrorKind::data, "spectrogram signal length is shorter than its frames");
  AudioClip out;
  out.sample_rate = spec.sample_rate;
  out.origin = spec.origin;
  out.samples.reserve(spec.signal_length);
  OverlapAdd ola(spec.framing);
  for (std::size_t t = 0; t < spec.n_frames; ++t) {
    const auto chunk = ola.push(spec.frame(t));
    out.samples.insert(out.samples.end(), chunk.begin(), chunk.end());
  }
  if (spec.n_frames > 0) {
    const auto tail = ola.flush();
    out.samples.insert(out.samples.end(), tail.begin(), tail.end());
  }
  out.samples.resize(spec.signal_length, 0.0);
  return out;
}

/// Range [begin, end) of samples reconstructed from two or more overlapping frames.
struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline SampleRange interior_range(std::size_t n_samples, const FramingConfig& cfg) {
  const std::size_t frames = frame_count(n_samples, cfg);
  if (frames < 3) return {0, 0};
  const std::size_t covered = (frames - 1) * cfg.hop + cfg.frame_size;
  return {cfg.frame_size, covered - cfg.frame_size};
}

struct Segment {
  AudioClip clip;
  std::size_t index = 0;
  double start = 0.0;
  double duration = 0.5;
};

inline constexpr double kSegmentSeconds = 0.5;

inline std::size_t segment_length(int sample_rate, double seconds = kSegmentSeconds) {
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

/// Consecutive non-overlapping segments; the partial tail is discarded.
inline std::vector<Segment> segment_clip(const AudioClip& clip, double seconds = kSegmentSeconds) {
  require(seconds > 0.0, "segment duration must be positive");
  const std::size_t len = segment_length(clip.sample_rate, seconds);
  if (len == 0 || clip.size() < len) fail(ErrorKind::invalid_argument, "clip is shorter than one segment");
  std::vector<Segment> out;
  const std::size_t count = clip.size() / len;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Segment seg;
    seg.index = i;
    seg.duration = seconds;
    seg.start = clip.origin + seconds * static_cast<double>(i);
    seg.clip.sample_rate = clip.sample_rate;
    seg.clip.origin = seg.start;
    seg.clip.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(i * len),
                            clip.samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
    out.push_back(std::move(seg));
  }
  return out;
}

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

}  // namespace lded
