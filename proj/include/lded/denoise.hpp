#pragma once

// Three-stage denoising chain: STFT-domain multi-band equalizer, Butterworth
// bandpass (second-order sections), and median-filter harmonic/percussive
// separation. Each stage is also exposed as frame/block primitives so the
// streaming processors run exactly the same arithmetic.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lded/error.hpp"
#include "lded/signal.hpp"

namespace lded {

// ---------------------------------------------------------------------------
// Equalizer

struct EqualizerBand {
  double low_hz = 0.0;
  double high_hz = 0.0;
  double gain_db = 0.0;
};

struct EqualizerProfile {
  std::vector<EqualizerBand> bands;

  /// Muted below 1 kHz and above 20 kHz, +6 dB in between.
  static EqualizerProfile default_for(int sample_rate) {
    const double nyq = 0.5 * sample_rate;
    return {{{0.0, 1000.0, -60.0}, {1000.0, 20000.0, 6.0}, {20000.0, nyq, -60.0}}};
  }

  static EqualizerProfile flat(int sample_rate, double gain_db = 0.0) {
    return {{{0.0, 0.5 * sample_rate, gain_db}}};
  }

  void validate(int sample_rate) const {
    const double nyq = 0.5 * sample_rate;
    require(!bands.empty(), "equalizer needs at least one band");
    require(bands.front().low_hz == 0.0, "equalizer bands must start at 0 Hz");
    for (std::size_t i = 0; i < bands.size(); ++i) {
      const auto& b = bands[i];
      require(std::isfinite(b.gain_db), "equalizer gain must be finite");
      require(b.low_hz < b.high_hz, "equalizer band must have low < high");
      require(b.high_hz <= nyq + 1e-9, "equalizer band extends past Nyquist");
      if (i > 0) require(b.low_hz == bands[i - 1].high_hz, "equalizer bands must be contiguous and non-overlapping");
    }
    require(std::abs(bands.back().high_hz - nyq) <= 1e-9, "equalizer bands must cover up to Nyquist");
  }

  /// Linear gain per STFT bin.
  std::vector<double> bin_gains(int sample_rate, std::size_t frame_size) const {
    validate(sample_rate);
    const std::size_t n_bins = frame_size / 2 + 1;
    std::vector<double> gains(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(frame_size);
      const EqualizerBand* band = &bands.back();
      for (const auto& b : bands)
        if (f >= b.low_hz && f < b.high_hz) {
          band = &b;
          break;
        }
      gains[k] = std::pow(10.0, band->gain_db / 20.0);
    }
    return gains;
  }
};

inline void equalize_frame(std::span<cplx> frame, std::span<const double> gains) {
  for (std::size_t k = 0; k < frame.size(); ++k) frame[k] *= gains[k];
}

inline AudioClip equalize(const AudioClip& clip, const EqualizerProfile& profile, const FramingConfig& framing = {}) {
  const auto gains = profile.bin_gains(clip.sample_rate, framing.frame_size);
  auto spec = stft(clip, framing);
  for (std::size_t t = 0; t < spec.n_frames; ++t) equalize_frame(spec.frame(t), gains);
  return istft(spec);
}

// ---------------------------------------------------------------------------
// Butterworth bandpass

enum class FilterMode { causal, zero_phase };

struct BandpassSpec {
  double low_hz = 1000.0;
  double high_hz = 21000.0;
  int order = 3;
  FilterMode mode = FilterMode::causal;

  void validate(int sample_rate) const {
    const double nyq = 0.5 * sample_rate;
    require(order >= 1, "bandpass order must be >= 1");
    require(low_hz > 0.0 && low_hz < high_hz, "bandpass edges must satisfy 0 < low < high");
    require(high_hz < nyq, "bandpass upper edge must be below Nyquist");
  }
};

/// b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct SecondOrderSection {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

/// Digital Butterworth bandpass by bilinear transform with prewarped edges.
/// Returns `order` sections; the overall gain lives in the first one.
inline std::vector<SecondOrderSection> design_butterworth_bandpass(const BandpassSpec& spec, int sample_rate) {
  spec.validate(sample_rate);
  const double fs2 = 2.0 * sample_rate;
  const double wl = fs2 * std::tan(std::numbers::pi * spec.low_hz / sample_rate);
  const double wh = fs2 * std::tan(std::numbers::pi * spec.high_hz / sample_rate);
  const double bw = wh - wl;
  const double w0sq = wl * wh;
  const int n = spec.order;

  std::vector<cplx> analog_poles;
  for (int m = -n + 1; m <= n - 1; m += 2) {
    const cplx p = -std::exp(cplx(0.0, std::numbers::pi * m / (2.0 * n)));
    const cplx half = p * (bw / 2.0);
    const cplx root = std::sqrt(half * half - w0sq);
    analog_poles.push_back(half + root);
    analog_poles.push_back(half - root);
  }

  // Prototype gain is 1; the lowpass-to-bandpass map scales it by bw^n. The n
  // analog zeros at s = 0 map to z = 1, the n at infinity to z = -1.
  cplx gain = std::pow(bw, n) * std::pow(fs2, n);
  std::vector<cplx> poles;
  for (const auto& s : analog_poles) {
    gain /= (fs2 - s);
    poles.push_back((fs2 + s) / (fs2 - s));
  }

  // Pair conjugates first, then leftover real poles.
  std::vector<std::pair<cplx, cplx>> pairs;
  std::vector<double> reals;
  std::vector<cplx> upper;
  for (const auto& p : poles) {
    if (std::abs(p.imag()) <= 1e-12 * std::max(1.0, std::abs(p)))
      reals.push_back(p.real());
    else if (p.imag() > 0)
      upper.push_back(p);
  }
  std::sort(upper.begin(), upper.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
  for (const auto& p : upper) pairs.emplace_back(p, std::conj(p));
  std::sort(reals.begin(), reals.end());
  if (reals.size() % 2 != 0) fail(ErrorKind::internal, "bandpass design produced an odd number of real poles");
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) pairs.emplace_back(cplx(reals[i]), cplx(reals[i + 1]));

  std::vector<SecondOrderSection> sos;
  for (const auto& [p1, p2] : pairs) {
    SecondOrderSection s;
    s.b0 = 1.0;
    s.b1 = 0.0;
    s.b2 = -1.0;
    s.a1 = -(p1 + p2).real();
    s.a2 = (p1 * p2).real();
    sos.push_back(s);
  }
  const double k = gain.real();
  sos.front().b0 *= k;
  sos.front().b1 *= k;
  sos.front().b2 *= k;
  return sos;
}

/// Complex frequency response of a cascade at `freq_hz`.
inline cplx sos_response(std::span<const SecondOrderSection> sos, double freq_hz, int sample_rate) {
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate;
  const cplx z1 = std::exp(cplx(0.0, -w));
  const cplx z2 = z1 * z1;
  cplx h(1.0, 0.0);
  for (const auto& s : sos) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

/// Stateful cascade in transposed direct form II. Feeding a signal in blocks
/// gives the same result as feeding it at once.
class SosFilter {
 public:
  explicit SosFilter(std::vector<SecondOrderSection> sos) : sos_(std::move(sos)), state_(sos_.size(), {0.0, 0.0}) {}

  void process(std::span<double> x) {
    for (std::size_t j = 0; j < sos_.size(); ++j) {
      const auto& s = sos_[j];
      auto& [z1, z2] = state_[j];
      for (double& v : x) {
        const double in = v;
        const double out = s.b0 * in + z1;
        z1 = s.b1 * in - s.a1 * out + z2;
        z2 = s.b2 * in - s.a2 * out;
        v = out;
      }
    }
  }

  void reset() { std::fill(state_.begin(), state_.end(), std::pair{0.0, 0.0}); }

 private:
  std::vector<SecondOrderSection> sos_;
  std::vector<std::pair<double, double>> state_;
};

inline AudioClip bandpass(const AudioClip& clip, const BandpassSpec& spec) {
  clip.validate();
  auto sos = design_butterworth_bandpass(spec, clip.sample_rate);
  AudioClip out = clip;
  SosFilter forward(sos);
  forward.process(out.samples);
  if (spec.mode == FilterMode::zero_phase) {
    std::reverse(out.samples.begin(), out.samples.end());
    SosFilter backward(sos);
    backward.process(out.samples);
    std::reverse(out.samples.begin(), out.samples.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Harmonic / percussive separation

struct HpssConfig {
  std::size_t kernel_time = 17;
  std::size_t kernel_freq = 17;
  double power = 2.0;
  double eps = 1e-10;
  FramingConfig framing;

  void validate() const {
    framing.validate();
    require(kernel_time >= 3 && kernel_time % 2 == 1, "HPSS time kernel must be odd and >= 3");
    require(kernel_freq >= 3 && kernel_freq % 2 == 1, "HPSS frequency kernel must be odd and >= 3");
    require(power > 0.0, "HPSS mask power must be positive");
  }
};

namespace detail {

inline double median_of(std::vector<double>& buf) {
  const auto mid = buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2);
  std::nth_element(buf.begin(), mid, buf.end());
  return *mid;
}

}  // namespace detail

inline std::vector<double> magnitudes(std::span<const cplx> frame) {
  std::vector<double> m(frame.size());
  for (std::size_t k = 0; k < frame.size(); ++k) m[k] = std::abs(frame[k]);
  return m;
}

/// Median along frequency with edge-replicated padding.
inline std::vector<double> frequency_median(std::span<const double> mags, std::size_t kernel) {
  const auto n = static_cast<std::ptrdiff_t>(mags.size());
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> out(mags.size());
  std::vector<double> buf(kernel);
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    for (std::ptrdiff_t j = -half; j <= half; ++j) buf[static_cast<std::size_t>(j + half)] = mags[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k + j, 0, n - 1))];
    out[static_cast<std::size_t>(k)] = detail::median_of(buf);
  }
  return out;
}

/// Median along time; `context` holds kernel_time frames centred on the target
/// frame, already edge-replicated by the caller.
inline std::vector<double> time_median(std::span<const std::vector<double>* const> context) {
  const std::size_t n_bins = context.front()->size();
  std::vector<double> out(n_bins);
  std::vector<double> buf(context.size());
  for (std::size_t k = 0; k < n_bins; ++k) {
    for (std::size_t j = 0; j < context.size(); ++j) buf[j] = (*context[j])[k];
    out[k] = detail::median_of(buf);
  }
  return out;
}

/// Soft masks; harmonic + percussive mask sum to one wherever H^p + P^p > 0.
inline void split_frame(std::span<const cplx> frame, std::span<const double> harmonic_env, std::span<const double> percussive_env,
                        const HpssConfig& cfg, std::span<cplx> harmonic, std::span<cplx> percussive) {
  for (std::size_t k = 0; k < frame.size(); ++k) {
    const double h = std::pow(harmonic_env[k], cfg.power);
    const double p = std::pow(percussive_env[k], cfg.power);
    const double denom = h + p + cfg.eps;
    harmonic[k] = frame[k] * (h / denom);
    percussive[k] = frame[k] * (p / denom);
  }
}

struct HpssResult {
  AudioClip harmonic;
  AudioClip percussive;
};

inline HpssResult hpss(const AudioClip& clip, const HpssConfig& cfg) {
  cfg.validate();
  const auto spec = stft(clip, cfg.framing);
  const std::size_t frames = spec.n_frames;
  std::vector<std::vector<double>> mags(frames);
  for (std::size_t t = 0; t < frames; ++t) mags[t] = magnitudes(spec.frame(t));

  Spectrogram harm = spec;
  Spectrogram perc = spec;
  const auto half = static_cast<std::ptrdiff_t>(cfg.kernel_time / 2);
  std::vector<const std::vector<double>*> context(cfg.kernel_time);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::ptrdiff_t j = -half; j <= half; ++j) {
      const auto idx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) + j, 0, static_cast<std::ptrdiff_t>(frames) - 1);
      context[static_cast<std::size_t>(j + half)] = &mags[static_cast<std::size_t>(idx)];
    }
    const auto h_env = time_median(context);
    const auto p_env = frequency_median(mags[t], cfg.kernel_freq);
    split_frame(spec.frame(t), h_env, p_env, cfg, harm.frame(t), perc.frame(t));
  }
  return {istft(harm), istft(perc)};
}

// ---------------------------------------------------------------------------
// Chain

struct DenoiseConfig {
  EqualizerProfile equalizer = EqualizerProfile::default_for(44100);
  BandpassSpec bandpass;
  HpssConfig hpss;
  FramingConfig framing;  // equalizer STFT framing

  static DenoiseConfig defaults(int sample_rate) {
    DenoiseConfig c;
    c.equalizer = EqualizerProfile::default_for(sample_rate);
    return c;
  }

  void validate(int sample_rate) const {
    equalizer.validate(sample_rate);
    bandpass.validate(sample_rate);
    hpss.validate();
    framing.validate();
  }
};

struct DenoiseStages {
  AudioClip raw;
  AudioClip equalized;
  AudioClip bandpassed;
  AudioClip denoised;  // percussive component of `bandpassed`
};

inline DenoiseStages denoise_pipeline(const AudioClip& clip, const DenoiseConfig& cfg) {
  clip.validate();
  cfg.validate(clip.sample_rate);
  DenoiseStages out;
  out.raw = clip;
  out.equalized = equalize(clip, cfg.equalizer, cfg.framing);
  out.bandpassed = bandpass(out.equalized, cfg.bandpass);
  out.denoised = hpss(out.bandpassed, cfg.hpss).percussive;
  return out;
}

// ---------------------------------------------------------------------------
// JSON config: {"equalizer": {"bands": [[lo, hi, db], ...]},
//               "bandpass": {"low", "high", "order", "mode"},
//               "hpss": {"kernel_time", "kernel_freq", "power"}}

inline nlohmann::json to_json(const DenoiseConfig& c) {
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : c.equalizer.bands) bands.push_back({b.low_hz, b.high_hz, b.gain_db});
  return {
      {"equalizer", {{"bands", bands}}},
      {"bandpass",
       {{"low", c.bandpass.low_hz},
        {"high", c.bandpass.high_hz},
        {"order", c.bandpass.order},
        {"mode", c.bandpass.mode == FilterMode::causal ? "causal" : "zero_phase"}}},
      {"hpss", {{"kernel_time", c.hpss.kernel_time}, {"kernel_freq", c.hpss.kernel_freq}, {"power", c.hpss.power}}},
  };
}

/// Missing keys keep their defaults; bands must reach the Nyquist of `sample_rate`.
inline DenoiseConfig denoise_config_from_json(const nlohmann::json& j, int sample_rate) {
  DenoiseConfig c = DenoiseConfig::defaults(sample_rate);
  try {
    if (j.contains("equalizer") && j["equalizer"].contains("bands")) {
      c.equalizer.bands.clear();
      for (const auto& b : j["equalizer"]["bands"]) {
        if (!b.is_array() || b.size() != 3) fail(ErrorKind::data, "equalizer band must be [low, high, gain_db]");
        c.equalizer.bands.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>()});
      }
    }
    if (j.contains("bandpass")) {
      const auto& b = j["bandpass"];
      c.bandpass.low_hz = b.value("low", c.bandpass.low_hz);
      c.bandpass.high_hz = b.value("high", c.bandpass.high_hz);
      c.bandpass.order = b.value("order", c.bandpass.order);
      const auto mode = b.value("mode", std::string("causal"));
      if (mode == "causal")
        c.bandpass.mode = FilterMode::causal;
      else if (mode == "zero_phase" || mode == "zerophase")
        c.bandpass.mode = FilterMode::zero_phase;
      else
        fail(ErrorKind::data, "unknown bandpass mode: " + mode);
    }
    if (j.contains("hpss")) {
      const auto& h = j["hpss"];
      c.hpss.kernel_time = h.value("kernel_time", c.hpss.kernel_time);
      c.hpss.kernel_freq = h.value("kernel_freq", c.hpss.kernel_freq);
      c.hpss.power = h.value("power", c.hpss.power);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed denoise config: ") + e.what());
  }
  c.validate(sample_rate);
  return c;
}

}  // namespace lded
