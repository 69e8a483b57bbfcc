#pragma once

// Seeded synthetic deposition corpora: class-conditional process sound, machine
// noise, a scan-path position stream and a labelled segment manifest.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lded/error.hpp"
#include "lded/fft.hpp"
#include "lded/models/dataset.hpp"
#include "lded/random.hpp"
#include "lded/signal.hpp"
#include "lded/wav.hpp"

namespace lded {

struct BandPower {
  double low_hz = 0.0;
  double high_hz = 0.0;
  double power = 0.0;  // relative
};

struct BurstSpec {
  double rate = 0.0;        // bursts per second (Poisson)
  double duration = 0.03;   // seconds
  double gain = 6.0;        // peak amplitude relative to the base RMS
  double low_hz = 1000.0;
  double high_hz = 8000.0;
};

struct RegimeModel {
  int label = 0;
  std::vector<BandPower> bands;
  double am_depth = 0.0;
  double am_rate = 0.0;  // Hz
  BurstSpec bursts;
  double level = 0.1;    // RMS of the banded base before modulation

  void validate(int sample_rate) const {
    if (bands.empty()) fail(ErrorKind::invalid_argument, "regime has an empty band profile");
    for (const auto& b : bands) {
      require(b.power >= 0.0, "band power must be non-negative");
      require(b.low_hz >= 0.0 && b.high_hz > b.low_hz && b.high_hz <= 0.5 * sample_rate, "band edges must satisfy 0 <= low < high <= nyquist");
    }
    require(am_depth >= 0.0 && am_depth <= 1.0, "AM depth must lie in [0, 1]");
    require(am_rate >= 0.0, "AM rate must be non-negative");
    require(bursts.rate >= 0.0, "burst rate must be non-negative");
    require(bursts.duration > 0.0 && bursts.gain >= 0.0, "burst duration must be positive and gain non-negative");
    require(level >= 0.0, "level must be non-negative");
  }

  static RegimeModel defect_free() { return {0, {{5000, 10000, 1.0}, {1000, 5000, 0.2}}, 0.1, 3.0, {}, 0.1}; }
  static RegimeModel crack() {
    auto m = defect_free();
    m.label = 1;
    m.bursts = {3.0, 0.03, 6.0, 1000.0, 8000.0};
    return m;
  }
  static RegimeModel keyhole() { return {2, {{0, 5000, 1.0}, {5000, 10000, 0.3}}, 0.5, 8.0, {}, 0.1}; }
  static std::vector<RegimeModel> defaults() { return {defect_free(), crack(), keyhole()}; }
};

struct NoiseModel {
  double hum_weight = 1.0;        // relative power of the low-frequency machine component
  double broadband_weight = 0.15; // relative power of the white gas/powder floor
  double hum_f0 = 120.0;          // fundamental of the tonal machine hum, Hz
  double hum_cutoff = 1000.0;     // 1/f-shaped noise and harmonics stay below this
  double hum_tonal_fraction = 0.5;
  double hum_swing_db = 0.0;      // slow level wander of the hum, peak dB
  double hum_swing_rate = 0.25;   // Hz
  double whine_weight = 0.3;      // relative power of drifting motor/feeder tones above the hum
  std::size_t whine_tones = 4;
  double whine_low = 1500.0;      // tone frequencies are drawn per file in [low, high)
  double whine_high = 12000.0;
  double whine_drift = 0.02;      // relative frequency wander
  double whine_drift_rate = 0.2;  // Hz
  double clank_weight = 0.0;      // relative power of low-frequency mechanical impacts (below the hum cutoff)
  double clank_rate = 2.0;        // impacts per second
  double clank_decay = 0.04;      // seconds

  void validate() const {
    require(hum_weight >= 0.0 && broadband_weight >= 0.0 && whine_weight >= 0.0, "noise weights must be non-negative");
    require(whine_low > 0.0 && whine_high > whine_low, "whine band must satisfy 0 < low < high");
    require(whine_drift >= 0.0 && whine_drift < 1.0 && whine_drift_rate >= 0.0, "whine drift must lie in [0, 1)");
    require(hum_f0 > 0.0 && hum_cutoff > hum_f0, "hum fundamental must be positive and below the cutoff");
    require(hum_tonal_fraction >= 0.0 && hum_tonal_fraction <= 1.0, "tonal fraction must lie in [0, 1]");
    require(hum_swing_db >= 0.0 && hum_swing_rate >= 0.0, "hum swing must be non-negative");
    require(clank_weight >= 0.0 && clank_rate >= 0.0 && clank_decay > 0.0, "clank parameters must be non-negative");
  }
};

namespace detail {

/// Unit-power Gaussian noise restricted to [low, high) Hz, shaped by `gain(f)`.
template <typename Gain>
std::vector<double> shaped_noise(std::size_t n, int sample_rate, Rng& rng, double low, double high, Gain gain) {
  const std::size_t N = next_power_of_two(std::max<std::size_t>(n, 2));
  std::vector<double> white(N);
  for (auto& v : white) v = rng.normal();
  auto spec = rfft(white);
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(N);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    spec[k] *= (f >= low && f < high) ? gain(f) : 0.0;
  }
  auto out = irfft(spec, N);
  out.resize(n);
  const double p = mean_power(out);
  if (p > 0.0) {
    const double s = 1.0 / std::sqrt(p);
    for (auto& v : out) v *= s;
  }
  return out;
}

inline std::vector<double> band_noise(std::size_t n, int sample_rate, Rng& rng, double low, double high) {
  return shaped_noise(n, sample_rate, rng, low, high, [](double) { return 1.0; });
}

}  // namespace detail

inline std::size_t samples_for(double seconds, int sample_rate) {
  require(seconds > 0.0 && std::isfinite(seconds), "duration must be positive");
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

/// Banded Gaussian noise at the profile's relative powers, amplitude-modulated,
/// plus Poisson-timed exponentially decaying bursts when the model has any.
inline AudioClip synth_regime(const RegimeModel& model, double duration, int sample_rate, std::uint64_t seed) {
  model.validate(sample_rate);
  const std::size_t n = samples_for(duration, sample_rate);
  Rng rng(seed);
  std::vector<double> base(n, 0.0);
  double total_power = 0.0;
  for (const auto& b : model.bands) total_power += b.power;
  if (total_power > 0.0) {
    for (const auto& b : model.bands) {
      auto part = detail::band_noise(n, sample_rate, rng, b.low_hz, b.high_hz);
      const double g = std::sqrt(b.power / total_power) * model.level;
      for (std::size_t i = 0; i < n; ++i) base[i] += g * part[i];
    }
  }
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double sr = static_cast<double>(sample_rate);
  for (std::size_t i = 0; i < n; ++i)
    base[i] *= 1.0 + model.am_depth * std::sin(2.0 * std::numbers::pi * model.am_rate * static_cast<double>(i) / sr + phase);

  if (model.bursts.rate > 0.0 && model.bursts.gain > 0.0) {
    auto carrier = detail::band_noise(n, sample_rate, rng, model.bursts.low_hz, model.bursts.high_hz);
    std::vector<double> env(n, 0.0);
    const double tau = model.bursts.duration / 3.0;
    const auto len = static_cast<std::size_t>(std::ceil(model.bursts.duration * sr));
    for (double t = rng.exponential(model.bursts.rate); t < duration; t += rng.exponential(model.bursts.rate)) {
      const auto start = static_cast<std::size_t>(t * sr);
      for (std::size_t j = 0; j < len && start + j < n; ++j) env[start + j] += std::exp(-static_cast<double>(j) / sr / tau);
    }
    const double amp = model.bursts.gain * model.level;
    for (std::size_t i = 0; i < n; ++i) base[i] += amp * env[i] * carrier[i];
  }
  return {std::move(base), sample_rate, 0.0};
}

/// Machine hum (harmonics of f0 plus 1/f-shaped noise below the cutoff) and a
/// white broadband floor, at their relative weights. Unit scale is arbitrary;
/// `mix` sets the level.
inline AudioClip synth_noise(const NoiseModel& model, double duration, int sample_rate, std::uint64_t seed) {
  model.validate();
  const std::size_t n = samples_for(duration, sample_rate);
  Rng rng(seed);
  std::vector<double> out(n, 0.0);
  const double sr = static_cast<double>(sample_rate);
  if (model.hum_weight > 0.0) {
    std::vector<double> hum(n, 0.0);
    const double tonal = model.hum_tonal_fraction;
    if (tonal > 0.0) {
      std::vector<double> tones(n, 0.0);
      for (int h = 1; h * model.hum_f0 < model.hum_cutoff; ++h) {
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double f = h * model.hum_f0;
        for (std::size_t i = 0; i < n; ++i) tones[i] += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / sr + phase) / h;
      }
      const double p = mean_power(tones);
      for (std::size_t i = 0; i < n; ++i) hum[i] += std::sqrt(tonal / p) * tones[i];
    }
    if (tonal < 1.0) {
      auto pink = detail::shaped_noise(n, sample_rate, rng, 20.0, model.hum_cutoff, [](double f) { return 1.0 / std::sqrt(f); });
      for (std::size_t i = 0; i < n; ++i) hum[i] += std::sqrt(1.0 - tonal) * pink[i];
    }
    if (model.hum_swing_db > 0.0) {
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double db = model.hum_swing_db * std::sin(2.0 * std::numbers::pi * model.hum_swing_rate * static_cast<double>(i) / sr + phase);
        hum[i] *= std::pow(10.0, db / 20.0);
      }
    }
    const double p = mean_power(hum);
    if (p > 0.0)
      for (std::size_t i = 0; i < n; ++i) out[i] += std::sqrt(model.hum_weight / p) * hum[i];
  }
  if (model.whine_weight > 0.0 && model.whine_tones > 0) {
    std::vector<double> whine(n, 0.0);
    for (std::size_t k = 0; k < model.whine_tones; ++k) {
      const double f0 = rng.uniform(model.whine_low, model.whine_high);
      const double amp = rng.uniform(0.5, 1.0);
      const double drift_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        const double f = f0 * (1.0 + model.whine_drift * std::sin(2.0 * std::numbers::pi * model.whine_drift_rate * t + drift_phase));
        whine[i] += amp * std::sin(phase);
        phase += 2.0 * std::numbers::pi * f / sr;
        if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
      }
    }
    const double p = mean_power(whine);
    if (p > 0.0)
      for (std::size_t i = 0; i < n; ++i) out[i] += std::sqrt(model.whine_weight / p) * whine[i];
  }
  if (model.clank_weight > 0.0 && model.clank_rate > 0.0) {
    auto carrier = detail::band_noise(n, sample_rate, rng, 20.0, model.hum_cutoff);
    std::vector<double> clank(n, 0.0);
    const auto len = static_cast<std::size_t>(std::ceil(5.0 * model.clank_decay * sr));
    for (double t = rng.exponential(model.clank_rate); t < duration; t += rng.exponential(model.clank_rate)) {
      const auto start = static_cast<std::size_t>(t * sr);
      const double a = rng.uniform(0.5, 1.5);
      for (std::size_t j = 0; j < len && start + j < n; ++j) clank[start + j] += a * std::exp(-static_cast<double>(j) / sr / model.clank_decay);
    }
    for (std::size_t i = 0; i < n; ++i) clank[i] *= carrier[i];
    const double p = mean_power(clank);
    if (p > 0.0)
      for (std::size_t i = 0; i < n; ++i) out[i] += std::sqrt(model.clank_weight / p) * clank[i];
  }
  if (model.broadband_weight > 0.0) {
    const double g = std::sqrt(model.broadband_weight);
    for (auto& v : out) v += g * rng.normal();
  }
  return {std::move(out), sample_rate, 0.0};
}

/// Rescales `noise` so that 10 log10(P_signal / P_noise) = snr_db and adds it.
/// An infinite SNR returns the signal unchanged.
inline AudioClip mix(const AudioClip& signal, const AudioClip& noise, double snr_db) {
  if (signal.sample_rate != noise.sample_rate) fail(ErrorKind::invalid_argument, "mix: sample rates differ");
  if (signal.size() != noise.size()) fail(ErrorKind::invalid_argument, "mix: lengths differ");
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) fail(ErrorKind::invalid_argument, "mix: SNR must be a number above -inf");
  if (snr_db == std::numeric_limits<double>::infinity()) return signal;
  const double ps = mean_power(signal.samples);
  const double pn = mean_power(noise.samples);
  if (!(ps > 0.0) || !(pn > 0.0)) fail(ErrorKind::invalid_argument, "mix: zero-power operand");
  const double scale = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  AudioClip out = signal;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += scale * noise.samples[i];
  return out;
}

/// Adds noise at `snr_db` relative to a fixed `reference_power` (the noise
/// level then does not depend on what the process is doing); a non-positive
/// reference falls back to the signal's own power, as in `mix`. Silent noise
/// or an infinite SNR leaves the signal unchanged.
inline AudioClip add_noise(const AudioClip& signal, const AudioClip& noise, double snr_db, double reference_power) {
  if (reference_power <= 0.0) {
    if (std::isinf(snr_db) && snr_db > 0) return signal;
    if (mean_power(noise.samples) == 0.0) return signal;
    return mix(signal, noise, snr_db);
  }
  if (signal.size() != noise.size() || signal.sample_rate != noise.sample_rate) fail(ErrorKind::invalid_argument, "add_noise: clip mismatch");
  const double pn = mean_power(noise.samples);
  if (std::isinf(snr_db) && snr_db > 0) return signal;
  if (std::isnan(snr_db) || std::isinf(snr_db)) fail(ErrorKind::invalid_argument, "add_noise: SNR must be a number above -inf");
  if (pn == 0.0) return signal;
  const double scale = std::sqrt(reference_power / (pn * std::pow(10.0, snr_db / 10.0)));
  AudioClip out = signal;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += scale * noise.samples[i];
  return out;
}

/// Nominal mean power of a regime's base sound (bands at `level`, sinusoidal AM).
inline double nominal_power(const RegimeModel& r) { return r.level * r.level * (1.0 + r.am_depth * r.am_depth / 2.0); }

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 lerp(const Vec3& a, const Vec3& b, double u) {
  return {a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u, a.z + (b.z - a.z) * u};
}

/// Position at fraction `u` of a polyline's arc length (constant speed).
inline Vec3 along_path(std::span<const Vec3> path, double u) {
  if (path.empty()) fail(ErrorKind::invalid_argument, "empty scan path");
  if (path.size() == 1) return path.front();
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < path.size(); ++i) {
    const double dx = path[i].x - path[i - 1].x, dy = path[i].y - path[i - 1].y, dz = path[i].z - path[i - 1].z;
    cum.push_back(cum.back() + std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  if (cum.back() <= 0.0) return path.front();
  const double target = std::clamp(u, 0.0, 1.0) * cum.back();
  std::size_t i = 1;
  while (i + 1 < cum.size() && cum[i] < target) ++i;
  const double span = cum[i] - cum[i - 1];
  return lerp(path[i - 1], path[i], span > 0.0 ? (target - cum[i - 1]) / span : 0.0);
}

struct Layer {
  int label = 0;
  double duration = 10.0;   // seconds of laser-on deposition
  std::vector<Vec3> path;   // scan path traversed at constant speed over `duration`
  double dwell_after = 0.0; // laser-off pause before the next layer, seconds
};

struct ProcessScript {
  std::vector<Layer> layers;

  void validate() const {
    if (layers.empty()) fail(ErrorKind::invalid_argument, "process script has no layers");
    for (const auto& l : layers) {
      require(l.duration > 0.0 && std::isfinite(l.duration), "layer duration must be positive");
      require(l.dwell_after >= 0.0, "dwell time must be non-negative");
      require(!l.path.empty(), "layer needs a scan path");
      require(l.label >= 0 && l.label < kNumClasses, "layer label out of range");
    }
  }

  double total_duration() const {
    double t = 0.0;
    for (const auto& l : layers) t += l.duration + l.dwell_after;
    return t;
  }
};

struct PositionSample {
  double t = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
};

struct ManifestSegment {
  double start_ms = 0.0;
  double end_ms = 0.0;
  int label = 0;
  Vec3 position;
  bool straddles = false;  // the segment crosses a regime boundary; labelled by its midpoint
  std::size_t layer = 0;   // layer active at the midpoint
};

struct ManifestEntry {
  std::string wav;
  std::string positions;
  int sample_rate = 44100;
  double duration = 0.0;
  std::vector<ManifestSegment> segments;
};

struct DatasetManifest {
  std::vector<ManifestEntry> files;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  double snr_db = 0.0;

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(kNumClasses, 0);
    for (const auto& f : files)
      for (const auto& s : f.segments) ++c[static_cast<std::size_t>(s.label)];
    return c;
  }
  std::size_t segment_count() const {
    std::size_t n = 0;
    for (const auto& f : files) n += f.segments.size();
    return n;
  }
};

inline constexpr std::string_view kManifestSchema = "lded-manifest/1";

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : f.segments)
      segs.push_back({{"start_ms", s.start_ms},
                      {"end_ms", s.end_ms},
                      {"label", s.label},
                      {"position", {s.position.x, s.position.y, s.position.z}},
                      {"straddles", s.straddles},
                      {"layer", s.layer}});
    files.push_back({{"wav", f.wav}, {"positions", f.positions}, {"sample_rate", f.sample_rate}, {"duration", f.duration}, {"segments", segs}});
  }
  return {{"schema", kManifestSchema},  {"seed", m.seed},           {"config_hash", m.config_hash},
          {"snr_db", m.snr_db},         {"class_names", kClassNames}, {"class_counts", m.class_counts()},
          {"files", files}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != kManifestSchema) fail(ErrorKind::data, "unsupported manifest schema");
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::uint64_t>();
    m.snr_db = j.at("snr_db").is_null() ? std::numeric_limits<double>::infinity() : j.at("snr_db").get<double>();
    for (const auto& fj : j.at("files")) {
      ManifestEntry f;
      f.wav = fj.at("wav").get<std::string>();
      f.positions = fj.value("positions", std::string());
      f.sample_rate = fj.at("sample_rate").get<int>();
      f.duration = fj.at("duration").get<double>();
      for (const auto& sj : fj.at("segments")) {
        ManifestSegment s;
        s.start_ms = sj.at("start_ms").get<double>();
        s.end_ms = sj.at("end_ms").get<double>();
        s.label = sj.at("label").get<int>();
        if (s.label < 0 || s.label >= kNumClasses) fail(ErrorKind::data, "manifest label out of range");
        const auto p = sj.at("position").get<std::vector<double>>();
        if (p.size() != 3) fail(ErrorKind::data, "manifest position must have three coordinates");
        s.position = {p[0], p[1], p[2]};
        s.straddles = sj.value("straddles", false);
        s.layer = sj.value("layer", std::size_t{0});
        f.segments.push_back(s);
      }
      m.files.push_back(std::move(f));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed manifest: ") + e.what());
  }
}

struct RenderedFile {
  AudioClip audio;       // mixed signal + noise, float32-representable
  std::vector<PositionSample> positions;
  ManifestEntry entry;
};

inline constexpr double kPositionRate = 30.0;

namespace detail {

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Tool position at time t: along the layer path while depositing, moving
/// linearly from one layer's end to the next layer's start during dwell.
inline Vec3 script_position(const ProcessScript& s, double t) {
  double t0 = 0.0;
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    if (t < t0 + l.duration || i + 1 == s.layers.size()) {
      if (t < t0 + l.duration) return along_path(l.path, (t - t0) / l.duration);
      return l.path.back();
    }
    const double dwell_end = t0 + l.duration + l.dwell_after;
    if (t < dwell_end) {
      const double u = (t - t0 - l.duration) / l.dwell_after;
      return lerp(l.path.back(), s.layers[i + 1].path.front(), u);
    }
    t0 = dwell_end;
  }
  return s.layers.back().path.back();
}

}  // namespace detail

/// Renders one script into a single file: each layer's regime sound, silence
/// during dwell, noise over the whole file at `snr_db`, and 500 ms segments
/// tiling every continuous laser-on run. Segments are labelled by the layer
/// active at their midpoint.
inline RenderedFile render_script(const ProcessScript& script, std::span<const RegimeModel> regimes, const NoiseModel& noise,
                                  double snr_db, int sample_rate, std::uint64_t seed, double reference_power = 0.0) {
  script.validate();
  Rng root(seed);
  const double sr = static_cast<double>(sample_rate);
  std::vector<double> signal;
  struct Run {
    std::size_t begin, end;  // samples
  };
  std::vector<Run> runs;
  std::vector<std::pair<std::size_t, std::size_t>> layer_spans;  // sample ranges
  for (std::size_t li = 0; li < script.layers.size(); ++li) {
    const auto& l = script.layers[li];
    const auto it = std::find_if(regimes.begin(), regimes.end(), [&](const RegimeModel& r) { return r.label == l.label; });
    if (it == regimes.end()) fail(ErrorKind::invalid_argument, "no regime model for label " + std::to_string(l.label));
    const auto clip = synth_regime(*it, l.duration, sample_rate, root.fork(2 * li).next());
    const std::size_t begin = signal.size();
    signal.insert(signal.end(), clip.samples.begin(), clip.samples.end());
    layer_spans.emplace_back(begin, signal.size());
    if (!runs.empty() && runs.back().end == begin)
      runs.back().end = signal.size();
    else
      runs.push_back({begin, signal.size()});
    if (l.dwell_after > 0.0) signal.resize(signal.size() + samples_for(l.dwell_after, sample_rate), 0.0);
  }
  AudioClip sig{std::move(signal), sample_rate, 0.0};
  const auto nz = synth_noise(noise, sig.duration(), sample_rate, root.fork(0xA0153).next());
  RenderedFile out;
  out.audio = add_noise(sig, nz, snr_db, reference_power);
  for (auto& v : out.audio.samples) v = detail::round_f32(v);

  out.entry.sample_rate = sample_rate;
  out.entry.duration = out.audio.duration();
  const std::size_t seg_len = segment_length(sample_rate);
  for (const auto& run : runs) {
    for (std::size_t s = run.begin; s + seg_len <= run.end; s += seg_len) {
      ManifestSegment ms;
      ms.start_ms = 1000.0 * static_cast<double>(s) / sr;
      ms.end_ms = 1000.0 * static_cast<double>(s + seg_len) / sr;
      const double mid = static_cast<double>(s) + static_cast<double>(seg_len) / 2.0;
      std::size_t first = layer_spans.size(), last = 0, at_mid = 0;
      for (std::size_t li = 0; li < layer_spans.size(); ++li) {
        const auto [b, e] = layer_spans[li];
        if (b < s + seg_len && s < e) {
          first = std::min(first, li);
          last = std::max(last, li);
        }
        if (static_cast<double>(b) <= mid && mid < static_cast<double>(e)) at_mid = li;
      }
      ms.layer = at_mid;
      ms.label = script.layers[at_mid].label;
      for (std::size_t li = first; li <= last && li < script.layers.size(); ++li)
        if (script.layers[li].label != ms.label) ms.straddles = true;
      ms.position = detail::script_position(script, mid / sr);
      out.entry.segments.push_back(ms);
    }
  }
  const auto n_pos = static_cast<std::size_t>(std::floor(out.audio.duration() * kPositionRate)) + 1;
  for (std::size_t k = 0; k < n_pos; ++k) {
    const double t = static_cast<double>(k) / kPositionRate;
    const auto p = detail::script_position(script, t);
    out.positions.push_back({t, p.x, p.y, p.z});
  }
  return out;
}

struct CorpusConfig {
  int sample_rate = 44100;
  double snr_db = 5.0;
  double layer_seconds = 12.5;
  double dwell_seconds = 2.0;
  std::size_t layers_per_file = 4;
  std::array<std::size_t, kNumClasses> layers_per_class = {26, 14, 12};  // 650 / 350 / 300 segments
  double layer_length_mm = 60.0;
  double layer_height_mm = 0.6;
  std::vector<RegimeModel> regimes = RegimeModel::defaults();
  NoiseModel noise;
  bool shuffle_layers = true;  // seeded permutation of the layer order before it is cut into files

  void validate() const {
    require(sample_rate > 0, "sample rate must be positive");
    require(layer_seconds >= kSegmentSeconds, "layers must last at least one segment");
    require(dwell_seconds >= 0.0, "dwell must be non-negative");
    require(layers_per_file >= 1, "need at least one layer per file");
    for (const auto& r : regimes) r.validate(sample_rate);
    noise.validate();
  }

  std::size_t segments_per_layer() const { return static_cast<std::size_t>(std::floor(layer_seconds / kSegmentSeconds + 1e-9)); }
};

inline nlohmann::json to_json(const RegimeModel& r) {
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : r.bands) bands.push_back({b.low_hz, b.high_hz, b.power});
  return {{"label", r.label},
          {"bands", bands},
          {"am_depth", r.am_depth},
          {"am_rate", r.am_rate},
          {"level", r.level},
          {"bursts",
           {{"rate", r.bursts.rate}, {"duration", r.bursts.duration}, {"gain", r.bursts.gain}, {"low_hz", r.bursts.low_hz}, {"high_hz", r.bursts.high_hz}}}};
}

inline RegimeModel regime_from_json(const nlohmann::json& j) {
  RegimeModel r;
  r.label = j.at("label").get<int>();
  for (const auto& b : j.at("bands")) {
    const auto v = b.get<std::vector<double>>();
    if (v.size() != 3) fail(ErrorKind::data, "band must be [low_hz, high_hz, power]");
    r.bands.push_back({v[0], v[1], v[2]});
  }
  r.am_depth = j.value("am_depth", 0.0);
  r.am_rate = j.value("am_rate", 0.0);
  r.level = j.value("level", 0.1);
  if (j.contains("bursts")) {
    const auto& b = j["bursts"];
    r.bursts = {b.value("rate", 0.0), b.value("duration", 0.03), b.value("gain", 6.0), b.value("low_hz", 1000.0), b.value("high_hz", 8000.0)};
  }
  return r;
}

inline nlohmann::json to_json(const NoiseModel& n) {
  return {{"hum_weight", n.hum_weight},       {"broadband_weight", n.broadband_weight}, {"hum_f0", n.hum_f0},
          {"hum_cutoff", n.hum_cutoff},       {"hum_tonal_fraction", n.hum_tonal_fraction}, {"hum_swing_db", n.hum_swing_db},
          {"hum_swing_rate", n.hum_swing_rate}, {"whine_weight", n.whine_weight},   {"whine_tones", n.whine_tones},
          {"whine_low", n.whine_low},         {"whine_high", n.whine_high},     {"whine_drift", n.whine_drift},
          {"whine_drift_rate", n.whine_drift_rate}, {"clank_weight", n.clank_weight}, {"clank_rate", n.clank_rate},
          {"clank_decay", n.clank_decay}};
}

inline NoiseModel noise_from_json(const nlohmann::json& j) {
  NoiseModel n;
  n.hum_weight = j.value("hum_weight", n.hum_weight);
  n.broadband_weight = j.value("broadband_weight", n.broadband_weight);
  n.hum_f0 = j.value("hum_f0", n.hum_f0);
  n.hum_cutoff = j.value("hum_cutoff", n.hum_cutoff);
  n.hum_tonal_fraction = j.value("hum_tonal_fraction", n.hum_tonal_fraction);
  n.hum_swing_db = j.value("hum_swing_db", n.hum_swing_db);
  n.hum_swing_rate = j.value("hum_swing_rate", n.hum_swing_rate);
  n.whine_weight = j.value("whine_weight", n.whine_weight);
  n.whine_tones = j.value("whine_tones", n.whine_tones);
  n.whine_low = j.value("whine_low", n.whine_low);
  n.whine_high = j.value("whine_high", n.whine_high);
  n.whine_drift = j.value("whine_drift", n.whine_drift);
  n.whine_drift_rate = j.value("whine_drift_rate", n.whine_drift_rate);
  n.clank_weight = j.value("clank_weight", n.clank_weight);
  n.clank_rate = j.value("clank_rate", n.clank_rate);
  n.clank_decay = j.value("clank_decay", n.clank_decay);
  return n;
}

inline nlohmann::json to_json(const CorpusConfig& c) {
  nlohmann::json regimes = nlohmann::json::array();
  for (const auto& r : c.regimes) regimes.push_back(to_json(r));
  return {{"sample_rate", c.sample_rate},
          {"snr_db", std::isinf(c.snr_db) ? nlohmann::json(nullptr) : nlohmann::json(c.snr_db)},
          {"layer_seconds", c.layer_seconds},
          {"dwell_seconds", c.dwell_seconds},
          {"layers_per_file", c.layers_per_file},
          {"layers_per_class", c.layers_per_class},
          {"layer_length_mm", c.layer_length_mm},
          {"layer_height_mm", c.layer_height_mm},
          {"regimes", regimes},
          {"noise", to_json(c.noise)},
          {"shuffle_layers", c.shuffle_layers}};
}

/// Missing keys keep their defaults; a null SNR means noise-free.
inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  try {
    CorpusConfig c;
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    if (j.contains("snr_db")) c.snr_db = j["snr_db"].is_null() ? std::numeric_limits<double>::infinity() : j["snr_db"].get<double>();
    c.layer_seconds = j.value("layer_seconds", c.layer_seconds);
    c.dwell_seconds = j.value("dwell_seconds", c.dwell_seconds);
    c.layers_per_file = j.value("layers_per_file", c.layers_per_file);
    if (j.contains("layers_per_class")) c.layers_per_class = j["layers_per_class"].get<std::array<std::size_t, kNumClasses>>();
    c.layer_length_mm = j.value("layer_length_mm", c.layer_length_mm);
    c.layer_height_mm = j.value("layer_height_mm", c.layer_height_mm);
    if (j.contains("regimes")) {
      c.regimes.clear();
      for (const auto& r : j["regimes"]) c.regimes.push_back(regime_from_json(r));
    }
    if (j.contains("noise")) c.noise = noise_from_json(j["noise"]);
    c.shuffle_layers = j.value("shuffle_layers", c.shuffle_layers);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed corpus config: ") + e.what());
  }
}

inline std::uint64_t config_hash(const nlohmann::json& j) { return fnv1a(j.dump()); }

/// Splits the configured layers into files of `layers_per_file` layers. The
/// regime order is defect-free, cracks, keyhole unless `shuffle_layers` asks
/// for a seeded permutation, which keeps any per-file recording conditions from
/// lining up with the labels. Layers alternate scan direction and climb by the
/// layer height, like a single-bead wall.
inline std::vector<ProcessScript> corpus_scripts(const CorpusConfig& c, std::uint64_t seed = 0) {
  c.validate();
  std::vector<int> labels;
  for (int k = 0; k < kNumClasses; ++k)
    for (std::size_t i = 0; i < c.layers_per_class[static_cast<std::size_t>(k)]; ++i) labels.push_back(k);
  if (labels.empty()) fail(ErrorKind::invalid_argument, "corpus has no layers");
  if (c.shuffle_layers) Rng(seed).fork(0x5C41).shuffle(std::span<int>(labels));
  std::vector<ProcessScript> scripts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i % c.layers_per_file == 0) scripts.emplace_back();
    Layer l;
    l.label = labels[i];
    l.duration = c.layer_seconds;
    const double z = c.layer_height_mm * static_cast<double>(i + 1);
    const Vec3 a{0.0, 0.0, z}, b{c.layer_length_mm, 0.0, z};
    l.path = i % 2 == 0 ? std::vector<Vec3>{a, b} : std::vector<Vec3>{b, a};
    l.dwell_after = c.dwell_seconds;
    scripts.back().layers.push_back(std::move(l));
  }
  for (auto& s : scripts) s.layers.back().dwell_after = 0.0;
  return scripts;
}

struct Corpus {
  DatasetManifest manifest;
  std::vector<RenderedFile> files;
};

inline std::string corpus_file_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run_%03zu", i);
  return buf;
}

/// Renders the whole corpus in memory; `write_corpus` puts it on disk.
inline Corpus generate_corpus(const CorpusConfig& c, std::uint64_t seed) {
  const auto scripts = corpus_scripts(c, seed);
  Corpus corpus;
  corpus.manifest.seed = seed;
  corpus.manifest.config_hash = config_hash(to_json(c));
  corpus.manifest.snr_db = c.snr_db;
  // Noise level is pinned to the defect-free regime's nominal power so the
  // noise floor carries no information about the labels in a file.
  double reference = 0.0;
  for (const auto& r : c.regimes)
    if (r.label == 0) reference = nominal_power(r);
  Rng root(seed);
  for (std::size_t i = 0; i < scripts.size(); ++i) {
    auto f = render_script(scripts[i], c.regimes, c.noise, c.snr_db, c.sample_rate, root.fork(i).next(), reference);
    f.entry.wav = corpus_file_stem(i) + ".wav";
    f.entry.positions = corpus_file_stem(i) + "_positions.csv";
    corpus.manifest.files.push_back(f.entry);
    corpus.files.push_back(std::move(f));
  }
  return corpus;
}

inline void write_positions_csv(std::span<const PositionSample> positions, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "t,x,y,z\n";
  out.precision(17);
  for (const auto& p : positions) out << p.t << ',' << p.x << ',' << p.y << ',' << p.z << '\n';
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

inline std::vector<PositionSample> read_positions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::data, path.string() + ": empty position file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,x,y,z") fail(ErrorKind::data, path.string() + ": position header must be t,x,y,z");
  std::vector<PositionSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    PositionSample p;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream is(line);
    if (!(is >> p.t >> c1 >> p.x >> c2 >> p.y >> c3 >> p.z) || c1 != ',' || c2 != ',' || c3 != ',' || !std::isfinite(p.t) ||
        !std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      fail(ErrorKind::data, path.string() + ": bad position on line " + std::to_string(line_no));
    if (!out.empty() && p.t < out.back().t) fail(ErrorKind::data, path.string() + ": positions are not time-ordered");
    out.push_back(p);
  }
  return out;
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& f : corpus.files) {
    save_wav(f.audio, dir / f.entry.wav);
    write_positions_csv(f.positions, dir / f.entry.positions);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorKind::io, "cannot write manifest");
  out << to_json(corpus.manifest).dump(2) << '\n';
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::data, path.string() + ": malformed manifest (" + e.what() + ")");
  }
  return manifest_from_json(j);
}

/// Segments of a manifest entry cut from its audio, in manifest order.
inline std::vector<Segment> manifest_segments(const ManifestEntry& entry, const AudioClip& audio) {
  if (audio.sample_rate != entry.sample_rate) fail(ErrorKind::data, "audio sample rate differs from the manifest");
  const std::size_t len = segment_length(audio.sample_rate);
  std::vector<Segment> out;
  for (std::size_t i = 0; i < entry.segments.size(); ++i) {
    const auto& s = entry.segments[i];
    const auto begin = static_cast<std::size_t>(std::llround(s.start_ms * audio.sample_rate / 1000.0));
    if (begin + len > audio.size()) fail(ErrorKind::data, "manifest segment lies beyond the end of " + entry.wav);
    Segment seg;
    seg.index = i;
    seg.start = s.start_ms / 1000.0;
    seg.duration = kSegmentSeconds;
    seg.clip.sample_rate = audio.sample_rate;
    seg.clip.origin = seg.start;
    seg.clip.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                            audio.samples.begin() + static_cast<std::ptrdiff_t>(begin + len));
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace lded
