#include <catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "lded/features.hpp"
#include "lded/synth.hpp"
#include "support.hpp"

using namespace lded;
using Catch::Approx;

namespace {

// Fraction of spectral power below `cut_hz`, summed over all STFT frames.
double power_fraction_below(const AudioClip& c, double cut_hz) {
  const auto spec = stft(c, FramingConfig{2048, 1024, Window::hann});
  double lo = 0.0, all = 0.0;
  for (std::size_t t = 0; t < spec.n_frames; ++t)
    for (std::size_t k = 0; k < spec.n_bins; ++k) {
      const double p = std::norm(spec.at(k, t));
      all += p;
      if (spec.bin_frequency(k) < cut_hz) lo += p;
    }
  return lo / all;
}

double power(const std::vector<double>& x) {
  long double s = 0;
  for (double v : x) s += static_cast<long double>(v) * v;
  return static_cast<double>(s / x.size());
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double effect_size(const std::vector<double>& a, const std::vector<double>& b) {
  auto var = [](const std::vector<double>& x) {
    const double m = mean(x);
    double s = 0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
  };
  return (mean(a) - mean(b)) / std::sqrt(0.5 * (var(a) + var(b)));
}

double feature(const SegmentFeatureVector& v, const std::string& name) {
  for (std::size_t i = 0; i < v.names.size(); ++i)
    if (v.names[i] == name) return v.values[i];
  FAIL("missing feature " << name);
  return 0.0;
}

CorpusConfig small_config() {
  CorpusConfig c;
  c.layers_per_class = {1, 1, 1};
  c.layers_per_file = 2;
  c.layer_seconds = 3.0;
  c.dwell_seconds = 1.0;
  return c;
}

}  // namespace

TEST_CASE("regime and noise synthesis are seed-deterministic") {
  for (const auto& r : RegimeModel::defaults()) {
    REQUIRE(synth_regime(r, 1.0, 44100, 9).samples == synth_regime(r, 1.0, 44100, 9).samples);
    REQUIRE(synth_regime(r, 1.0, 44100, 9).samples != synth_regime(r, 1.0, 44100, 10).samples);
  }
  const NoiseModel nm;
  REQUIRE(synth_noise(nm, 1.0, 44100, 3).samples == synth_noise(nm, 1.0, 44100, 3).samples);
  REQUIRE(synth_regime(RegimeModel::keyhole(), 1.0, 44100, 1).size() == 44100);
}

TEST_CASE("regime validation") {
  RegimeModel r = RegimeModel::defect_free();
  r.bands.clear();
  REQUIRE_THROWS_AS(synth_regime(r, 1.0, 44100, 0), Error);
  r = RegimeModel::crack();
  r.bursts.rate = -1.0;
  REQUIRE_THROWS_AS(synth_regime(r, 1.0, 44100, 0), Error);
  REQUIRE_THROWS_AS(synth_regime(RegimeModel::defect_free(), 0.0, 44100, 0), Error);
}

TEST_CASE("keyhole carries at least twice the low-band power fraction of defect-free") {
  double keyhole = 0.0, clean = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    keyhole += power_fraction_below(synth_regime(RegimeModel::keyhole(), 0.5, 44100, s), 5000.0);
    clean += power_fraction_below(synth_regime(RegimeModel::defect_free(), 0.5, 44100, 1000 + s), 5000.0);
  }
  REQUIRE(keyhole >= 2.0 * clean);
}

TEST_CASE("cracks raise the frame-to-frame amplitude-envelope variance") {
  double crack = 0.0, clean = 0.0;
  auto ae_var = [](const AudioClip& c) {
    const auto frames = frame_signal(c.samples, FramingConfig{});
    const auto ae = amplitude_envelope(frames);
    const double m = mean(ae);
    double v = 0;
    for (double x : ae) v += (x - m) * (x - m);
    return v / static_cast<double>(ae.size());
  };
  for (std::uint64_t s = 0; s < 100; ++s) {
    crack += ae_var(synth_regime(RegimeModel::crack(), 0.5, 44100, s));
    clean += ae_var(synth_regime(RegimeModel::defect_free(), 0.5, 44100, s));
  }
  REQUIRE(crack > clean);
}

TEST_CASE("default noise is dominated by the band below 1 kHz") {
  for (std::uint64_t s = 0; s < 5; ++s) REQUIRE(power_fraction_below(synth_noise(NoiseModel{}, 2.0, 44100, s), 1000.0) >= 0.6);
}

TEST_CASE("silent noise model") {
  NoiseModel nm;
  nm.hum_weight = nm.broadband_weight = nm.whine_weight = nm.clank_weight = 0.0;
  for (double v : synth_noise(nm, 0.5, 44100, 1).samples) REQUIRE(v == 0.0);
  const auto sig = synth_regime(RegimeModel::defect_free(), 0.5, 44100, 2);
  REQUIRE(add_noise(sig, synth_noise(nm, 0.5, 44100, 1), 5.0, 0.01).samples == sig.samples);
}

TEST_CASE("mixing hits the requested SNR") {
  const auto s = synth_regime(RegimeModel::keyhole(), 1.0, 44100, 4);
  const auto n = synth_noise(NoiseModel{}, 1.0, 44100, 5);
  SECTION("0 dB gives equal powers") {
    const auto m = mix(s, n, 0.0);
    std::vector<double> added(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) added[i] = m.samples[i] - s.samples[i];
    REQUIRE(std::abs(power(added) / power(s.samples) - 1.0) < 1e-9);
  }
  SECTION("measured SNR within 0.01 dB") {
    for (double snr : {-10.0, -3.0, 0.0, 5.0, 12.5, 30.0}) {
      const auto m = mix(s, n, snr);
      std::vector<double> added(m.size());
      for (std::size_t i = 0; i < m.size(); ++i) added[i] = m.samples[i] - s.samples[i];
      REQUIRE(std::abs(10.0 * std::log10(power(s.samples) / power(added)) - snr) < 0.01);
    }
  }
  SECTION("reference-power variant") {
    const double ref = 0.02;
    const auto m = add_noise(s, n, 5.0, ref);
    std::vector<double> added(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) added[i] = m.samples[i] - s.samples[i];
    REQUIRE(std::abs(10.0 * std::log10(ref / power(added)) - 5.0) < 0.01);
  }
  SECTION("infinite SNR and errors") {
    REQUIRE(mix(s, n, std::numeric_limits<double>::infinity()).samples == s.samples);
    REQUIRE_THROWS_AS(mix(s, AudioClip{std::vector<double>(s.size(), 0.0), 44100, 0.0}, 5.0), Error);
    REQUIRE_THROWS_AS(mix(s, synth_noise(NoiseModel{}, 0.5, 44100, 1), 5.0), Error);
  }
}

TEST_CASE("nominal power matches the rendered base level") {
  for (const auto& r : {RegimeModel::defect_free(), RegimeModel::keyhole()}) {
    double p = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) p += power(synth_regime(r, 2.0, 44100, s).samples);
    REQUIRE(p / 10.0 == Approx(nominal_power(r)).epsilon(0.05));
  }
}

TEST_CASE("one 10 s defect-free layer") {
  ProcessScript script;
  script.layers.push_back({0, 10.0, {{0, 0, 0}, {100, 0, 0}}, 0.0});
  const auto f = render_script(script, RegimeModel::defaults(), NoiseModel{}, 5.0, 44100, 1);
  REQUIRE(f.entry.segments.size() == 20);
  for (const auto& s : f.entry.segments) REQUIRE(s.label == 0);
  // Segment 10 starts at 5 s and is centred at 5.25 s: 52.5% along the path.
  REQUIRE(f.entry.segments[10].position.x == Approx(52.5));
  REQUIRE(detail::script_position(script, 5.0).x == Approx(50.0));
  for (double v : f.audio.samples) REQUIRE(v == static_cast<double>(static_cast<float>(v)));
}

TEST_CASE("segments tile every laser-on run and straddlers are flagged") {
  ProcessScript script;
  script.layers.push_back({0, 2.25, {{0, 0, 0}, {10, 0, 0}}, 0.0});
  script.layers.push_back({2, 2.0, {{10, 0, 0}, {0, 0, 0}}, 1.0});
  script.layers.push_back({1, 1.2, {{0, 0, 1}, {10, 0, 1}}, 0.0});
  const auto f = render_script(script, RegimeModel::defaults(), NoiseModel{}, 10.0, 44100, 3);
  // Run one covers 4.25 s (8 segments); run two 1.2 s (2 segments).
  REQUIRE(f.entry.segments.size() == 10);
  for (std::size_t i = 1; i < 8; ++i) REQUIRE(f.entry.segments[i].start_ms == Approx(f.entry.segments[i - 1].end_ms));
  REQUIRE(f.entry.segments[8].start_ms == Approx(5250.0));
  std::size_t straddling = 0;
  for (const auto& s : f.entry.segments) straddling += s.straddles;
  REQUIRE(straddling == 1);
  REQUIRE(f.entry.segments[4].straddles);  // 2.0 to 2.5 s, midpoint 2.25 s lands in the second layer
  REQUIRE(f.entry.segments[4].label == 2);
  REQUIRE(f.entry.segments[3].label == 0);
  // Positions are sampled at 30 Hz across the whole file.
  REQUIRE(f.positions.size() == static_cast<std::size_t>(std::floor(f.audio.duration() * 30.0)) + 1);
  for (std::size_t k = 1; k < f.positions.size(); ++k) REQUIRE(f.positions[k].t > f.positions[k - 1].t);
}

TEST_CASE("corpus generation is deterministic and round-trips through disk") {
  const auto cfg = small_config();
  const auto a = generate_corpus(cfg, 21), b = generate_corpus(cfg, 21);
  REQUIRE(to_json(a.manifest) == to_json(b.manifest));
  REQUIRE(a.files.size() == 2);
  for (std::size_t i = 0; i < a.files.size(); ++i) REQUIRE(a.files[i].audio.samples == b.files[i].audio.samples);
  REQUIRE(generate_corpus(cfg, 22).files[0].audio.samples != a.files[0].audio.samples);

  testing::TempDir dir("corpus");
  write_corpus(a, dir.path());
  const auto m = read_manifest(dir / "manifest.json");
  REQUIRE(to_json(m) == to_json(a.manifest));
  for (const auto& f : a.files) {
    REQUIRE(load_wav(dir / f.entry.wav).samples == f.audio.samples);
    const auto pos = read_positions_csv(dir / f.entry.positions);
    REQUIRE(pos.size() == f.positions.size());
    REQUIRE(pos.back().x == f.positions.back().x);
    const auto segs = manifest_segments(f.entry, f.audio);
    REQUIRE(segs.size() == f.entry.segments.size());
    for (const auto& s : segs) REQUIRE(s.clip.size() == 22050);
  }
  REQUIRE(config_hash(to_json(cfg)) == a.manifest.config_hash);
  REQUIRE(to_json(corpus_config_from_json(to_json(cfg))) == to_json(cfg));
}

TEST_CASE("manifest parsing rejects malformed input") {
  auto j = to_json(generate_corpus(small_config(), 1).manifest);
  REQUIRE_NOTHROW(manifest_from_json(j));
  auto bad = j;
  bad["schema"] = "other";
  REQUIRE_THROWS_AS(manifest_from_json(bad), Error);
  bad = j;
  bad["files"][0]["segments"][0]["label"] = 5;
  REQUIRE_THROWS_AS(manifest_from_json(bad), Error);
  bad = j;
  bad["files"][0].erase("wav");
  REQUIRE_THROWS_AS(manifest_from_json(bad), Error);
}

TEST_CASE("layer shuffle permutes labels without changing the class totals") {
  CorpusConfig c;
  std::multiset<int> plain, shuffled;
  std::vector<int> order;
  c.shuffle_layers = false;
  for (const auto& s : corpus_scripts(c, 4))
    for (const auto& l : s.layers) plain.insert(l.label);
  c.shuffle_layers = true;
  for (const auto& s : corpus_scripts(c, 4))
    for (const auto& l : s.layers) {
      shuffled.insert(l.label);
      order.push_back(l.label);
    }
  REQUIRE(plain == shuffled);
  REQUIRE_FALSE(std::is_sorted(order.begin(), order.end()));
  REQUIRE(corpus_scripts(c, 4).size() == 13);
}

TEST_CASE("default corpus has 1300 segments with the configured class counts") {
  const CorpusConfig cfg;
  const auto corpus = generate_corpus(cfg, 7);
  REQUIRE(corpus.manifest.segment_count() == 1300);
  REQUIRE(corpus.manifest.class_counts() == std::vector<std::size_t>{650, 350, 300});
  for (const auto& f : corpus.manifest.files)
    for (const auto& s : f.segments) REQUIRE_FALSE(s.straddles);
}

TEST_CASE("regimes are separable on BER mean and S-centroid mean at 10 dB") {
  const auto regimes = RegimeModel::defaults();
  const double ref = nominal_power(regimes[0]);
  std::vector<std::vector<double>> ber(3), centroid(3);
  for (int c = 0; c < 3; ++c)
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto sig = synth_regime(regimes[static_cast<std::size_t>(c)], 0.5, 44100, 5000 + 100 * c + s);
      const auto nz = synth_noise(NoiseModel{}, 0.5, 44100, 9000 + 100 * c + s);
      Segment seg;
      seg.clip = add_noise(sig, nz, 10.0, ref);
      const auto v = segment_features(seg);
      ber[c].push_back(feature(v, "BER mean"));
      centroid[c].push_back(feature(v, "S-centroid mean"));
    }
  for (auto [a, b] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
    INFO("classes " << a << " vs " << b);
    REQUIRE(std::abs(effect_size(ber[a], ber[b])) > 1.0);
    REQUIRE(std::abs(effect_size(centroid[a], centroid[b])) > 1.0);
  }
}
