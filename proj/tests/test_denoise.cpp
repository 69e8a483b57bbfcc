#include <catch_amalgamated.hpp>

#include "lded/denoise.hpp"
#include "lded/random.hpp"
#include "lded/stream/denoise_stream.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lded;
using Catch::Approx;

namespace {

double butterworth_magnitude(double f, const BandpassSpec& s, int sr) {
  return oracle::butterworth_magnitude(f, s.low_hz, s.high_hz, s.order, sr);
}

double db(double x) { return 20.0 * std::log10(x); }

double rms_range(const std::vector<double>& x, std::size_t b, std::size_t e) {
  return rms(std::span<const double>(x.data() + b, e - b));
}

std::uint64_t hash_samples(const AudioClip& c) {
  std::string bytes;
  for (double v : c.samples) {
    const float f = static_cast<float>(v);
    bytes.append(reinterpret_cast<const char*>(&f), sizeof f);
  }
  return fnv1a(bytes);
}

}  // namespace

TEST_CASE("flat 0 dB equalizer is the identity on the interior") {
  const auto x = testing::white_noise(20000, 2);
  const auto y = equalize(testing::clip_of(x), EqualizerProfile::flat(44100));
  const auto r = interior_range(x.size(), FramingConfig{});
  for (std::size_t i = r.begin; i < r.end; ++i) REQUIRE(std::abs(y.samples[i] - x[i]) < 1e-6);
}

TEST_CASE("default equalizer mutes 500 Hz and lifts 5 kHz by 6 dB") {
  const auto prof = EqualizerProfile::default_for(44100);
  const auto r = interior_range(44100, FramingConfig{});
  {
    // 500 Hz sits on bin 5.8; the Hann main lobe stays inside the muted band.
    const auto x = testing::sine(44100, 500.0, 44100);
    const auto y = equalize(testing::clip_of(x), prof);
    REQUIRE(rms_range(y.samples, r.begin, r.end) <= std::pow(10.0, -3.0) * rms_range(x, r.begin, r.end) + 1e-3);
  }
  {
    const auto x = testing::sine(44100, 5000.0, 44100);
    const auto y = equalize(testing::clip_of(x), prof);
    REQUIRE(rms_range(y.samples, r.begin, r.end) / rms_range(x, r.begin, r.end) == Approx(std::pow(10.0, 6.0 / 20.0)).epsilon(0.02));
  }
}

TEST_CASE("equalizer profiles are validated against Nyquist") {
  EqualizerProfile p{{{0.0, 1000.0, 0.0}, {1000.0, 30000.0, 0.0}}};
  REQUIRE_THROWS_AS(p.validate(44100), Error);
  EqualizerProfile gap{{{0.0, 1000.0, 0.0}, {2000.0, 22050.0, 0.0}}};
  REQUIRE_THROWS_AS(gap.validate(44100), Error);
  REQUIRE_NOTHROW(EqualizerProfile::default_for(44100).validate(44100));
}

TEST_CASE("designed bandpass matches the analytic Butterworth magnitude") {
  const BandpassSpec spec;
  const auto sos = design_butterworth_bandpass(spec, 44100);
  REQUIRE(sos.size() == 3);
  for (int i = 0; i < 20; ++i) {
    const double f = 20.0 * std::pow(21000.0 / 20.0, i / 19.0);
    const double got = db(std::abs(sos_response(sos, f, 44100)));
    REQUIRE(std::abs(got - db(butterworth_magnitude(f, spec, 44100))) < 1.0);
  }
  for (double f : {300.0, 2000.0, 4583.0, 15000.0, 21500.0})
    REQUIRE(std::abs(sos_response(sos, f, 44100)) == Approx(butterworth_magnitude(f, spec, 44100)).epsilon(1e-6));
}

TEST_CASE("bandpass sections are stable and skirts fall monotonically") {
  for (int order : {1, 2, 3, 4, 6}) {
    BandpassSpec spec;
    spec.order = order;
    const auto sos = design_butterworth_bandpass(spec, 44100);
    for (const auto& s : sos) {
      const cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2));
      REQUIRE(std::abs((-s.a1 + disc) / 2.0) < 1.0);
      REQUIRE(std::abs((-s.a1 - disc) / 2.0) < 1.0);
    }
    double prev = 0.0;
    for (int i = 0; i <= 40; ++i) {  // 10 Hz up to the lower edge
      const double f = 10.0 * std::pow(1000.0 / 10.0, i / 40.0);
      const double m = std::abs(sos_response(sos, f, 44100));
      REQUIRE(m >= prev);
      prev = m;
    }
    prev = 2.0;
    for (int i = 0; i <= 20; ++i) {  // upper edge to just below Nyquist
      const double f = 21000.0 + (22049.0 - 21000.0) * i / 20.0;
      const double m = std::abs(sos_response(sos, f, 44100));
      REQUIRE(m <= prev);
      prev = m;
    }
  }
}

TEST_CASE("steady tones pass with the analytic gain") {
  const BandpassSpec spec;
  for (double f : {std::sqrt(1000.0 * 21000.0), 100.0}) {
    const auto x = testing::sine(88200, f, 44100);
    const auto y = bandpass(testing::clip_of(x), spec);
    const double measured = rms_range(y.samples, 44100, 88200) / rms_range(x, 44100, 88200);
    const double tol = f > 1000.0 ? 0.5 : 1.0;
    REQUIRE(std::abs(db(measured) - db(butterworth_magnitude(f, spec, 44100))) < tol);
  }
}

TEST_CASE("bandpass removes DC") {
  const auto y = bandpass(testing::clip_of(std::vector<double>(88200, 0.7)), BandpassSpec{});
  double mean = 0.0;
  for (std::size_t i = 44100; i < 88200; ++i) mean += y.samples[i];
  mean /= 44100.0;
  REQUIRE(std::abs(mean) < 1e-4 * 0.7);
}

TEST_CASE("bandpass rejects edges at or above Nyquist") {
  BandpassSpec s;
  s.high_hz = 22050.0;
  REQUIRE_THROWS_AS(design_butterworth_bandpass(s, 44100), Error);
  s.high_hz = 21000.0;
  s.low_hz = 0.0;
  REQUIRE_THROWS_AS(design_butterworth_bandpass(s, 44100), Error);
}

TEST_CASE("zero-phase mode is forward-backward") {
  const auto x = testing::white_noise(5000, 4);
  BandpassSpec s;
  s.mode = FilterMode::zero_phase;
  const auto y = bandpass(testing::clip_of(x), s);
  // Independent forward-backward with a fresh filter per pass.
  auto sos = design_butterworth_bandpass(s, 44100);
  std::vector<double> ref = x;
  SosFilter(sos).process(ref);
  std::reverse(ref.begin(), ref.end());
  SosFilter(sos).process(ref);
  std::reverse(ref.begin(), ref.end());
  REQUIRE(y.samples == ref);
}

TEST_CASE("HPSS separates a tone from an impulse") {
  const HpssConfig cfg;
  {
    const auto y = hpss(testing::clip_of(testing::sine(44100, 5000.0, 44100)), cfg);
    const double eh = mean_power(y.harmonic.samples), ep = mean_power(y.percussive.samples);
    REQUIRE(eh / (eh + ep) >= 0.9);
  }
  {
    std::vector<double> x(44100, 0.0);
    x[22050] = 1.0;
    const auto y = hpss(testing::clip_of(x), cfg);
    const double eh = mean_power(y.harmonic.samples), ep = mean_power(y.percussive.samples);
    REQUIRE(ep / (eh + ep) >= 0.9);
  }
}

TEST_CASE("HPSS outputs reconstruct the input on the interior") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto x = testing::white_noise(15000, 100 + seed);
    const auto y = hpss(testing::clip_of(x), HpssConfig{});
    const auto base = istft(stft(testing::clip_of(x), FramingConfig{}));
    const auto r = interior_range(x.size(), FramingConfig{});
    for (std::size_t i = r.begin; i < r.end; ++i) REQUIRE(std::abs(y.harmonic.samples[i] + y.percussive.samples[i] - base.samples[i]) < 1e-6);
  }
}

TEST_CASE("HPSS soft masks lie in [0, 1] and sum to one") {
  const auto mags = testing::uniform_values(257, 5);
  const auto h = testing::uniform_values(257, 6);
  auto p = testing::uniform_values(257, 7);
  p[3] = 0.0;
  std::vector<cplx> frame(257, cplx(1.0, 0.0)), harm(257), perc(257);
  split_frame(frame, h, p, HpssConfig{}, harm, perc);
  for (std::size_t k = 0; k < 257; ++k) {
    REQUIRE(harm[k].real() >= 0.0);
    REQUIRE(harm[k].real() <= 1.0);
    REQUIRE(perc[k].real() >= 0.0);
    REQUIRE(harm[k].real() + perc[k].real() == Approx(1.0).margin(1e-9));
  }
  (void)mags;
}

TEST_CASE("median filters match a sort-based oracle") {
  const auto m = testing::uniform_values(257, 9);
  const auto got = frequency_median(m, 17);
  for (std::size_t k = 0; k < m.size(); ++k) {
    std::vector<double> w;
    for (int j = -8; j <= 8; ++j) w.push_back(m[static_cast<std::size_t>(std::clamp<long>(static_cast<long>(k) + j, 0, 256))]);
    std::sort(w.begin(), w.end());
    REQUIRE(got[k] == w[8]);
  }
}

TEST_CASE("denoise chain: stage order, zeros, determinism") {
  const auto cfg = DenoiseConfig::defaults(44100);
  SECTION("zero input gives four zero clips") {
    const auto st = denoise_pipeline(testing::clip_of(std::vector<double>(22050, 0.0)), cfg);
    for (const auto* c : {&st.raw, &st.equalized, &st.bandpassed, &st.denoised}) {
      REQUIRE(c->size() == 22050);
      for (double v : c->samples) REQUIRE(v == 0.0);
    }
  }
  SECTION("deterministic and order-sensitive") {
    Rng rng(42);
    std::vector<double> x(44100);
    for (auto& v : x) v = 0.1 * rng.normal();
    for (std::size_t i = 0; i < x.size(); i += 5000) x[i] += 0.8;
    const auto clip = testing::clip_of(x);
    const auto a = denoise_pipeline(clip, cfg);
    const auto b = denoise_pipeline(clip, cfg);
    REQUIRE(a.denoised.samples == b.denoised.samples);
    REQUIRE(a.denoised.size() == clip.size());
    // bandpass before equalizer
    const auto swapped = hpss(equalize(bandpass(clip, cfg.bandpass), cfg.equalizer), cfg.hpss).percussive;
    double diff = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(swapped.samples[i] - a.denoised.samples[i]));
    REQUIRE(diff > 1e-6);
    CHECK(hash_samples(a.denoised) == hash_samples(b.denoised));
  }
}

TEST_CASE("tone through the chain: the percussive output suppresses it") {
  auto cfg = DenoiseConfig::defaults(44100);
  cfg.equalizer = EqualizerProfile::flat(44100);
  cfg.bandpass.low_hz = 20.0;
  cfg.bandpass.high_hz = 21900.0;
  const auto st = denoise_pipeline(testing::clip_of(testing::sine(44100, 3000.0, 44100)), cfg);
  const auto r = interior_range(44100, FramingConfig{});
  const double in = rms_range(st.bandpassed.samples, r.begin, r.end);
  const double out = rms_range(st.denoised.samples, r.begin, r.end);
  REQUIRE(out * out / (in * in) < 0.1);
}

TEST_CASE("denoise config JSON round trip") {
  auto cfg = DenoiseConfig::defaults(44100);
  cfg.hpss.kernel_time = 9;
  cfg.bandpass.mode = FilterMode::zero_phase;
  const auto back = denoise_config_from_json(to_json(cfg), 44100);
  REQUIRE(to_json(back) == to_json(cfg));
  REQUIRE_THROWS_AS(denoise_config_from_json(nlohmann::json::parse(R"({"bandpass": {"mode": "sideways"}})"), 44100), Error);
  REQUIRE_THROWS_AS(denoise_config_from_json(nlohmann::json::parse(R"({"hpss": {"kernel_time": 4}})"), 44100), Error);
}
