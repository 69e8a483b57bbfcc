#include <catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "lded/mfcc.hpp"
#include "support.hpp"

using namespace lded;
using Catch::Approx;

namespace {

Segment segment_of(std::vector<double> x) {
  Segment s;
  s.clip = testing::clip_of(std::move(x));
  return s;
}

}  // namespace

TEST_CASE("mel scale closed forms") {
  REQUIRE(hz_to_mel(0.0) == 0.0);
  REQUIRE(hz_to_mel(700.0) == Approx(2595.0 * std::log10(2.0)));
  REQUIRE(hz_to_mel(700.0) == Approx(781.17).margin(0.01));
  for (double f : {10.0, 440.0, 8000.0, 22050.0}) REQUIRE(mel_to_hz(hz_to_mel(f)) == Approx(f).epsilon(1e-12));
}

TEST_CASE("filterbank structure at 44.1 kHz / 512 / 40") {
  const auto fb = mel_filterbank(44100, 512, 40, false);
  REQUIRE(fb.n_bins == 257);
  std::vector<double> peak_bin;
  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    double row = 0.0, best = -1.0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double w = fb.weight(m, k);
      REQUIRE(w >= 0.0);
      REQUIRE(w <= 1.0);
      row += w;
      if (w > best) best = w, arg = k;
    }
    REQUIRE(row > 0.0);
    peak_bin.push_back(static_cast<double>(arg));
  }
  for (std::size_t m = 1; m < peak_bin.size(); ++m) REQUIRE(peak_bin[m] >= peak_bin[m - 1]);
  // Interior bins all fall under some filter; the endpoints sit on the outer triangle feet.
  for (std::size_t k = 1; k + 1 < fb.n_bins; ++k) {
    double col = 0.0;
    for (std::size_t m = 0; m < fb.n_mels; ++m) col += fb.weight(m, k);
    REQUIRE(col > 0.0);
  }
}

TEST_CASE("normalized filters are the unit triangles scaled by 2/(upper-lower)") {
  const auto raw = mel_filterbank(44100, 512, 40, false);
  const auto norm = mel_filterbank(44100, 512, 40, true);
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(22050.0);
  for (std::size_t m = 0; m < 40; ++m) {
    const double lower = mel_to_hz(lo + (hi - lo) * m / 41.0);
    const double upper = mel_to_hz(lo + (hi - lo) * (m + 2) / 41.0);
    for (std::size_t k = 0; k < 257; ++k) REQUIRE(norm.weight(m, k) == Approx(raw.weight(m, k) * 2.0 / (upper - lower)).margin(1e-15));
  }
}

TEST_CASE("too many filters for the FFT resolution is rejected") {
  REQUIRE_THROWS_AS(mel_filterbank(44100, 64, 200), Error);
  REQUIRE_THROWS_AS(mel_filterbank(44100, 512, 1), Error);
}

TEST_CASE("DCT-II matches the direct sum and is orthonormal") {
  const auto x = testing::uniform_values(40, 12, -3.0, 3.0);
  const auto got = dct2(x, 40);
  for (std::size_t k = 0; k < 40; ++k) {
    long double acc = 0;
    for (std::size_t n = 0; n < 40; ++n) acc += x[n] * std::cos(std::numbers::pi_v<long double> * k * (2.0L * n + 1) / 80.0L);
    acc *= (k == 0 ? std::sqrt(1.0L / 40) : std::sqrt(2.0L / 40));
    REQUIRE(std::fabs(got[k] - static_cast<double>(acc)) < 1e-9);
  }
  for (std::size_t n : {8u, 40u, 64u}) {
    const auto d = dct2_matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += d[i * n + c] * d[j * n + c];
        REQUIRE(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-9);
      }
  }
}

TEST_CASE("500 ms segment gives exactly 20 x 85 in [-1, 1]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = mfcc_segment_tensor(segment_of(testing::white_noise(22050, seed, 0.1)));
    REQUIRE(m.n_coeffs == 20);
    REQUIRE(m.n_frames == 85);
    REQUIRE(m.values.size() == 20 * 85);
    double lo = 2.0, hi = -2.0;
    for (double v : m.values) {
      REQUIRE((v >= -1.0 && v <= 1.0));
      lo = std::min(lo, v), hi = std::max(hi, v);
    }
    REQUIRE(lo == -1.0);
    REQUIRE(hi == Approx(1.0));
  }
  REQUIRE_THROWS_AS(mfcc_segment_tensor(segment_of(std::vector<double>(22049, 0.1))), Error);
  REQUIRE_THROWS_AS(mfcc_segment_tensor(segment_of(std::vector<double>(22051, 0.1))), Error);
}

TEST_CASE("zero segment gives zero cepstra and an all-zero tensor") {
  bool silent = false;
  const auto raw = mfcc_raw(testing::clip_of(std::vector<double>(22050, 0.0)), FramingConfig{}, default_filterbank(), &silent);
  REQUIRE(silent);
  for (std::size_t t = 0; t < raw.n_frames; ++t) {
    REQUIRE(raw.at(0, t) == Approx(std::log(1e-10) * std::sqrt(40.0)));
    for (std::size_t c = 1; c < 20; ++c) REQUIRE(std::abs(raw.at(c, t)) < 1e-9);
  }
  const auto m = mfcc_segment_tensor(segment_of(std::vector<double>(22050, 0.0)));
  for (double v : m.values) REQUIRE(v == 0.0);
}

TEST_CASE("deterministic on identical input") {
  const auto x = testing::white_noise(22050, 3);
  REQUIRE(mfcc_segment_tensor(segment_of(x)).values == mfcc_segment_tensor(segment_of(x)).values);
}

TEST_CASE("gain only moves c0 before normalization") {
  const auto& fb = default_filterbank();
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto x = testing::white_noise(22050, 40 + seed, 0.2);
    const double alpha = 0.1 + 0.37 * static_cast<double>(seed);
    auto y = x;
    for (auto& v : y) v *= alpha;
    const auto a = mfcc_raw(testing::clip_of(x), FramingConfig{}, fb);
    const auto b = mfcc_raw(testing::clip_of(y), FramingConfig{}, fb);
    const auto spec = stft(testing::clip_of(x), FramingConfig{});
    for (std::size_t t = 0; t < a.n_frames; ++t) {
      // Without the log floor, log(alpha^2 e) = log e + 2 log alpha exactly. The floor
      // perturbs band m by d_m = log((alpha^2 e + eps) / (alpha^2 (e + eps))), and an
      // orthonormal DCT row has entries at most sqrt(2/40), which bounds the leak.
      double leak = 0.0, shift = 0.0;
      for (std::size_t m = 0; m < fb.n_mels; ++m) {
        double e = 0.0;
        for (std::size_t k = 0; k < fb.n_bins; ++k) e += fb.weight(m, k) * std::norm(spec.at(k, t));
        const double d = std::log((alpha * alpha * e + 1e-10) / (alpha * alpha * (e + 1e-10)));
        leak += std::abs(d);
        shift += d;
      }
      const double bound = std::sqrt(2.0 / 40.0) * leak + 1e-9;
      REQUIRE(std::abs(b.at(0, t) - a.at(0, t) - (2.0 * std::log(alpha) + shift / 40.0) * std::sqrt(40.0)) <= bound);
      for (std::size_t c = 1; c < 20; ++c) REQUIRE(std::abs(b.at(c, t) - a.at(c, t)) <= bound);
    }
  }
}

TEST_CASE("normalization is idempotent and maps constants to zero") {
  auto m = mfcc_segment_tensor(segment_of(testing::white_noise(22050, 9)));
  const auto once = m.values;
  normalize_unit_range(m);
  for (std::size_t i = 0; i < once.size(); ++i) REQUIRE(m.values[i] == Approx(once[i]).margin(1e-12));
  MfccMatrix c;
  c.n_frames = 3;
  c.values.assign(60, 4.2);
  normalize_unit_range(c);
  for (double v : c.values) REQUIRE(v == 0.0);
}

TEST_CASE("tensor file formats") {
  const auto m = mfcc_segment_tensor(segment_of(testing::white_noise(22050, 21)));
  SECTION("binary round trip to float precision with an 8-byte header") {
    std::stringstream ss;
    write_mfcc_binary(m, ss);
    const auto bytes = ss.str();
    REQUIRE(bytes.size() == 8 + 4 * 20 * 85);
    REQUIRE(static_cast<unsigned char>(bytes[0]) == 20);
    REQUIRE(static_cast<unsigned char>(bytes[4]) == 85);
    std::stringstream in(bytes);
    const auto back = read_mfcc_binary(in);
    REQUIRE(back.n_coeffs == 20);
    REQUIRE(back.n_frames == 85);
    for (std::size_t i = 0; i < m.values.size(); ++i) REQUIRE(back.values[i] == static_cast<double>(static_cast<float>(m.values[i])));
  }
  SECTION("binary rejects truncation and trailing bytes") {
    std::stringstream ss;
    write_mfcc_binary(m, ss);
    std::stringstream cut(ss.str().substr(0, 100));
    REQUIRE_THROWS_AS(read_mfcc_binary(cut), Error);
    std::stringstream extra(ss.str() + "x");
    REQUIRE_THROWS_AS(read_mfcc_binary(extra), Error);
  }
  SECTION("csv has 20 rows of 85 values") {
    std::stringstream ss;
    write_mfcc_csv(m, ss);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(ss, line)) {
      REQUIRE(std::count(line.begin(), line.end(), ',') == 84);
      std::stringstream ls(line);
      std::string cell;
      std::size_t t = 0;
      while (std::getline(ls, cell, ',')) REQUIRE(std::stod(cell) == Approx(m.at(rows, t++)).margin(1e-6));
      ++rows;
    }
    REQUIRE(rows == 20);
  }
}
