#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Nothing here calls into the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

namespace oracle {

// Straight transcriptions of the descriptor formulas, one function per
// feature, long double accumulation, no shared helpers with the library.
using LD = long double;

LD s_sum(const std::vector<double>& m) { return std::accumulate(m.begin(), m.end(), LD{0}); }

LD o_centroid(const std::vector<double>& m) {
  LD num = 0;
  for (std::size_t n = 0; n < m.size(); ++n) num += LD(n) * m[n];
  return num / s_sum(m);
}
LD o_bandwidth(const std::vector<double>& m) {
  const LD sc = o_centroid(m);
  LD num = 0;
  for (std::size_t n = 0; n < m.size(); ++n) num += std::fabs(LD(n) - sc) * m[n];
  return num / s_sum(m);
}
LD o_rolloff(const std::vector<double>& m, double eta) {
  const LD total = s_sum(m);
  for (std::size_t r = 0; r < m.size(); ++r) {
    LD c = 0;
    for (std::size_t n = 0; n <= r; ++n) c += m[n];
    if (c >= eta * total) return LD(r);
  }
  return LD(m.size() - 1);
}
LD o_flatness(const std::vector<double>& m) {
  LD logs = 0;
  for (double v : m) logs += std::log(LD(std::max(v, 1e-12)));
  return std::exp(logs / m.size()) / (s_sum(m) / m.size());
}
LD o_ber(const std::vector<double>& m, std::size_t split) {
  LD lo = 0, hi = 0;
  for (std::size_t n = 0; n < m.size(); ++n) (n < split ? lo : hi) += LD(m[n]) * m[n];
  return std::min<LD>(lo / std::max<LD>(hi, 1e-12), 1e12);
}
LD o_contrast(const std::vector<double>& m, double q) {
  std::vector<LD> e;
  for (double v : m) e.push_back(LD(v) * v);
  std::sort(e.begin(), e.end(), std::greater<>());
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(q * m.size()));
  LD top = 0, bottom = 0;
  for (std::size_t i = 0; i < k; ++i) {
    top += e[i];
    bottom += e[e.size() - 1 - i];
  }
  return std::min<LD>(top / std::max<LD>(bottom, 1e-12 * k), 1e12);
}
LD o_mu2(const std::vector<double>& m) {
  const LD sc = o_centroid(m);
  LD num = 0;
  for (std::size_t n = 0; n < m.size(); ++n) num += (LD(n) - sc) * (LD(n) - sc) * m[n];
  return std::sqrt(num / s_sum(m));
}
LD o_mu3(const std::vector<double>& m) {
  const LD sc = o_centroid(m), mu2 = o_mu2(m);
  LD num = 0;
  for (std::size_t n = 0; n < m.size(); ++n) num += std::pow(LD(n) - sc, 3) * m[n];
  return num / (mu2 * mu2 * mu2 * s_sum(m));
}
LD o_mu4(const std::vector<double>& m) {
  const LD sc = o_centroid(m), mu2 = o_mu2(m);
  LD num = 0;
  for (std::size_t n = 0; n < m.size(); ++n) num += std::pow(LD(n) - sc, 4) * m[n];
  return num / (mu2 * mu2 * mu2 * mu2 * s_sum(m));
}
LD o_crest(const std::vector<double>& m) { return *std::max_element(m.begin(), m.end()) / (s_sum(m) / m.size()); }
LD o_entropy(const std::vector<double>& m) {
  const LD total = s_sum(m);
  LD h = 0;
  for (double v : m)
    if (v > 0) h += (v / total) * std::log(v / total);
  return -h / std::log(LD(m.size()));
}
LD o_flux(const std::vector<double>& m, const std::vector<double>& prev) {
  LD acc = 0;
  for (std::size_t n = 0; n < m.size(); ++n) acc += (LD(m[n]) - prev[n]) * (LD(m[n]) - prev[n]);
  return std::sqrt(acc);
}

LD o_ae(std::span<const double> f) {
  LD best = 0;
  for (double v : f) best = std::max<LD>(best, std::fabs(LD(v)));
  return best;
}
LD o_rms(std::span<const double> f) {
  LD acc = 0;
  for (double v : f) acc += LD(v) * v;
  return std::sqrt(acc / f.size());
}
LD o_zcr(std::span<const double> f) {
  LD count = 0;
  auto sgn = [](double v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); };
  for (std::size_t k = 1; k < f.size(); ++k) count += std::abs(sgn(f[k]) - sgn(f[k - 1]));
  return count / 2;
}

bool close(double got, LD want, double rel = 1e-9) {
  const LD scale = std::max<LD>(1.0L, std::fabs(want));
  return std::fabs(LD(got) - want) <= rel * scale;
}

// Magnitude of a bilinear-transformed Butterworth bandpass straight from the
// analog prototype: |H| = 1 / sqrt(1 + ((W^2 - W0^2) / (W B))^(2n)), W prewarped.
double butterworth_magnitude(double f, double low_hz, double high_hz, int order, int sr) {
  auto warp = [&](double hz) { return 2.0 * sr * std::tan(std::numbers::pi * hz / sr); };
  const double w = warp(f), wl = warp(low_hz), wh = warp(high_hz);
  const double x = (w * w - wl * wh) / (w * (wh - wl));
  return 1.0 / std::sqrt(1.0 + std::pow(x * x, order));
}

// Rank by counting: rank_i = 1 + #{j : x_j < x_i} + (#{j : x_j == x_i} - 1) / 2.
std::vector<double> count_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) ++less;
      if (v == x[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size(), mb /= b.size();
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

// AUC = P(score_pos > score_neg) + P(tie)/2 over all pairs.
double concordance_auc(const std::vector<double>& s, const std::vector<int>& y, int pos) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == pos && y[j] != pos) {
        pairs += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / pairs;
}

}  // namespace oracle
