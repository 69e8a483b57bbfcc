#pragma once

// Iterative radix-2 FFT with cached twiddle tables.

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "lded/error.hpp"

namespace lded {

using cplx = std::complex<double>;

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), bitrev_(n), twiddle_(n / 2) {
    require(is_power_of_two(n), "FFT size must be a power of two");
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b)
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      bitrev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = cplx(std::cos(a), std::sin(a));
    }
  }

  std::size_t size() const { return n_; }

  /// In-place transform. The inverse is unscaled-then-divided by n, so
  /// inverse(forward(x)) == x.
  void transform(std::span<cplx> data, bool inverse) const {
    require(data.size() == n_, "FFT buffer size mismatch");
    for (std::size_t i = 0; i < n_; ++i)
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          cplx w = twiddle_[j * step];
          if (inverse) w = std::conj(w);
          const cplx u = data[start + j];
          const cplx v = data[start + j + half] * w;
          data[start + j] = u + v;
          data[start + j + half] = u - v;
        }
      }
    }
    if (inverse) {
      const double s = 1.0 / static_cast<double>(n_);
      for (auto& x : data) x *= s;
    }
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<cplx> twiddle_;
};

inline const FftPlan& fft_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan>(n);
  return *slot;
}

/// One-sided spectrum (n/2 + 1 bins) of a real sequence whose length is a power of two.
inline std::vector<cplx> rfft(std::span<const double> x) {
  const auto& plan = fft_plan(x.size());
  std::vector<cplx> buf(x.begin(), x.end());
  plan.transform(buf, false);
  buf.resize(x.size() / 2 + 1);
  return buf;
}

/// Inverse of rfft: rebuilds the Hermitian-symmetric spectrum and returns the real part.
inline std::vector<double> irfft(std::span<const cplx> half, std::size_t n) {
  require(half.size() == n / 2 + 1, "irfft: bin count does not match length");
  const auto& plan = fft_plan(n);
  std::vector<cplx> buf(n);
  for (std::size_t k = 0; k < half.size(); ++k) buf[k] = half[k];
  for (std::size_t k = half.size(); k < n; ++k) buf[k] = std::conj(half[n - k]);
  plan.transform(buf, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real();
  return out;
}

}  // namespace lded
