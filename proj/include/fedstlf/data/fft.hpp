#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "fedstlf/error.hpp"

namespace fedstlf {

using Complex = std::complex<double>;

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey; sign -1 forward, +1 inverse
// (unnormalized).
inline void fft_radix2(std::vector<Complex>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles computed directly rather than by recurrence to keep the
        // error at O(eps log n).
        const Complex w = std::polar(1.0, angle * static_cast<double>(k));
        const Complex u = a[i + k];
        const Complex v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

}  // namespace detail

/// Discrete Fourier transform X_k = sum_n x_n exp(-2 pi i k n / N) for any
/// N: radix-2 when N is a power of two, Bluestein's chirp-z otherwise.
inline std::vector<Complex> fft(std::span<const Complex> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  if (detail::is_power_of_two(n)) {
    std::vector<Complex> a(x.begin(), x.end());
    detail::fft_radix2(a, -1);
    return a;
  }
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  // chirp_k = exp(-i pi k^2 / N); k^2 reduced mod 2N to keep the angle small.
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    chirp[k] = std::polar(1.0, -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n));
  }
  std::vector<Complex> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  detail::fft_radix2(a, -1);
  detail::fft_radix2(b, -1);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  detail::fft_radix2(a, +1);
  std::vector<Complex> out(n);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * chirp[k];
  return out;
}

inline constexpr std::size_t kMinSpectrumLength = 48;

/// Fourier coefficients of a real series. The mean is removed first so the
/// DC term does not dominate the spectrum.
inline std::vector<Complex> fft_coefficients(std::span<const double> x, bool mean_center = true) {
  if (x.size() < kMinSpectrumLength) {
    throw DataError("FFT analysis needs at least " + std::to_string(kMinSpectrumLength) + " samples, got " +
                    std::to_string(x.size()));
  }
  double mean = 0.0;
  if (mean_center) {
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
  }
  std::vector<Complex> c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = Complex(x[i] - mean, 0.0);
  return fft(c);
}

/// Index k in [1, N/2] with the largest |X_k|.
inline std::size_t dominant_frequency_index(std::span<const double> x) {
  const auto coeffs = fft_coefficients(x);
  const std::size_t n = x.size();
  std::size_t best = 1;
  double best_mag = -1.0, scale = 0.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double mag = std::abs(coeffs[k]);
    if (mag > best_mag) {
      best_mag = mag;
      best = k;
    }
  }
  // A (numerically) flat spectrum has no dominant period.
  if (best_mag <= 1e-9 * static_cast<double>(n) * std::max(scale, 1.0)) {
    throw DataError("dominant period undefined: series has no periodic component");
  }
  return best;
}

/// Period in samples (hours) of the strongest seasonal component: N / k*.
inline double dominant_period(std::span<const double> x) {
  return static_cast<double>(x.size()) / static_cast<double>(dominant_frequency_index(x));
}

/// Look-back selection: the dominant period over the longest prefix that
/// spans whole weeks (or whole days for short series), so that daily and
/// weekly cycles fall on exact frequency bins.
inline double dominant_period_whole_cycles(std::span<const double> x) {
  std::size_t n = x.size();
  if (n >= 168 * 2) {
    n -= n % 168;
  } else {
    n -= n % 24;
  }
  return dominant_period(x.first(n));
}

}  // namespace fedstlf
