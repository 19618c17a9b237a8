#include "gsr/dsp.hpp"

#include <cmath>
#include <stdexcept>

namespace gsr {

namespace {
constexpr double kPi = 3.14159265358979323846;

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}
}  // namespace

void fft(std::vector<std::complex<double>>& x, bool inverse) {
  const size_t n = x.size();
  if (n == 0) return;
  if ((n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");

  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1 : -1);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = x[i + k];
        const std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& v : x) v /= static_cast<double>(n);
  }
}

std::vector<double> magnitude_spectrum(const std::vector<double>& x,
                                       size_t min_size) {
  size_t n = next_pow2(std::max(x.size(), std::max(min_size, size_t{2})));
  std::vector<std::complex<double>> buf(n, {0.0, 0.0});
  for (size_t i = 0; i < x.size(); ++i) buf[i] = {x[i], 0.0};
  fft(buf);
  std::vector<double> mags(n / 2 + 1);
  for (size_t i = 0; i <= n / 2; ++i) mags[i] = std::abs(buf[i]);
  return mags;
}

int peak_bin(const std::vector<double>& mags) {
  int best = 1;
  for (size_t i = 2; i < mags.size(); ++i)
    if (mags[i] > mags[best]) best = static_cast<int>(i);
  return best;
}

void dct2_row(const double* in, double* out, int n) {
  const double norm0 = std::sqrt(1.0 / n);
  const double norm = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += in[i] * std::cos(kPi * k * (2.0 * i + 1.0) / (2.0 * n));
    out[k] = acc * (k == 0 ? norm0 : norm);
  }
}

void dct3_row(const double* in, double* out, int n) {
  const double norm0 = std::sqrt(1.0 / n);
  const double norm = std::sqrt(2.0 / n);
  for (int i = 0; i < n; ++i) {
    double acc = in[0] * norm0;
    for (int k = 1; k < n; ++k)
      acc += in[k] * norm * std::cos(kPi * k * (2.0 * i + 1.0) / (2.0 * n));
    out[i] = acc;
  }
}

}  // namespace gsr
