#pragma once

#include <complex>
#include <vector>

namespace gsr {

/// In-place iterative radix-2 FFT. Size must be a power of two.
void fft(std::vector<std::complex<double>>& x, bool inverse = false);

/// Magnitude spectrum of a real signal, zero-padded to the next power of two
/// (or to `min_size` if larger). Returns bins 0..N/2 inclusive.
std::vector<double> magnitude_spectrum(const std::vector<double>& x,
                                       size_t min_size = 0);

/// Index of the largest magnitude bin over bins 1..N/2 (skips DC).
int peak_bin(const std::vector<double>& mags);

/// Orthonormal DCT-II of each row of length n (applied in place on a
/// contiguous row buffer).
void dct2_row(const double* in, double* out, int n);

/// Orthonormal DCT-III (inverse of dct2_row).
void dct3_row(const double* in, double* out, int n);

}  // namespace gsr
