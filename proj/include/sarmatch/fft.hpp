#pragma once

#include <complex>
#include <span>
#include <vector>

namespace sarmatch::fft {

using cd = std::complex<double>;

// smallest n' >= n whose prime factors are all in {2,3,5}
int next_fast_size(int n);
bool is_fast_size(int n);

// 1-D transforms for arbitrary length (mixed-radix Cooley-Tukey, direct DFT
// for small primes, Bluestein for large primes). No scaling on forward;
// inverse applies 1/n.
void fft(std::vector<cd>& a, bool inverse);

// In-place 2-D transforms on a row-major h x w buffer.
void fft2(std::vector<cd>& a, int h, int w);
void ifft2(std::vector<cd>& a, int h, int w);

// Forward DFT of a real h x w array zero-padded to out_h x out_w.
std::vector<cd> fft2_real(std::span<const float> data, int h, int w, int out_h, int out_w);

}  // namespace sarmatch::fft
