#pragma once

// Unnormalized complex DFT used by the spectral solver and the FFT
// autodiff primitives.  Power-of-two lengths run an iterative radix-2
// transform; every other length falls back to the direct O(n^2) sum,
// which keeps the transform exact on solver grids like 71 points.

#include <complex>
#include <cstddef>
#include <vector>

#include "vflow/array.hpp"

namespace vflow {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

inline const std::vector<cplx>& twiddle_table(std::size_t n, int sign) {
  // Cached per (n, sign); table index k holds exp(sign * 2*pi*i * k / n).
  thread_local std::vector<std::pair<std::pair<std::size_t, int>, std::vector<cplx>>> cache;
  for (auto& e : cache)
    if (e.first.first == n && e.first.second == sign) return e.second;
  std::vector<cplx> t(n / 2);
  const double base = sign * 2.0 * 3.14159265358979323846 / double(n);
  for (std::size_t k = 0; k < n / 2; ++k) t[k] = std::polar(1.0, base * double(k));
  cache.emplace_back(std::make_pair(n, sign), std::move(t));
  return cache.back().second;
}

}  // namespace detail

// In-place unnormalized DFT: X_k = sum_j x_j exp(sign * 2*pi*i*j*k/n).
// sign = -1 is the forward transform, +1 the (unnormalized) inverse.
inline void cfft(std::vector<cplx>& v, int sign) {
  const std::size_t n = v.size();
  if (n <= 1) return;
  if (!is_pow2(n)) {
    std::vector<cplx> out(n, cplx(0.0, 0.0));
    const double base = sign * 2.0 * 3.14159265358979323846 / double(n);
    for (std::size_t k = 0; k < n; ++k) {
      cplx acc(0.0, 0.0);
      for (std::size_t j = 0; j < n; ++j)
        acc += v[j] * std::polar(1.0, base * double(j * k % n));
      out[k] = acc;
    }
    v = std::move(out);
    return;
  }
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(v[i], v[j]);
  }
  const auto& tw = detail::twiddle_table(n, sign);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx w = tw[k * step];
        const cplx u = v[i + k];
        const cplx t = v[i + k + len / 2] * w;
        v[i + k] = u + t;
        v[i + k + len / 2] = u - t;
      }
    }
  }
}

// 2D unnormalized DFT over a row-major n x n complex grid.
inline void cfft2(std::vector<cplx>& grid, std::size_t n, int sign) {
  std::vector<cplx> line(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) line[c] = grid[r * n + c];
    cfft(line, sign);
    for (std::size_t c = 0; c < n; ++c) grid[r * n + c] = line[c];
  }
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t r = 0; r < n; ++r) line[r] = grid[r * n + c];
    cfft(line, sign);
    for (std::size_t r = 0; r < n; ++r) grid[r * n + c] = line[r];
  }
}

}  // namespace vflow
