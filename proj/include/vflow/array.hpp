#pragma once

// Dense row-major arrays of 64-bit floats, the error taxonomy, and the
// seeded random stream used across the library.  Everything downstream
// (tapes, fields, solvers) stores its numbers in Array.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vflow {

inline constexpr double kPi = 3.14159265358979323846;

// ====================== Errors ======================

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("ShapeError: " + m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error("NumericError: " + m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("ConfigError: " + m) {}
};
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& m) : std::runtime_error("SolverError: " + m) {}
};

// ====================== Array ======================

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
  Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("array data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Array zeros(Shape s) { return Array(std::move(s)); }
  static Array full(Shape s, double v) {
    Array a(std::move(s));
    std::fill(a.data.begin(), a.data.end(), v);
    return a;
  }
  static Array scalar(double v) { return Array({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

// ====================== Dense kernels ======================
// C[M x N] += A[M x K] * B[K x N].  i-k-j order: the inner loop walks
// contiguous rows of B and C and auto-vectorizes.

inline void gemm_nn_acc(const double* A, const double* B, double* C, std::size_t M,
                        std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = a[k];
      if (aik == 0.0) continue;
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[M x N] += A[M x K] * B^T, with B stored [N x K]: row-row dot products.
inline void gemm_nt_acc(const double* A, const double* B, double* C, std::size_t M,
                        std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
      }
      for (; k < K; ++k) s0 += a[k] * b[k];
      c[j] += ((s0 + s1) + (s2 + s3));
    }
  }
}

// C[M x N] += A^T * B, with A stored [K x M]: contiguous accumulation into C rows.
inline void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t M,
                        std::size_t K, std::size_t N) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double aki = a[i];
      if (aki == 0.0) continue;
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

// ====================== Seeded random streams ======================
// One master seed, split deterministically per named component.  The
// generator is a splitmix64 chain; normals use the Marsaglia polar
// method so no libm trig enters the reproducibility contract.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t seed_stream(std::uint64_t master, std::string_view name) {
  std::uint64_t s = master ^ fnv1a64(name);
  splitmix64_next(s);
  return splitmix64_next(s);
}

inline std::uint64_t seed_stream(std::uint64_t master, std::string_view name,
                                 std::uint64_t index) {
  std::uint64_t s = seed_stream(master, name) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  return splitmix64_next(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  void fill_normal(Array& a) {
    for (double& v : a.data) v = normal();
  }
  void fill_uniform(Array& a, double lo, double hi) {
    for (double& v : a.data) v = uniform(lo, hi);
  }

  Array normals(Shape s) {
    Array a(std::move(s));
    fill_normal(a);
    return a;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vflow
