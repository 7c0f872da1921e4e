#pragma once

// Karhunen-Loeve representation of Gaussian random fields with
// closed-form eigenpairs on three geometries:
//   interval_neumann : psi_k = sqrt(2) cos(k pi x),  lambda = s^2 (k^2 pi^2 + t^2)^-l
//   square_neumann   : cosine products with the axis-aligned special cases
//   square_periodic  : paired sqrt(2) cos / sqrt(2) sin of 2 pi k.x over a
//                      half-plane wavevector set (two coefficients per vector)
// Modes are sorted by descending eigenvalue with a lexicographic
// tie-break, so a d-mode basis is always a prefix of a larger one.

#include <algorithm>
#include <array>

#include "vflow/array.hpp"

namespace vflow {

enum class Geometry { interval_neumann, square_neumann, square_periodic };

struct GrfSpec {
  Geometry geometry = Geometry::interval_neumann;
  double sigma = 1.0;  // amplitude
  double tau = 1.0;    // inverse length scale
  double ell = 2.0;    // spectral decay exponent
  Shape grid;          // {n} or {n, n}
};

struct KlBasis {
  GrfSpec spec;
  std::size_t n_modes = 0;
  std::size_t n_points = 0;
  std::vector<double> lambda;       // per coefficient, nonincreasing
  Array funcs;                      // [n_modes, n_points] eigenfunctions
  Array scaled;                     // [n_modes, n_points] sqrt(lambda) * psi
  std::vector<double> quad_w;       // quadrature weights per grid point

  // L2 inner product on the grid.
  double inner(const double* f, const double* g) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_points; ++i) s += quad_w[i] * f[i] * g[i];
    return s;
  }
  double norm(const double* f) const { return std::sqrt(std::max(0.0, inner(f, f))); }
};

namespace detail {

struct ModeKey {
  double neg_lambda;
  long a, b;
  bool operator<(const ModeKey& o) const {
    if (neg_lambda != o.neg_lambda) return neg_lambda < o.neg_lambda;
    if (a != o.a) return a < o.a;
    return b < o.b;
  }
};

}  // namespace detail

inline KlBasis build_basis(const GrfSpec& spec, std::size_t n_modes) {
  KlBasis basis;
  basis.spec = spec;
  basis.n_modes = n_modes;

  if (spec.geometry == Geometry::interval_neumann) {
    if (spec.grid.size() != 1) throw ConfigError("interval geometry needs a 1D grid");
    const std::size_t n = spec.grid[0];
    basis.n_points = n;
    const double h = 1.0 / double(n - 1);
    basis.quad_w.assign(n, h);
    basis.quad_w.front() = basis.quad_w.back() = 0.5 * h;
    basis.lambda.resize(n_modes);
    basis.funcs = Array({n_modes, n});
    for (std::size_t j = 0; j < n_modes; ++j) {
      const double k = double(j + 1);
      basis.lambda[j] =
          spec.sigma * spec.sigma * std::pow(k * k * kPi * kPi + spec.tau * spec.tau, -spec.ell);
      for (std::size_t i = 0; i < n; ++i)
        basis.funcs(j, i) = std::sqrt(2.0) * std::cos(k * kPi * double(i) * h);
    }
  } else if (spec.geometry == Geometry::square_neumann) {
    if (spec.grid.size() != 2 || spec.grid[0] != spec.grid[1])
      throw ConfigError("square geometry needs an n x n grid");
    const std::size_t n = spec.grid[0];
    basis.n_points = n * n;
    const double h = 1.0 / double(n - 1);
    std::vector<double> w1(n, h);
    w1.front() = w1.back() = 0.5 * h;
    basis.quad_w.resize(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) basis.quad_w[i * n + j] = w1[i] * w1[j];

    // Enumerate (k1, k2) >= 0 without the constant, sorted by eigenvalue.
    std::vector<detail::ModeKey> keys;
    const long kmax = long(std::ceil(std::sqrt(double(n_modes)))) + 2;
    for (long k1 = 0; k1 <= kmax; ++k1)
      for (long k2 = 0; k2 <= kmax; ++k2) {
        if (k1 == 0 && k2 == 0) continue;
        const double lam = spec.sigma * spec.sigma *
                           std::pow(kPi * kPi * double(k1 * k1 + k2 * k2) +
                                        spec.tau * spec.tau,
                                    -spec.ell);
        keys.push_back({-lam, k1, k2});
      }
    std::sort(keys.begin(), keys.end());
    if (keys.size() < n_modes) throw ConfigError("mode enumeration too small");
    basis.lambda.resize(n_modes);
    basis.funcs = Array({n_modes, n * n});
    for (std::size_t m = 0; m < n_modes; ++m) {
      const long k1 = keys[m].a, k2 = keys[m].b;
      basis.lambda[m] = -keys[m].neg_lambda;
      for (std::size_t i = 0; i < n; ++i) {
        const double c1 = std::cos(kPi * double(k1) * double(i) * h);
        for (std::size_t j = 0; j < n; ++j) {
          const double c2 = std::cos(kPi * double(k2) * double(j) * h);
          double v;
          if (k2 == 0)
            v = std::sqrt(2.0) * c1;
          else if (k1 == 0)
            v = std::sqrt(2.0) * c2;
          else
            v = 2.0 * c1 * c2;
          basis.funcs(m, i * n + j) = v;
        }
      }
    }
  } else {
    if (spec.grid.size() != 2 || spec.grid[0] != spec.grid[1])
      throw ConfigError("periodic geometry needs an n x n grid");
    if (n_modes % 2 != 0) throw ConfigError("periodic basis pairs modes: n_modes must be even");
    const std::size_t n = spec.grid[0];
    basis.n_points = n * n;
    const double h = 1.0 / double(n);
    basis.quad_w.assign(n * n, h * h);

    // Half-plane wavevectors: ky > 0, or ky == 0 and kx > 0.
    std::vector<detail::ModeKey> keys;
    const long kmax = long(std::ceil(std::sqrt(double(n_modes)))) + 2;
    for (long kx = -kmax; kx <= kmax; ++kx)
      for (long ky = 0; ky <= kmax; ++ky) {
        if (!(ky > 0 || (ky == 0 && kx > 0))) continue;
        const double k2 = double(kx * kx + ky * ky);
        const double lam =
            spec.sigma * spec.sigma *
            std::pow(4.0 * kPi * kPi * k2 + spec.tau * spec.tau, -spec.ell);
        keys.push_back({-lam, kx, ky});
      }
    std::sort(keys.begin(), keys.end());
    const std::size_t n_vec = n_modes / 2;
    if (keys.size() < n_vec) throw ConfigError("mode enumeration too small");
    basis.lambda.resize(n_modes);
    basis.funcs = Array({n_modes, n * n});
    for (std::size_t m = 0; m < n_vec; ++m) {
      const long kx = keys[m].a, ky = keys[m].b;
      const double lam = -keys[m].neg_lambda;
      basis.lambda[2 * m] = lam;
      basis.lambda[2 * m + 1] = lam;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double phase =
              2.0 * kPi * (double(kx) * double(i) * h + double(ky) * double(j) * h);
          basis.funcs(2 * m, i * n + j) = std::sqrt(2.0) * std::cos(phase);
          basis.funcs(2 * m + 1, i * n + j) = std::sqrt(2.0) * std::sin(phase);
        }
    }
  }

  basis.scaled = Array({basis.n_modes, basis.n_points});
  for (std::size_t m = 0; m < basis.n_modes; ++m) {
    const double s = std::sqrt(basis.lambda[m]);
    for (std::size_t i = 0; i < basis.n_points; ++i)
      basis.scaled(m, i) = s * basis.funcs(m, i);
  }
  return basis;
}

// m = sum_j sqrt(lambda_j) xi_j psi_j using the first d_use coefficients.
// The result carries the grid shape of the basis (1D or n x n).
inline Array synthesize(const KlBasis& basis, const double* xi, std::size_t d_use) {
  if (d_use > basis.n_modes) throw ShapeError("synthesize: more coefficients than modes");
  Array m(basis.spec.grid);
  gemm_nn_acc(xi, basis.scaled.data.data(), m.data.data(), 1, d_use, basis.n_points);
  return m;
}

inline Array synthesize(const KlBasis& basis, const Array& xi) {
  return synthesize(basis, xi.data.data(), xi.numel());
}

// Rows of xi are coefficient vectors: [R, d_use] -> [R, n_points].
inline Array synthesize_batch(const KlBasis& basis, const Array& xi) {
  if (xi.rank() != 2 || xi.shape[1] > basis.n_modes)
    throw ShapeError("synthesize_batch: bad coefficient shape " + shape_str(xi.shape));
  const std::size_t R = xi.shape[0], d = xi.shape[1];
  Array m({R, basis.n_points});
  gemm_nn_acc(xi.data.data(), basis.scaled.data.data(), m.data.data(), R, d,
              basis.n_points);
  return m;
}

struct ReferenceField {
  Array xi;     // [n_ref] coefficients, i.i.d. U[-10, 10]
  Array field;  // full-grid synthesis from all n_ref modes
};

// The ground-truth field always carries 256 modes; inversion targets see
// only the first d of them.
inline ReferenceField make_reference(const KlBasis& basis, std::uint64_t seed,
                                     std::size_t n_ref = 256) {
  if (n_ref > basis.n_modes) throw ConfigError("reference needs a basis with >= 256 modes");
  Rng rng(seed);
  ReferenceField ref;
  ref.xi = Array({n_ref});
  rng.fill_uniform(ref.xi, -10.0, 10.0);
  ref.field = synthesize(basis, ref.xi.data.data(), n_ref);
  return ref;
}

}  // namespace vflow
