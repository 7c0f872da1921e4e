#pragma once

// PDE forward models: steady Darcy flow in 1D/2D and the 2D
// Navier-Stokes vorticity equation, plus observation operators and the
// Gaussian likelihood they feed.
//
// All solvers are pure functions of the discrete input field.  Grids
// follow randfield.hpp: closed grids x_i = i/(n-1) for the Darcy
// problems, periodic x_i = i/n for Navier-Stokes, 2D fields flattened
// row-major as (i, j) -> i*n + j with x1 = i*h and x2 = j*h.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vflow/array.hpp"
#include "vflow/fftcore.hpp"
#include "vflow/randfield.hpp"

namespace vflow {

// ---------------------------------------------------------------------------
// Observation operators: pointwise sampling at fixed grid indices.

struct ObservationOp {
  std::vector<std::size_t> idx;  // flat indices into the solver grid
  std::size_t count() const { return idx.size(); }
};

// m interior points x_j = j/(m+1), j = 1..m, mapped to the nearest node
// of the closed grid x_i = i/(n-1).
inline ObservationOp uniform_interior_1d(std::size_t n_grid, std::size_t m) {
  ObservationOp op;
  op.idx.reserve(m);
  for (std::size_t j = 1; j <= m; ++j) {
    const double x = double(j) / double(m + 1);
    op.idx.push_back(std::size_t(std::llround(x * double(n_grid - 1))));
  }
  return op;
}

// per_axis^2 interior lattice x = (i/(per_axis+1), j/(per_axis+1)),
// nearest node on an n x n grid.  Periodic grids have spacing 1/n, closed
// grids 1/(n-1).
inline ObservationOp uniform_interior_2d(std::size_t n_side, std::size_t per_axis,
                                         bool periodic = false) {
  const double denom = periodic ? double(n_side) : double(n_side - 1);
  ObservationOp op;
  op.idx.reserve(per_axis * per_axis);
  for (std::size_t i = 1; i <= per_axis; ++i)
    for (std::size_t j = 1; j <= per_axis; ++j) {
      const double x1 = double(i) / double(per_axis + 1);
      const double x2 = double(j) / double(per_axis + 1);
      std::size_t gi = std::size_t(std::llround(x1 * denom));
      std::size_t gj = std::size_t(std::llround(x2 * denom));
      if (periodic) {
        gi %= n_side;
        gj %= n_side;
      }
      op.idx.push_back(gi * n_side + gj);
    }
  return op;
}

inline std::vector<double> observe(const Array& u, const ObservationOp& obs) {
  std::vector<double> out(obs.count());
  for (std::size_t k = 0; k < obs.count(); ++k) {
    if (obs.idx[k] >= u.numel())
      throw ConfigError("observe: location " + std::to_string(obs.idx[k]) +
                        " outside a grid of " + std::to_string(u.numel()) + " nodes");
    out[k] = u.data[obs.idx[k]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1D Darcy:  -(e^m p')' = f on (0,1),  p(0) = p(1) = 0.
//
// Second-order finite differences with harmonic-mean face coefficients,
// solved by direct tridiagonal elimination.  f defaults to 1.

inline Array solve_darcy1d(const Array& m, const Array* f_src = nullptr) {
  if (m.shape.size() != 1 || m.numel() < 3)
    throw ShapeError("darcy1d: need a 1D grid of at least 3 nodes");
  if (!m.all_finite()) throw NumericError("darcy1d: non-finite coefficient field");
  const std::size_t n = m.numel();
  if (f_src && f_src->numel() != n) throw ShapeError("darcy1d: source/grid size mismatch");
  const double h = 1.0 / double(n - 1);
  const std::size_t ni = n - 2;

  // face[i]: harmonic mean of e^m at nodes i and i+1.
  std::vector<double> face(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i)
    face[i] = 2.0 / (std::exp(-m.data[i]) + std::exp(-m.data[i + 1]));

  std::vector<double> diag(ni), rhs(ni), upper(ni);
  const double ih2 = 1.0 / (h * h);
  for (std::size_t k = 0; k < ni; ++k) {
    diag[k] = (face[k] + face[k + 1]) * ih2;
    upper[k] = -face[k + 1] * ih2;
    rhs[k] = f_src ? f_src->data[k + 1] : 1.0;
  }
  // Thomas elimination; the matrix is an SPD M-matrix, no pivoting needed.
  for (std::size_t k = 1; k < ni; ++k) {
    const double lower = -face[k] * ih2;
    const double w = lower / diag[k - 1];
    diag[k] -= w * upper[k - 1];
    rhs[k] -= w * rhs[k - 1];
  }
  Array p = Array::zeros({n});
  for (std::size_t k = ni; k-- > 0;) {
    double v = rhs[k];
    if (k + 1 < ni) v -= upper[k] * p.data[k + 2];
    p.data[k + 1] = v / diag[k];
  }
  if (!p.all_finite()) throw NumericError("darcy1d: singular system");
  return p;
}

// ---------------------------------------------------------------------------
// 2D Darcy:  -div(e^m grad p) = f on (0,1)^2,  p = 0 on the boundary.
//
// 5-point finite volume with harmonic-mean face transmissibilities;
// Jacobi-preconditioned CG on the interior unknowns to relative residual
// 1e-10.

inline Array darcy2d_source(std::size_t n) {
  Array f({n, n});
  const double h = 1.0 / double(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x2 = double(j) * h;
      f(i, j) = x2 <= 4.0 / 6.0 ? 1000.0 : (x2 <= 5.0 / 6.0 ? 2000.0 : 3000.0);
    }
  return f;
}

inline Array solve_darcy2d(const Array& m, const Array& f, double cg_rel_tol = 1e-10) {
  if (m.shape.size() != 2 || m.shape[0] != m.shape[1] || m.shape[0] < 3)
    throw ShapeError("darcy2d: need an n x n grid, n >= 3");
  require_same_shape(m, f, "darcy2d source");
  if (!m.all_finite()) throw NumericError("darcy2d: non-finite coefficient field");
  const std::size_t n = m.shape[0];
  const double h = 1.0 / double(n - 1);
  const double ih2 = 1.0 / (h * h);
  const std::size_t ni = n - 2;          // interior nodes per axis
  const std::size_t N = ni * ni;

  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n * n; ++i) k[i] = std::exp(m.data[i]);
  auto harm = [](double a, double b) { return 2.0 * a * b / (a + b); };
  // tx[i*n+j]: face between (i,j) and (i+1,j); ty[i*(n-1)+j]: (i,j)-(i,j+1).
  std::vector<double> tx((n - 1) * n), ty(n * (n - 1));
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j < n; ++j) tx[i * n + j] = harm(k[i * n + j], k[(i + 1) * n + j]);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j + 1 < n; ++j)
      ty[i * (n - 1) + j] = harm(k[i * n + j], k[i * n + j + 1]);

  auto at = [ni](std::size_t i, std::size_t j) { return (i - 1) * ni + (j - 1); };
  std::vector<double> diag(N);
  for (std::size_t i = 1; i <= ni; ++i)
    for (std::size_t j = 1; j <= ni; ++j)
      diag[at(i, j)] = (tx[(i - 1) * n + j] + tx[i * n + j] + ty[i * (n - 1) + j - 1] +
                        ty[i * (n - 1) + j]) *
                       ih2;

  // Matrix-free A p with homogeneous Dirichlet values outside the interior.
  std::vector<double> q(N), r(N), z(N), d(N), x(N, 0.0), b(N);
  auto apply = [&](const std::vector<double>& p, std::vector<double>& out) {
    for (std::size_t i = 1; i <= ni; ++i)
      for (std::size_t j = 1; j <= ni; ++j) {
        const std::size_t c = at(i, j);
        double acc = diag[c] * p[c];
        if (i > 1) acc -= tx[(i - 1) * n + j] * ih2 * p[at(i - 1, j)];
        if (i < ni) acc -= tx[i * n + j] * ih2 * p[at(i + 1, j)];
        if (j > 1) acc -= ty[i * (n - 1) + j - 1] * ih2 * p[at(i, j - 1)];
        if (j < ni) acc -= ty[i * (n - 1) + j] * ih2 * p[at(i, j + 1)];
        out[c] = acc;
      }
  };

  double bnorm2 = 0.0;
  for (std::size_t i = 1; i <= ni; ++i)
    for (std::size_t j = 1; j <= ni; ++j) {
      b[at(i, j)] = f(i, j);
      bnorm2 += f(i, j) * f(i, j);
    }
  Array p = Array::zeros({n, n});
  if (bnorm2 == 0.0) return p;
  const double tol2 = cg_rel_tol * cg_rel_tol * bnorm2;

  r = b;
  for (std::size_t i = 0; i < N; ++i) z[i] = r[i] / diag[i];
  d = z;
  double rz = 0.0;
  for (std::size_t i = 0; i < N; ++i) rz += r[i] * z[i];
  const std::size_t max_iter = 10 * N;
  std::size_t iter = 0;
  for (;; ++iter) {
    double rnorm2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) rnorm2 += r[i] * r[i];
    if (rnorm2 <= tol2) break;
    if (iter >= max_iter)
      throw SolverError("darcy2d: CG exceeded " + std::to_string(max_iter) + " iterations");
    apply(d, q);
    double dq = 0.0;
    for (std::size_t i = 0; i < N; ++i) dq += d[i] * q[i];
    if (!(dq > 0.0)) throw SolverError("darcy2d: CG lost positive-definiteness");
    const double alpha = rz / dq;
    for (std::size_t i = 0; i < N; ++i) {
      x[i] += alpha * d[i];
      r[i] -= alpha * q[i];
    }
    for (std::size_t i = 0; i < N; ++i) z[i] = r[i] / diag[i];
    double rz_new = 0.0;
    for (std::size_t i = 0; i < N; ++i) rz_new += r[i] * z[i];
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < N; ++i) d[i] = z[i] + beta * d[i];
  }
  for (std::size_t i = 1; i <= ni; ++i)
    for (std::size_t j = 1; j <= ni; ++j) p(i, j) = x[at(i, j)];
  return p;
}

// ---------------------------------------------------------------------------
// 2D Navier-Stokes, vorticity form, periodic on [0,1]^2:
//   w_t + u . grad w = nu Lap w + f,   u = (dpsi/dx2, -dpsi/dx1),  -Lap psi = w.
//
// Pseudo-spectral with 2/3-rule dealiasing of the advection product.
// Diffusion is Crank-Nicolson (exact per mode); advection + forcing use
// Heun's explicit two-stage average inside the CN solve.

struct Ns2dConfig {
  double nu = 1e-2;
  double dt = 1e-2;
  int steps = 100;
  double forcing_amp = 0.1;               // 0 turns the forcing off
  std::vector<double>* enstrophy_out = nullptr;  // per-step 0.5*int w^2, start included
};

inline Array solve_ns2d(const Array& omega0, const Ns2dConfig& cfg = {}) {
  if (omega0.shape.size() != 2 || omega0.shape[0] != omega0.shape[1])
    throw ShapeError("ns2d: need an n x n grid");
  if (!omega0.all_finite()) throw NumericError("ns2d: non-finite initial vorticity");
  const std::size_t n = omega0.shape[0];
  const std::size_t nn = n * n;
  const double inv_nn = 1.0 / double(nn);

  // Integer wavenumbers per axis index and the 2/3 dealiasing band.
  std::vector<double> kof(n);
  for (std::size_t i = 0; i < n; ++i)
    kof[i] = i <= n / 2 ? double(i) : double(i) - double(n);
  const double kcut = double(n) / 3.0;

  std::vector<double> lap(nn), denom(nn), amp(nn);
  std::vector<char> keep(nn);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double k2 = kof[i] * kof[i] + kof[j] * kof[j];
      const std::size_t c = i * n + j;
      lap[c] = -4.0 * kPi * kPi * k2;
      denom[c] = 1.0 - 0.5 * cfg.dt * cfg.nu * lap[c];
      amp[c] = 1.0 + 0.5 * cfg.dt * cfg.nu * lap[c];
      keep[c] = std::abs(kof[i]) <= kcut && std::abs(kof[j]) <= kcut;
    }

  std::vector<cplx> w(nn);
  for (std::size_t i = 0; i < nn; ++i) w[i] = cplx(omega0.data[i], 0.0);
  cfft2(w, n, -1);

  std::vector<cplx> fhat(nn, cplx(0.0, 0.0));
  if (cfg.forcing_amp != 0.0) {
    std::vector<cplx> fp(nn);
    const double h = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double s = 2.0 * kPi * (double(i) * h + double(j) * h);
        fp[i * n + j] = cplx(cfg.forcing_amp * (std::sin(s) + std::cos(s)), 0.0);
      }
    cfft2(fp, n, -1);
    fhat = std::move(fp);
  }

  std::vector<cplx> vel(nn), grd(nn), prod(nn), nl1(nn), nl2(nn), wstar(nn);
  // Advection + forcing in spectral space; inputs and output band-limited.
  auto nonlinear = [&](const std::vector<cplx>& what, std::vector<cplx>& out) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t c = i * n + j;
        if (!keep[c] || lap[c] == 0.0) {
          vel[c] = grd[c] = cplx(0.0, 0.0);
          continue;
        }
        const cplx wm = what[c];
        const cplx psi = wm / (-lap[c]);
        const cplx u1 = cplx(0.0, 2.0 * kPi * kof[j]) * psi;    // dpsi/dx2
        const cplx u2 = cplx(0.0, -2.0 * kPi * kof[i]) * psi;   // -dpsi/dx1
        const cplx wx = cplx(0.0, 2.0 * kPi * kof[i]) * wm;
        const cplx wy = cplx(0.0, 2.0 * kPi * kof[j]) * wm;
        vel[c] = u1 + cplx(0.0, 1.0) * u2;  // two real fields per transform
        grd[c] = wx + cplx(0.0, 1.0) * wy;
      }
    cfft2(vel, n, +1);
    cfft2(grd, n, +1);
    for (std::size_t c = 0; c < nn; ++c) {
      const double u1 = vel[c].real() * inv_nn, u2 = vel[c].imag() * inv_nn;
      const double wx = grd[c].real() * inv_nn, wy = grd[c].imag() * inv_nn;
      prod[c] = cplx(u1 * wx + u2 * wy, 0.0);
    }
    cfft2(prod, n, -1);
    for (std::size_t c = 0; c < nn; ++c)
      out[c] = keep[c] ? fhat[c] - prod[c] : cplx(0.0, 0.0);
  };

  auto enstrophy = [&]() {
    double s = 0.0;
    for (std::size_t c = 0; c < nn; ++c) s += std::norm(w[c]);
    return 0.5 * s * inv_nn * inv_nn;
  };
  if (cfg.enstrophy_out) cfg.enstrophy_out->push_back(enstrophy());

  for (int step = 0; step < cfg.steps; ++step) {
    nonlinear(w, nl1);
    for (std::size_t c = 0; c < nn; ++c)
      wstar[c] = (w[c] * amp[c] + cfg.dt * nl1[c]) / denom[c];
    nonlinear(wstar, nl2);
    for (std::size_t c = 0; c < nn; ++c)
      w[c] = (w[c] * amp[c] + 0.5 * cfg.dt * (nl1[c] + nl2[c])) / denom[c];
    for (std::size_t c = 0; c < nn; ++c)
      if (!std::isfinite(w[c].real()) || !std::isfinite(w[c].imag()))
        throw NumericError("ns2d: non-finite state at step " + std::to_string(step));
    if (cfg.enstrophy_out) cfg.enstrophy_out->push_back(enstrophy());
  }

  cfft2(w, n, +1);
  Array out({n, n});
  for (std::size_t c = 0; c < nn; ++c) out.data[c] = w[c].real() * inv_nn;
  return out;
}

// ---------------------------------------------------------------------------
// Likelihood: y = G(xi_ref) + delta * max|G(xi_ref)| * eta, eta ~ N(0, I).

struct Likelihood {
  std::vector<double> y;
  double noise_std = 0.0;
  std::vector<std::size_t> locations;
  std::uint64_t seed = 0;
};

inline Likelihood gen_observation(const std::vector<double>& clean, double delta,
                                  std::uint64_t seed, const ObservationOp& obs) {
  Likelihood lik;
  lik.locations = obs.idx;
  lik.seed = seed;
  double gmax = 0.0;
  for (double v : clean) gmax = std::max(gmax, std::abs(v));
  lik.noise_std = delta * gmax;
  lik.y = clean;
  if (lik.noise_std > 0.0) {
    Rng rng(seed);
    for (double& v : lik.y) v += lik.noise_std * rng.normal();
  }
  return lik;
}

// 0.5 * || (y - G) / sigma ||^2 with per-entry sigma.
inline double misfit_diag(const std::vector<double>& g, const std::vector<double>& y,
                          const std::vector<double>& sigma) {
  if (g.size() != y.size() || sigma.size() != y.size())
    throw ShapeError("misfit: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = (y[i] - g[i]) / sigma[i];
    acc += r * r;
  }
  return 0.5 * acc;
}

inline double misfit(const std::vector<double>& g, const Likelihood& lik) {
  if (g.size() != lik.y.size()) throw ShapeError("misfit: dimension mismatch");
  if (!(lik.noise_std > 0.0)) throw ConfigError("misfit: noise level must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < lik.y.size(); ++i) {
    const double r = (lik.y[i] - g[i]) / lik.noise_std;
    acc += r * r;
  }
  return 0.5 * acc;
}

// log of the unnormalized posterior: -Phi(xi, y) - 0.5 ||xi - mu0||^2.
inline double log_unnorm_posterior(const std::vector<double>& g, const Likelihood& lik,
                                   const double* xi, const double* mu0, std::size_t d) {
  double prior = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double r = xi[i] - (mu0 ? mu0[i] : 0.0);
    prior += r * r;
  }
  return -misfit(g, lik) - 0.5 * prior;
}

// ---------------------------------------------------------------------------
// Problem assembly: grids, bases, reference draw, and noisy data for one
// inverse problem instance.

enum class ProblemKind { darcy1d, darcy2d, ns2d };

inline GrfSpec grf_spec_for(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::darcy1d:
      return GrfSpec{Geometry::interval_neumann, 2.0, 1.0, 2.0, {1024}};
    case ProblemKind::darcy2d:
      return GrfSpec{Geometry::square_neumann, 1.0, 2.0, 3.0, {71, 71}};
    default:
      return GrfSpec{Geometry::square_periodic, 25.0, 2.0, 2.5, {128, 128}};
  }
}

struct Problem {
  ProblemKind kind = ProblemKind::darcy1d;
  std::size_t d = 0;
  double noise_delta = 0.0;
  KlBasis basis;      // first d modes, for inference
  KlBasis basis_ref;  // 256-mode reference expansion
  std::vector<double> xi_ref;
  Array ref_field;
  Array f2d;          // darcy2d source (unused otherwise)
  ObservationOp obs;
  Likelihood lik;

  // Input field m (or w0) on the solver grid from d coefficients.
  Array input_field(const double* xi, std::size_t nxi) const {
    if (nxi != d) throw ShapeError("forward: expected " + std::to_string(d) + " coefficients");
    return synthesize(basis, xi, d);
  }

  // Full PDE solution field for the given coefficients.
  Array solve_field(const Array& infield) const {
    switch (kind) {
      case ProblemKind::darcy1d:
        return solve_darcy1d(infield);
      case ProblemKind::darcy2d:
        return solve_darcy2d(infield, f2d);
      default:
        return solve_ns2d(infield);
    }
  }

  std::vector<double> forward(const double* xi, std::size_t nxi) const {
    return observe(solve_field(input_field(xi, nxi)), obs);
  }
  std::vector<double> forward(const std::vector<double>& xi) const {
    return forward(xi.data(), xi.size());
  }
};

inline Problem make_problem(ProblemKind kind, std::size_t d, double delta,
                            std::uint64_t master_seed) {
  if (d == 0 || d > 256)
    throw ConfigError("make_problem: d must be in [1, 256], the reference expansion order");
  if (!(delta > 0.0))
    throw ConfigError("make_problem: noise level delta must be positive");
  Problem pb;
  pb.kind = kind;
  pb.d = d;
  pb.noise_delta = delta;
  const GrfSpec spec = grf_spec_for(kind);
  pb.basis_ref = build_basis(spec, 256);
  pb.basis = build_basis(spec, d);
  ReferenceField ref = make_reference(pb.basis_ref, seed_stream(master_seed, "reference"));
  pb.xi_ref = std::move(ref.xi.data);
  pb.ref_field = std::move(ref.field);

  const std::size_t n = spec.grid[0];
  switch (kind) {
    case ProblemKind::darcy1d:
      pb.obs = uniform_interior_1d(n, 31);
      break;
    case ProblemKind::darcy2d:
      pb.f2d = darcy2d_source(n);
      pb.obs = uniform_interior_2d(n, 6, false);
      break;
    default:
      pb.obs = uniform_interior_2d(n, 6, true);
      break;
  }
  const std::vector<double> clean = observe(pb.solve_field(pb.ref_field), pb.obs);
  pb.lik = gen_observation(clean, delta, seed_stream(master_seed, "noise"), pb.obs);
  return pb;
}

}  // namespace vflow
