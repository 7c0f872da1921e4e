#pragma once

// Baseline posterior samplers: preconditioned Crank-Nicolson MCMC,
// unscented Kalman inversion, Stein variational gradient descent, and
// the affine-invariant stretch-move ensemble sampler.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vflow/array.hpp"
#include "vflow/io.hpp"
#include "vflow/threads.hpp"

namespace vflow {

namespace detail {

// Cholesky factor L (lower) of A + jitter I; false if not positive
// definite.  A must be square and symmetric.
inline bool cholesky(const Array& A, double jitter, Array& L) {
  const std::size_t d = A.shape[0];
  L = Array::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = A(i, j) + (i == j ? jitter : 0.0);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) return false;
        L(i, i) = std::sqrt(s);
      } else {
        L(i, j) = s / L(j, j);
      }
    }
  }
  return true;
}

// Solves (L L^T) x = b in place given the lower Cholesky factor.
inline void chol_solve(const Array& L, double* x) {
  const std::size_t d = L.shape[0];
  for (std::size_t i = 0; i < d; ++i) {
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * x[k];
    x[i] = s / L(i, i);
  }
  for (std::size_t ii = d; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < d; ++k) s -= L(k, ii) * x[k];
    x[ii] = s / L(ii, ii);
  }
}

}  // namespace detail

// Writes one retained sample per row; columns are named xi_1..xi_d.
inline void save_samples_csv(const std::string& path, const Array& samples) {
  if (samples.rank() != 2) throw ShapeError("save_samples_csv: need [n, d] samples");
  CsvWriter w;
  std::vector<std::string> header(samples.shape[1]);
  for (std::size_t j = 0; j < samples.shape[1]; ++j) header[j] = "xi_" + std::to_string(j + 1);
  w.open(path, header);
  std::vector<std::string> row(samples.shape[1]);
  for (std::size_t i = 0; i < samples.shape[0]; ++i) {
    for (std::size_t j = 0; j < samples.shape[1]; ++j) row[j] = fmt_g17(samples(i, j));
    w.row(row);
  }
}

// ====================== pCN ======================
// Proposal sqrt(1-beta^2)(m - m0) + m0 + beta eta preserves the prior
// N(m0, I), so acceptance depends on the misfit alone.

using MisfitFn = std::function<double(const std::vector<double>&)>;

struct PcnState {
  std::vector<double> m;
  double phi = 0.0;  // misfit at m
  std::vector<double> mu0;
  double beta = 0.1;
  std::size_t accepted = 0, proposed = 0;
};

inline PcnState pcn_init(std::vector<double> start, std::vector<double> mu0, double beta,
                         const MisfitFn& misfit) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("pcn: beta must lie in (0, 1]");
  if (start.size() != mu0.size()) throw ShapeError("pcn: start/mu0 size mismatch");
  PcnState st;
  st.m = std::move(start);
  st.mu0 = std::move(mu0);
  st.beta = beta;
  st.phi = misfit(st.m);
  return st;
}

inline void pcn_step(PcnState& st, const MisfitFn& misfit, Rng& rng) {
  const std::size_t d = st.m.size();
  const double keep = std::sqrt(1.0 - st.beta * st.beta);
  std::vector<double> prop(d);
  for (std::size_t i = 0; i < d; ++i)
    prop[i] = keep * (st.m[i] - st.mu0[i]) + st.mu0[i] + st.beta * rng.normal();
  const double phi_prop = misfit(prop);
  ++st.proposed;
  // Draw the acceptance variate unconditionally to keep the stream
  // aligned across accept/reject paths.
  const double u = rng.uniform01();
  if (std::log(u) < st.phi - phi_prop) {
    st.m = std::move(prop);
    st.phi = phi_prop;
    ++st.accepted;
  }
}

struct PcnConfig {
  double beta = 0.1;
  std::size_t iters = 5000;
  double burn_frac = 0.2;
  std::size_t thin = 10;
};

struct SampleRun {
  Array samples;  // [n_kept, d]
  std::vector<double> mean;
  double accept_rate = 0.0;
};

inline SampleRun pcn_run(const MisfitFn& misfit, std::vector<double> mu0,
                         const PcnConfig& cfg, std::uint64_t seed) {
  if (cfg.thin == 0 || cfg.iters == 0) throw ConfigError("pcn: bad schedule");
  const std::size_t d = mu0.size();
  Rng rng(seed);
  PcnState st = pcn_init(mu0, mu0, cfg.beta, misfit);
  const std::size_t burn = std::size_t(cfg.burn_frac * double(cfg.iters));
  std::vector<double> kept;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    pcn_step(st, misfit, rng);
    if (it >= burn && (it - burn) % cfg.thin == 0)
      kept.insert(kept.end(), st.m.begin(), st.m.end());
  }
  SampleRun out;
  const std::size_t n = kept.size() / d;
  out.samples = Array({n, d});
  out.samples.data = std::move(kept);
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += out.samples(i, j);
  for (double& v : out.mean) v /= double(n);
  out.accept_rate = double(st.accepted) / double(st.proposed);
  return out;
}

// ====================== UKI ======================
// Deterministic Gaussian-approximation iteration on the dynamical
// system m' = r0 + alpha (m - r0) + omega, y = G(m') + eta.  Process
// noise defaults to (2 - alpha^2) I and the observation covariance in
// the update is inflated to 2 Sigma_eta, the stationary-prior choice.

using EnsembleForward = std::function<Array(const Array&)>;  // [S, d] -> [S, q]

struct UkiConfig {
  double alpha = 0.5;
  std::vector<double> r0;       // empty = origin
  double sigma_omega = -1.0;    // process-noise variance; negative = (2 - alpha^2)
  double obs_inflation = 2.0;   // Sigma_nu = inflation * Sigma_eta
  double jitter = 1e-10;
};

struct UkiState {
  std::vector<double> mean;
  Array cov;  // [d, d]
  std::size_t jitter_repairs = 0;
};

inline UkiState uki_init(std::size_t d) {
  UkiState st;
  st.mean.assign(d, 0.0);
  st.cov = Array::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) st.cov(i, i) = 1.0;
  return st;
}

// Symmetric sigma-point set: the center plus mean +- sqrt(d) L e_j, so
// off-center weights 1/(2d) reconstruct mean and covariance exactly.
inline Array uki_sigma_points(const std::vector<double>& mean, const Array& cov,
                              double jitter, std::size_t* repairs) {
  const std::size_t d = mean.size();
  Array L;
  if (!detail::cholesky(cov, 0.0, L)) {
    double j = jitter;
    bool ok = false;
    for (int attempt = 0; attempt < 8 && !ok; ++attempt, j *= 10.0) {
      ok = detail::cholesky(cov, j, L);
      if (repairs) ++*repairs;
    }
    if (!ok) throw NumericError("uki: covariance not repairable");
  }
  const double a = std::sqrt(double(d));
  Array pts({2 * d + 1, d});
  for (std::size_t j = 0; j < d; ++j) pts(0, j) = mean[j];
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t j = 0; j < d; ++j) {
      pts(1 + c, j) = mean[j] + a * L(j, c);
      pts(1 + d + c, j) = mean[j] - a * L(j, c);
    }
  return pts;
}

inline void uki_step(UkiState& st, const EnsembleForward& fwd, const std::vector<double>& y,
                     const std::vector<double>& sigma_eta_sq, const UkiConfig& cfg) {
  const std::size_t d = st.mean.size(), q = y.size();
  if (sigma_eta_sq.size() != q) throw ShapeError("uki: noise diag size mismatch");
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw ConfigError("uki: alpha must lie in (0, 1]");
  const double sw = cfg.sigma_omega < 0.0 ? 2.0 - cfg.alpha * cfg.alpha : cfg.sigma_omega;

  // Predict.
  std::vector<double> mh(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double r = cfg.r0.empty() ? 0.0 : cfg.r0[i];
    mh[i] = r + cfg.alpha * (st.mean[i] - r);
  }
  Array ch({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ch(i, j) = cfg.alpha * cfg.alpha * st.cov(i, j) + (i == j ? sw : 0.0);

  Array pts = uki_sigma_points(mh, ch, cfg.jitter, &st.jitter_repairs);
  Array g = fwd(pts);
  if (g.rank() != 2 || g.shape[0] != 2 * d + 1 || g.shape[1] != q)
    throw ShapeError("uki: forward ensemble returned " + shape_str(g.shape));
  if (!g.all_finite()) throw NumericError("uki: non-finite forward ensemble");

  // Center weight is zero, so moments come from the 2d spread points.
  const double w = 1.0 / double(2 * d);
  std::vector<double> gbar(q, 0.0);
  for (std::size_t s = 1; s < 2 * d + 1; ++s)
    for (std::size_t j = 0; j < q; ++j) gbar[j] += w * g(s, j);

  Array S = Array::zeros({q, q});
  Array cmg = Array::zeros({d, q});
  for (std::size_t s = 1; s < 2 * d + 1; ++s) {
    for (std::size_t a = 0; a < q; ++a) {
      const double ga = g(s, a) - gbar[a];
      for (std::size_t b = 0; b < q; ++b) S(a, b) += w * ga * (g(s, b) - gbar[b]);
      for (std::size_t i = 0; i < d; ++i) cmg(i, a) += w * (pts(s, i) - mh[i]) * ga;
    }
  }
  for (std::size_t a = 0; a < q; ++a) S(a, a) += cfg.obs_inflation * sigma_eta_sq[a];

  Array Ls;
  if (!detail::cholesky(S, 0.0, Ls)) {
    if (!detail::cholesky(S, cfg.jitter, Ls)) throw NumericError("uki: singular innovation");
    ++st.jitter_repairs;
  }
  // K = cmg S^{-1}, one solve per parameter row.
  Array K({d, q});
  std::vector<double> buf(q);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t a = 0; a < q; ++a) buf[a] = cmg(i, a);
    detail::chol_solve(Ls, buf.data());
    for (std::size_t a = 0; a < q; ++a) K(i, a) = buf[a];
  }

  for (std::size_t i = 0; i < d; ++i) {
    double upd = 0.0;
    for (std::size_t a = 0; a < q; ++a) upd += K(i, a) * (y[a] - gbar[a]);
    st.mean[i] = mh[i] + upd;
  }
  Array next({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double kc = 0.0;
      for (std::size_t a = 0; a < q; ++a) kc += K(i, a) * cmg(j, a);
      next(i, j) = ch(i, j) - kc;
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double sym = 0.5 * (next(i, j) + next(j, i));
      next(i, j) = sym;
      next(j, i) = sym;
    }
  st.cov = std::move(next);
  if (!st.cov.all_finite() ||
      !std::all_of(st.mean.begin(), st.mean.end(), [](double v) { return std::isfinite(v); }))
    throw NumericError("uki: non-finite state after update");
}

inline void uki_run(UkiState& st, const EnsembleForward& fwd, const std::vector<double>& y,
                    const std::vector<double>& sigma_eta_sq, std::size_t steps,
                    const UkiConfig& cfg,
                    const std::function<void(std::size_t, const UkiState&)>& on_step = nullptr) {
  for (std::size_t s = 0; s < steps; ++s) {
    uki_step(st, fwd, y, sigma_eta_sq, cfg);
    if (on_step) on_step(s, st);
  }
}

// Draws from the Gaussian approximation N(mean, cov).
inline Array uki_sample(const UkiState& st, std::size_t n, Rng& rng, double jitter = 1e-10) {
  const std::size_t d = st.mean.size();
  Array L;
  if (!detail::cholesky(st.cov, 0.0, L) && !detail::cholesky(st.cov, jitter, L))
    throw NumericError("uki_sample: covariance not factorizable");
  Array out({n, d});
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : z) v = rng.normal();
    for (std::size_t r = 0; r < d; ++r) {
      double s = st.mean[r];
      for (std::size_t c = 0; c <= r; ++c) s += L(r, c) * z[c];
      out(i, r) = s;
    }
  }
  return out;
}

// ====================== SVGD ======================
// Gaussian kernel k(x, x') = exp(-||x - x'||^2 / h) with the median
// heuristic h = med^2 / log n, Adagrad-scaled updates.

using GradLogP = std::function<Array(const Array&)>;  // [n, d] -> [n, d]

struct SvgdConfig {
  double step = 1e-2;
  double adagrad_eps = 1e-6;
};

struct SvgdState {
  Array particles;   // [n, d]
  Array grad_accum;  // Adagrad accumulator, same shape
  bool degenerate = false;  // all particles coincided at some step
};

inline SvgdState svgd_init(Array particles) {
  if (particles.rank() != 2 || particles.shape[0] < 2)
    throw ConfigError("svgd: need at least two particles");
  SvgdState st;
  st.grad_accum = Array::zeros(particles.shape);
  st.particles = std::move(particles);
  return st;
}

// Median heuristic bandwidth of the current ensemble.
inline double svgd_bandwidth(const Array& particles) {
  const std::size_t n = particles.shape[0], d = particles.shape[1];
  if (n < 2) throw ConfigError("svgd: bandwidth undefined for n < 2");
  std::vector<double> d2;
  d2.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = particles(i, c) - particles(j, c);
        s += diff * diff;
      }
      d2.push_back(s);
    }
  auto mid = d2.begin() + long(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  return *mid / std::log(double(n));
}

inline void svgd_step(SvgdState& st, const GradLogP& grad_logp, const SvgdConfig& cfg) {
  const std::size_t n = st.particles.shape[0], d = st.particles.shape[1];
  double h = svgd_bandwidth(st.particles);
  if (h <= 0.0) {
    st.degenerate = true;  // coincident ensemble: repulsion vanishes by symmetry
    h = 1.0;
  }
  Array g = grad_logp(st.particles);
  if (g.shape != st.particles.shape) throw ShapeError("svgd: gradient shape mismatch");

  Array phi = Array::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = st.particles(j, c) - st.particles(i, c);
        s += diff * diff;
      }
      const double k = std::exp(-s / h);
      for (std::size_t c = 0; c < d; ++c) {
        const double rep = (2.0 / h) * (st.particles(i, c) - st.particles(j, c));
        phi(i, c) += (k * g(j, c) + k * rep) / double(n);
      }
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      st.grad_accum(i, c) += phi(i, c) * phi(i, c);
      st.particles(i, c) +=
          cfg.step * phi(i, c) / (std::sqrt(st.grad_accum(i, c)) + cfg.adagrad_eps);
    }
}

inline void svgd_run(SvgdState& st, const GradLogP& grad_logp, std::size_t iters,
                     const SvgdConfig& cfg = {}) {
  for (std::size_t it = 0; it < iters; ++it) svgd_step(st, grad_logp, cfg);
}

// ====================== Affine-invariant ensemble ======================
// Stretch move with scale a: z ~ g(z) on [1/a, a] with g proportional
// to 1/sqrt(z), proposal y = x_j + z (x_i - x_j), accepted with
// probability min(1, z^{d-1} p(y)/p(x_i)).

using LogDensityFn = std::function<double(const double*, std::size_t)>;

struct StretchConfig {
  std::size_t walkers = 1000;
  std::size_t burn = 50000;
  std::size_t steps = 10000;
  double a = 2.0;
};

inline SampleRun ensemble_mcmc_run(const LogDensityFn& logp, std::size_t d,
                                   const StretchConfig& cfg, std::uint64_t seed,
                                   const Array* init = nullptr) {
  if (cfg.walkers < 2 * d || cfg.walkers < 2)
    throw ConfigError("stretch sampler: need at least 2d walkers");
  if (cfg.a < 1.0) throw ConfigError("stretch sampler: scale must be >= 1");
  const std::size_t W = cfg.walkers;
  Rng rng(seed);
  Array x = init ? *init : rng.normals({W, d});
  if (x.shape != Shape{W, d}) throw ShapeError("stretch sampler: bad init shape");
  std::vector<double> lp(W);
  parallel_for(W, [&](std::size_t i) { lp[i] = logp(&x(i, 0), d); });

  std::size_t accepted = 0, proposed = 0;
  const std::size_t half = W / 2;
  Array prop({W, d});
  std::vector<double> zs(W), us(W), lp_prop(W);
  std::vector<std::size_t> mate(W);

  std::vector<double> kept;
  const std::size_t total = cfg.burn + cfg.steps;
  kept.reserve(cfg.steps * W * d);
  for (std::size_t step = 0; step < total; ++step) {
    for (int side = 0; side < 2; ++side) {
      const std::size_t lo = side == 0 ? 0 : half;
      const std::size_t hi = side == 0 ? half : W;
      const std::size_t olo = side == 0 ? half : 0;
      const std::size_t ocnt = side == 0 ? W - half : half;
      // Serial draws keep the random stream independent of threading.
      for (std::size_t i = lo; i < hi; ++i) {
        mate[i] = olo + std::size_t(rng.uniform01() * double(ocnt));
        const double u = rng.uniform01();
        const double zr = 1.0 + (cfg.a - 1.0) * u;
        zs[i] = zr * zr / cfg.a;
        us[i] = rng.uniform01();
      }
      parallel_for(hi - lo, [&](std::size_t off) {
        const std::size_t i = lo + off;
        const std::size_t j = mate[i];
        // x_j + z (x_i - x_j), written so z = 1 reproduces x_i exactly.
        for (std::size_t c = 0; c < d; ++c)
          prop(i, c) = x(i, c) + (zs[i] - 1.0) * (x(i, c) - x(j, c));
        lp_prop[i] = logp(&prop(i, 0), d);
      });
      for (std::size_t i = lo; i < hi; ++i) {
        ++proposed;
        const double log_acc = double(d - 1) * std::log(zs[i]) + lp_prop[i] - lp[i];
        if (std::log(us[i]) < log_acc) {
          for (std::size_t c = 0; c < d; ++c) x(i, c) = prop(i, c);
          lp[i] = lp_prop[i];
          ++accepted;
        }
      }
    }
    if (step >= cfg.burn) kept.insert(kept.end(), x.data.begin(), x.data.end());
  }

  SampleRun out;
  const std::size_t n = kept.size() / d;
  out.samples = Array({n, d});
  out.samples.data = std::move(kept);
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += out.samples(i, j);
  for (double& v : out.mean) v /= double(n);
  out.accept_rate = double(accepted) / double(proposed);
  return out;
}

}  // namespace vflow
