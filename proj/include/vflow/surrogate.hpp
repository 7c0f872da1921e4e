#pragma once

// Fourier neural operator surrogate for the PDE forward maps: lift to a
// channel space, four spectral-mixing layers with pointwise bypasses,
// and a pointwise projection back to a scalar state field.  Spectral
// transforms are direct trigonometric contractions, so FFT-unfriendly
// grids (71 x 71) cost the same code path as friendly ones.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/forward.hpp"
#include "vflow/io.hpp"
#include "vflow/nn.hpp"
#include "vflow/threads.hpp"

namespace vflow {

// Fixed trigonometric transform pair.  contract^T maps a field on N
// nodes to K (cos, sin) coefficient pairs laid out as adjacent rows;
// expand maps coefficients back to the grid.
struct SpectralBasis {
  Array contract;  // [N, 2K]
  Array expand;    // [2K, N]
  std::size_t pairs = 0;
};

// 1D modes k = 0..modes-1 over x_j; columns orthonormal on periodic
// grids.  The k = 0 sine column is identically zero.
inline SpectralBasis make_fourier_basis_1d(std::size_t n, std::size_t modes, bool periodic) {
  if (modes == 0 || modes > n / 2) throw ConfigError("fourier basis: need 0 < modes <= n/2");
  SpectralBasis sb;
  sb.pairs = modes;
  sb.contract = Array::zeros({n, 2 * modes});
  for (std::size_t k = 0; k < modes; ++k) {
    const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / double(n));
    for (std::size_t j = 0; j < n; ++j) {
      const double x = periodic ? double(j) / double(n) : double(j) / double(n - 1);
      sb.contract(j, 2 * k) = s * std::cos(2.0 * kPi * double(k) * x);
      if (k > 0) sb.contract(j, 2 * k + 1) = s * std::sin(2.0 * kPi * double(k) * x);
    }
  }
  sb.expand = Array({2 * modes, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < 2 * modes; ++c) sb.expand(c, j) = sb.contract(j, c);
  return sb;
}

// 2D wavevectors with |k1|, |k2| < modes, one representative per
// conjugate pair: k1 = 0 keeps k2 >= 0, k1 > 0 keeps all k2.
inline SpectralBasis make_fourier_basis_2d(std::size_t n, std::size_t modes, bool periodic) {
  if (modes == 0 || modes > n / 2) throw ConfigError("fourier basis: need 0 < modes <= n/2");
  std::vector<std::pair<long, long>> ks;
  for (long k2 = 0; k2 < long(modes); ++k2) ks.emplace_back(0, k2);
  for (long k1 = 1; k1 < long(modes); ++k1)
    for (long k2 = -long(modes) + 1; k2 < long(modes); ++k2) ks.emplace_back(k1, k2);
  const std::size_t N = n * n, K = ks.size();
  const double h = periodic ? 1.0 / double(n) : 1.0 / double(n - 1);
  SpectralBasis sb;
  sb.pairs = K;
  sb.contract = Array::zeros({N, 2 * K});
  for (std::size_t k = 0; k < K; ++k) {
    const auto [k1, k2] = ks[k];
    const double s = std::sqrt((k1 == 0 && k2 == 0 ? 1.0 : 2.0) / double(N));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double ph = 2.0 * kPi * (double(k1) * double(i) * h + double(k2) * double(j) * h);
        sb.contract(i * n + j, 2 * k) = s * std::cos(ph);
        if (k1 != 0 || k2 != 0) sb.contract(i * n + j, 2 * k + 1) = s * std::sin(ph);
      }
  }
  sb.expand = Array({2 * K, N});
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t c = 0; c < 2 * K; ++c) sb.expand(c, j) = sb.contract(j, c);
  return sb;
}

struct FnoConfig {
  std::size_t grid = 0;   // nodes per axis
  std::size_t dim = 1;    // 1 or 2
  bool periodic = false;
  std::size_t width = 64;
  std::size_t modes = 16;  // retained frequencies per axis
  std::size_t depth = 4;
  std::size_t proj_hidden = 128;
  bool coord_channels = true;
};

inline FnoConfig fno_config_for(ProblemKind kind) {
  FnoConfig c;
  switch (kind) {
    case ProblemKind::darcy1d:
      c = {1024, 1, false, 64, 16, 4, 128, true};
      break;
    case ProblemKind::darcy2d:
      c = {71, 2, false, 32, 12, 4, 128, true};
      break;
    case ProblemKind::ns2d:
      c = {128, 2, true, 32, 12, 4, 128, true};
      break;
  }
  return c;
}

// One spectral block: per-mode complex channel matrices plus a
// pointwise linear bypass.
struct SpectralLayer {
  Param weights;  // [K, 2, W, W] (re, im)
  Mlp bypass;     // W -> W pointwise linear
};

struct FnoModel {
  FnoConfig cfg;
  std::size_t n_points = 0;
  SpectralBasis basis;
  Array coords;  // [N, dim]
  Mlp lift;      // in channels -> width, pointwise linear
  std::vector<SpectralLayer> layers;
  Mlp project;   // width -> hidden -> 1, pointwise

  std::size_t in_channels() const { return 1 + (cfg.coord_channels ? cfg.dim : 0); }

  void collect(ParamRefs& out) {
    lift.collect(out);
    for (auto& l : layers) {
      out.push_back(&l.weights);
      l.bypass.collect(out);
    }
    project.collect(out);
  }
};

inline FnoModel make_fno(const FnoConfig& cfg, Rng& rng) {
  if (cfg.dim != 1 && cfg.dim != 2) throw ConfigError("fno: dim must be 1 or 2");
  if (cfg.grid < 4) throw ConfigError("fno: grid too small");
  FnoModel m;
  m.cfg = cfg;
  m.n_points = cfg.dim == 1 ? cfg.grid : cfg.grid * cfg.grid;
  m.basis = cfg.dim == 1 ? make_fourier_basis_1d(cfg.grid, cfg.modes, cfg.periodic)
                         : make_fourier_basis_2d(cfg.grid, cfg.modes, cfg.periodic);
  const double h = cfg.periodic ? 1.0 / double(cfg.grid) : 1.0 / double(cfg.grid - 1);
  m.coords = Array({m.n_points, cfg.dim});
  if (cfg.dim == 1) {
    for (std::size_t j = 0; j < cfg.grid; ++j) m.coords(j, 0) = double(j) * h;
  } else {
    for (std::size_t i = 0; i < cfg.grid; ++i)
      for (std::size_t j = 0; j < cfg.grid; ++j) {
        m.coords(i * cfg.grid + j, 0) = double(i) * h;
        m.coords(i * cfg.grid + j, 1) = double(j) * h;
      }
  }
  m.lift = Mlp("fno.lift", {m.in_channels(), cfg.width}, rng);
  const double wb = 1.0 / double(cfg.width * cfg.width);
  m.layers.resize(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    Array w({m.basis.pairs, 2, cfg.width, cfg.width});
    rng.fill_uniform(w, -wb, wb);
    m.layers[l].weights = Param("fno.spec" + std::to_string(l), std::move(w));
    m.layers[l].bypass = Mlp("fno.byp" + std::to_string(l), {cfg.width, cfg.width}, rng);
  }
  m.project = Mlp("fno.proj", {cfg.width, cfg.proj_hidden, 1}, rng);
  return m;
}

// Differentiable surrogate evaluation: input fields [B, N] to predicted
// state fields [B, N].
inline Var fno_forward(Tape& t, FnoModel& m, Var fields) {
  const Array& fv = t.value(fields);
  if (fv.rank() != 2 || fv.shape[1] != m.n_points)
    throw ShapeError("fno_forward: fields " + shape_str(fv.shape) + " do not match grid of " +
                     std::to_string(m.n_points) + " nodes");
  const std::size_t B = fv.shape[0], N = m.n_points, W = m.cfg.width;

  Var xin = reshape(fields, {B * N, 1});
  if (m.cfg.coord_channels) {
    Array tiled({B * N, m.cfg.dim});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t c = 0; c < m.cfg.dim; ++c)
          tiled(b * N + j, c) = m.coords(j, c);
    xin = concat_cols(xin, t.constant(std::move(tiled)));
  }
  Var v = reshape(m.lift.forward(t, xin), {B, N, W});

  Var phi = t.constant(m.basis.contract);
  Var psi = t.constant(m.basis.expand);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    Var coef = contract_axis1(phi, v);
    Var mixed = cpair_mix(coef, t.param(m.layers[l].weights));
    Var sp = expand_axis1(psi, mixed);
    Var by = reshape(m.layers[l].bypass.forward(t, reshape(v, {B * N, W})), {B, N, W});
    v = add(sp, by);
    if (l + 1 < m.layers.size()) v = gelu(v);
  }
  return reshape(m.project.forward(t, reshape(v, {B * N, W})), {B, N});
}

// Inference-only evaluation, chunked to bound tape memory.
inline Array fno_predict(FnoModel& m, const Array& fields, std::size_t chunk = 16) {
  if (fields.rank() != 2) throw ShapeError("fno_predict: need [n, points] rows");
  const std::size_t n = fields.shape[0], N = fields.shape[1];
  Array out({n, N});
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    Array part({hi - lo, N});
    std::copy(fields.data.begin() + long(lo * N), fields.data.begin() + long(hi * N),
              part.data.begin());
    Tape t;
    const Array& pred = t.value(fno_forward(t, m, t.constant(std::move(part))));
    std::copy(pred.data.begin(), pred.data.end(), out.data.begin() + long(lo * N));
  }
  return out;
}

// Mean over rows of ||pred - truth|| / ||truth||.
inline Var relative_l2_rows(Var pred, Var truth) {
  Var num = sum_axis1(square(sub(pred, truth)));
  Var den = sum_axis1(square(truth));
  return vsqrt(div(num, den));
}

inline Var relative_l2_loss(Var pred, Var truth) {
  return mean_all(relative_l2_rows(pred, truth));
}

// ====================== Datasets ======================

struct FieldPairs {
  Array m;  // [n, N] input fields
  Array u;  // [n, N] solved states
  std::size_t size() const { return m.rank() == 2 ? m.shape[0] : 0; }
};

// Solves the exact forward map on each row of coefficient draws.
inline FieldPairs dataset_from_coefficients(const Problem& pb, const Array& xi) {
  if (xi.rank() != 2 || xi.shape[1] != pb.d) throw ShapeError("dataset: xi must be [n, d]");
  const std::size_t n = xi.shape[0];
  FieldPairs out;
  out.m = Array({n, pb.basis.n_points});
  std::size_t n_state = 0;
  {
    Array f = pb.input_field(xi.data.data(), pb.d);
    Array u = pb.solve_field(f);
    n_state = u.numel();
    out.u = Array({n, n_state});
    std::copy(f.data.begin(), f.data.end(), out.m.data.begin());
    std::copy(u.data.begin(), u.data.end(), out.u.data.begin());
  }
  parallel_for(n - 1, [&](std::size_t idx) {
    const std::size_t i = idx + 1;
    Array f = pb.input_field(xi.data.data() + i * pb.d, pb.d);
    Array u = pb.solve_field(f);
    std::copy(f.data.begin(), f.data.end(), out.m.data.begin() + long(i * out.m.shape[1]));
    std::copy(u.data.begin(), u.data.end(), out.u.data.begin() + long(i * n_state));
  });
  return out;
}

// Prior-predictive training set: coefficients drawn N(0, I).
inline FieldPairs make_prior_dataset(const Problem& pb, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Array xi = rng.normals({n, pb.d});
  return dataset_from_coefficients(pb, xi);
}

inline void save_pairs(const std::string& path, const FieldPairs& fp) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_grid(os, fp.m);
  write_grid(os, fp.u);
  if (!os) throw ConfigError("write failed on " + path);
}

inline FieldPairs load_pairs(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  FieldPairs fp;
  if (!read_grid(is, fp.m) || !read_grid(is, fp.u))
    throw ConfigError(path + " does not hold a field-pair dataset");
  if (fp.m.rank() != 2 || fp.u.rank() != 2 || fp.m.shape[0] != fp.u.shape[0])
    throw ConfigError(path + ": inconsistent pair shapes");
  return fp;
}

// ====================== Training ======================

struct FnoTrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch = 25;
  double lr = 1e-3;
  std::size_t halve_every = 50;  // epochs per learning-rate halving
};

inline FnoTrainConfig fno_pretrain_defaults() { return {1000, 25, 1e-3, 50}; }
inline FnoTrainConfig fno_finetune_defaults() { return {100, 25, 1e-3, 25}; }

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

// Relative-L2 minimization over shuffled minibatches.  Returns the mean
// loss of the final epoch.
inline double train_fno(FnoModel& m, const FieldPairs& data, const FnoTrainConfig& cfg,
                        std::uint64_t seed, const EpochCallback& on_epoch = nullptr) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("fno training: empty dataset");
  if (cfg.batch == 0 || cfg.epochs == 0) throw ConfigError("fno training: bad schedule");
  ParamRefs ps;
  m.collect(ps);
  Adam opt(ps, {cfg.lr});
  Rng shuffle_rng(seed_stream(seed, "shuffle"));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t N = data.m.shape[1];
  double last_epoch_loss = 0.0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t halvings = cfg.halve_every ? e / cfg.halve_every : 0;
    opt.set_lr(cfg.lr * std::pow(0.5, double(halvings)));
    for (std::size_t i = n; i > 1; --i)
      std::swap(idx[i - 1], idx[std::size_t(shuffle_rng.uniform01() * double(i))]);
    double acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch) {
      const std::size_t hi = std::min(n, lo + cfg.batch);
      Array mb({hi - lo, N}), ub({hi - lo, N});
      for (std::size_t r = lo; r < hi; ++r) {
        std::copy(data.m.data.begin() + long(idx[r] * N),
                  data.m.data.begin() + long((idx[r] + 1) * N),
                  mb.data.begin() + long((r - lo) * N));
        std::copy(data.u.data.begin() + long(idx[r] * N),
                  data.u.data.begin() + long((idx[r] + 1) * N),
                  ub.data.begin() + long((r - lo) * N));
      }
      Tape t;
      Var pred = fno_forward(t, m, t.constant(std::move(mb)));
      Var loss = relative_l2_loss(pred, t.constant(std::move(ub)));
      acc += t.value(loss)(0);
      ++batches;
      zero_grads(ps);
      t.backward(loss);
      opt.step();
    }
    last_epoch_loss = acc / double(batches);
    if (on_epoch) on_epoch(e, last_epoch_loss);
  }
  return last_epoch_loss;
}

inline double fno_pretrain(FnoModel& m, const FieldPairs& data, std::uint64_t seed,
                           const FnoTrainConfig& cfg = fno_pretrain_defaults(),
                           const EpochCallback& on_epoch = nullptr) {
  return train_fno(m, data, cfg, seed, on_epoch);
}

inline double fno_finetune(FnoModel& m, const FieldPairs& data, std::uint64_t seed,
                           const FnoTrainConfig& cfg = fno_finetune_defaults(),
                           const EpochCallback& on_epoch = nullptr) {
  if (data.size() == 0) throw ConfigError("fno_finetune: empty dataset");
  return train_fno(m, data, cfg, seed, on_epoch);
}

// ====================== Surrogate fitting error ======================
// Mean relative L2 distance between surrogate and exact states at N
// standard-normal perturbations of a reference coefficient vector.
// Depends on states only, never on observations or noise.

using BatchPredictor = std::function<Array(const Array&)>;  // [n, N] -> [n, N]

inline double surrogate_fitting_error(const BatchPredictor& predict, const Problem& pb,
                                      const std::vector<double>& xi_ref, std::size_t N_eval,
                                      std::uint64_t seed) {
  // The reference coefficients may live in the full reference expansion
  // or in the truncated inference basis; synthesize with whichever one
  // matches the vector length.
  const KlBasis* basis = xi_ref.size() == pb.basis.n_modes      ? &pb.basis
                         : xi_ref.size() == pb.basis_ref.n_modes ? &pb.basis_ref
                                                                  : nullptr;
  if (basis == nullptr) throw ShapeError("fitting error: xi_ref matches no basis");
  if (N_eval == 0) throw ConfigError("fitting error: need N > 0");
  const std::size_t d = xi_ref.size();
  Rng rng(seed);
  Array xi({N_eval, d});
  for (std::size_t i = 0; i < N_eval; ++i)
    for (std::size_t j = 0; j < d; ++j) xi(i, j) = xi_ref[j] + rng.normal();
  Array fields = synthesize_batch(*basis, xi);

  Array states;
  std::size_t P = 0;
  {
    Array f(basis->spec.grid);
    std::copy(fields.data.begin(), fields.data.begin() + long(basis->n_points),
              f.data.begin());
    Array u = pb.solve_field(f);
    P = u.numel();
    states = Array({N_eval, P});
    std::copy(u.data.begin(), u.data.end(), states.data.begin());
  }
  parallel_for(N_eval - 1, [&](std::size_t idx) {
    const std::size_t i = idx + 1;
    Array f(basis->spec.grid);
    std::copy(fields.data.begin() + long(i * basis->n_points),
              fields.data.begin() + long((i + 1) * basis->n_points), f.data.begin());
    Array u = pb.solve_field(f);
    std::copy(u.data.begin(), u.data.end(), states.data.begin() + long(i * P));
  });

  Array pred = predict(fields);
  if (pred.shape != states.shape) throw ShapeError("fitting error: predictor shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < N_eval; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < P; ++j) {
      const double diff = pred(i, j) - states(i, j);
      num += diff * diff;
      den += states(i, j) * states(i, j);
    }
    acc += std::sqrt(num / den);
  }
  return acc / double(N_eval);
}

inline double surrogate_fitting_error(FnoModel& m, const Problem& pb,
                                      const std::vector<double>& xi_ref, std::size_t N_eval,
                                      std::uint64_t seed) {
  return surrogate_fitting_error(
      [&m](const Array& fields) { return fno_predict(m, fields); }, pb, xi_ref, N_eval, seed);
}

}  // namespace vflow
