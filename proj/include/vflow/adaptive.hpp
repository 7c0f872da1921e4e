#pragma once

// Adaptive inference loop: staged VF training against a surrogate
// misfit, iterative prior-mean updating, perturbation-based dataset
// replacement, and surrogate fine-tuning with a misfit-based stop.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "vflow/bench.hpp"
#include "vflow/nn.hpp"
#include "vflow/surrogate.hpp"
#include "vflow/vfmodel.hpp"

namespace vflow {

struct LoopConfig {
  std::size_t K_max = 20;         // max stages
  std::size_t N_e = 10;           // inner epochs per stage
  std::size_t M = 500;            // samples for mean estimates and datasets
  double alpha = 0.5;             // prior-mean momentum
  double gamma = 3.0;             // perturbation strength
  double epsilon = 0.01;          // relative misfit-change stop
  double vf_lr = 1e-3;
  std::size_t batch = 32;         // VF loss draws per optimizer step
  std::size_t stage_samples = 1024;  // VF draws per epoch
};

inline void validate(const LoopConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
    throw ConfigError("adaptive: alpha must lie in (0, 1]");
  if (!(cfg.gamma >= 0.0)) throw ConfigError("adaptive: gamma must be nonnegative");
  if (!(cfg.epsilon > 0.0)) throw ConfigError("adaptive: epsilon must be positive");
  if (cfg.K_max == 0 || cfg.N_e == 0 || cfg.M == 0 || cfg.batch == 0 || cfg.stage_samples == 0)
    throw ConfigError("adaptive: all loop sizes must be positive");
}

// mu = alpha mu_post + (1 - alpha) mu_prev; the prior covariance stays I.
inline std::vector<double> update_prior_mean(const std::vector<double>& mu_post,
                                             const std::vector<double>& mu_prev, double alpha) {
  if (mu_post.size() != mu_prev.size())
    throw ShapeError("prior update: mean length mismatch");
  std::vector<double> out(mu_post.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = alpha * mu_post[i] + (1.0 - alpha) * mu_prev[i];
  return out;
}

// True when the relative misfit change falls below epsilon.  A zero
// starting misfit cannot improve further and counts as converged.
inline bool stopping_check(double phi_prev, double phi_curr, double epsilon) {
  if (phi_prev < 0.0 || phi_curr < 0.0)
    throw ConfigError("stopping check: misfits must be nonnegative");
  if (phi_prev == 0.0) return true;
  return std::abs(phi_prev - phi_curr) / phi_prev < epsilon;
}

// Adds gamma-scaled standard normal noise in coefficient space.
inline Array perturb_coefficients(const Array& xi, double gamma, Rng& rng) {
  Array out = xi;
  for (double& v : out.data) v += gamma * rng.normal();
  return out;
}

// Fresh fine-tuning set: M model draws, perturbed, solved exactly.
// All data from earlier stages is discarded by construction.  A failed
// solve re-perturbs that sample (three attempts) before giving up.
inline FieldPairs build_stage_dataset(VfModel& vf, const Problem& pb, std::size_t M,
                                      double gamma, std::uint64_t seed) {
  Rng rng(seed);
  Array xi = vf_sample_values(vf, M, rng);
  if (xi.shape[1] != pb.d) throw ShapeError("stage dataset: model dimension mismatch");
  Array xi_hat = perturb_coefficients(xi, gamma, rng);

  const std::size_t n_pts = pb.basis.n_points;
  FieldPairs out;
  out.m = Array({M, n_pts});
  out.u = Array({M, n_pts});
  std::vector<char> ok(M, 0);
  auto solve_row = [&](std::size_t i) {
    try {
      const Array f = pb.input_field(&xi_hat(i, 0), pb.d);
      const Array u = pb.solve_field(f);
      if (!f.all_finite() || !u.all_finite()) return;
      for (std::size_t j = 0; j < n_pts; ++j) {
        out.m(i, j) = f.data[j];
        out.u(i, j) = u.data[j];
      }
      ok[i] = 1;
    } catch (const std::exception&) {
      // leave ok[i] = 0 for the retry pass
    }
  };
  parallel_for(M, solve_row);
  for (int attempt = 0; attempt < 3; ++attempt) {
    bool any = false;
    for (std::size_t i = 0; i < M; ++i) {
      if (ok[i]) continue;
      any = true;
      for (std::size_t j = 0; j < pb.d; ++j)
        xi_hat(i, j) = xi(i, j) + gamma * rng.normal();
      solve_row(i);
    }
    if (!any) break;
  }
  for (std::size_t i = 0; i < M; ++i)
    if (!ok[i])
      throw NumericError("stage dataset: sample " + std::to_string(i) +
                         " failed after 3 retries");
  return out;
}

struct StageRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  double vf_loss = std::numeric_limits<double>::quiet_NaN();
  double phi_prior_exact = std::numeric_limits<double>::quiet_NaN();
  double e_I = std::numeric_limits<double>::quiet_NaN();
  double e_S = std::numeric_limits<double>::quiet_NaN();
  double wallclock_s = 0.0;
};

inline void write_stage_log_csv(const std::string& path, const std::vector<StageRecord>& log) {
  CsvWriter w;
  w.open(path, {"stage", "epoch", "vf_loss", "phi_prior_exact", "e_I", "e_S", "wallclock_s"});
  for (const auto& r : log)
    w.row({std::to_string(r.stage), std::to_string(r.epoch), fmt_g17(r.vf_loss),
           fmt_g17(r.phi_prior_exact), fmt_g17(r.e_I), fmt_g17(r.e_S),
           fmt_g17(r.wallclock_s)});
}

// The loop talks to the forward model exclusively through these hooks,
// so PDE problems and synthetic targets share one implementation.
struct AdaptiveHooks {
  // Rows of -Phi(x) on tape through the (surrogate) forward model.
  std::function<Var(Tape&, Var)> surrogate_neg_misfit;
  // Exact-solver misfit at one point, for stopping checks and logs.
  std::function<double(const std::vector<double>&)> exact_misfit;
  // Rebuild the fine-tuning data and fine-tune the surrogate (optional).
  std::function<void(std::size_t)> refresh_surrogate;
  // Per-stage metrics for the log (optional).
  std::function<double(const std::vector<double>&)> inversion_metric;
  std::function<double(std::size_t)> surrogate_metric;
};

struct AdaptiveResult {
  std::vector<double> mu_prior;
  std::vector<double> mu_post;
  bool converged = false;
  std::size_t stages_run = 0;
  std::size_t restarts = 0;  // stage retries after a non-finite loss
  std::vector<StageRecord> log;
};

namespace detail {

// Unnormalized log target: -Phi(x) + log N(x; mu_prior, I).
inline TargetLogDensity stage_target(const std::function<Var(Tape&, Var)>& neg_misfit,
                                     std::vector<double> mu_prior) {
  return [&neg_misfit, mu = std::move(mu_prior)](Tape& t, Var x) -> Var {
    Array neg_mu({mu.size()});
    for (std::size_t i = 0; i < mu.size(); ++i) neg_mu(i) = -mu[i];
    Var diff = add_rowvec(x, t.constant(neg_mu));
    Var prior = add_const(scale(sum_axis1(square(diff)), -0.5),
                          -0.5 * double(mu.size()) * 1.8378770664093453);  // log(2 pi)
    return add(neg_misfit(t, x), prior);
  };
}

}  // namespace detail

inline AdaptiveResult run_adaptive(VfModel& vf, const AdaptiveHooks& hooks,
                                   const LoopConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (!hooks.surrogate_neg_misfit || !hooks.exact_misfit)
    throw ConfigError("adaptive: misfit hooks are required");
  const std::size_t d = vf.d;
  const std::size_t steps = (cfg.stage_samples + cfg.batch - 1) / cfg.batch;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  ParamRefs refs;
  vf.collect(refs);

  AdaptiveResult res;
  res.mu_prior.assign(d, 0.0);
  double phi_prev = hooks.exact_misfit(res.mu_prior);

  for (std::size_t k = 1; k <= cfg.K_max; ++k) {
    std::vector<Array> ckpt;
    ckpt.reserve(refs.size());
    for (const Param* p : refs) ckpt.push_back(p->value);
    const std::size_t log_mark = res.log.size();
    const std::vector<double> anchor = res.mu_prior;

    double lr = cfg.vf_lr;
    bool stage_done = false;
    for (int attempt = 0; attempt < 2 && !stage_done; ++attempt) {
      try {
        Rng rng(seed_stream(seed, "stage", k));
        Adam opt(refs, {lr});
        std::vector<double> mu_cur = anchor;
        for (std::size_t i = 1; i <= cfg.N_e; ++i) {
          const std::vector<double> mu_post = vf_posterior_mean(vf, cfg.M, rng);
          mu_cur = update_prior_mean(mu_post, anchor, cfg.alpha);
          TargetLogDensity target =
              detail::stage_target(hooks.surrogate_neg_misfit, mu_cur);
          double loss_sum = 0.0;
          for (std::size_t s = 0; s < steps; ++s) {
            Tape t;
            Var loss = vf_unnorm_loss(t, vf, cfg.batch, rng, target);
            loss_sum += t.value(loss)(0);
            zero_grads(refs);
            t.backward(loss);
            opt.step();
          }
          StageRecord rec;
          rec.stage = k;
          rec.epoch = i;
          rec.vf_loss = loss_sum / double(steps);
          rec.wallclock_s = elapsed();
          res.log.push_back(rec);
        }
        res.mu_prior = mu_cur;
        stage_done = true;
      } catch (const NumericError& e) {
        if (attempt == 1)
          throw NumericError("adaptive stage " + std::to_string(k) +
                             " diverged twice (last error: " + e.what() + ")");
        for (std::size_t p = 0; p < refs.size(); ++p) refs[p]->value = ckpt[p];
        res.log.resize(log_mark);
        lr *= 0.5;
        ++res.restarts;
      }
    }

    res.stages_run = k;
    const double phi_curr = hooks.exact_misfit(res.mu_prior);
    {
      StageRecord& last = res.log.back();
      last.phi_prior_exact = phi_curr;
      if (hooks.inversion_metric) {
        Rng mrng(seed_stream(seed, "metrics", k));
        last.e_I = hooks.inversion_metric(vf_posterior_mean(vf, cfg.M, mrng));
      }
      if (hooks.surrogate_metric) last.e_S = hooks.surrogate_metric(k);
      last.wallclock_s = elapsed();
    }
    const bool stop = stopping_check(phi_prev, phi_curr, cfg.epsilon);
    phi_prev = phi_curr;
    if (stop) {
      res.converged = true;
      break;
    }
    // The surrogate refresh runs only on continuing stages, so a
    // converged run keeps the surrogate that produced its last stage.
    if (hooks.refresh_surrogate && k < cfg.K_max) hooks.refresh_surrogate(k);
  }

  Rng prng(seed_stream(seed, "posterior"));
  res.mu_post = vf_posterior_mean(vf, cfg.M, prng);
  return res;
}

// ====================== PDE assembly ======================

struct PdeAdaptiveOptions {
  LoopConfig loop;
  FnoTrainConfig finetune = fno_finetune_defaults();
  std::size_t es_samples = 20;  // perturbations per surrogate-error estimate
  bool stage_metrics = true;
};

// Rows of -Phi through the surrogate: coefficients -> input field ->
// surrogate state -> observation residuals.
inline Var surrogate_neg_misfit_rows(Tape& t, const Problem& pb, FnoModel& fno, Var x) {
  Var basis = t.constant(pb.basis.scaled);  // [d, n_points]
  Var fields = matmul(x, basis);
  Var u = fno_forward(t, fno, fields);
  Var uo = gather_cols(u, pb.obs.idx);
  Array neg_y({pb.lik.y.size()});
  for (std::size_t i = 0; i < pb.lik.y.size(); ++i) neg_y(i) = -pb.lik.y[i];
  Var resid = scale(add_rowvec(uo, t.constant(neg_y)), 1.0 / pb.lik.noise_std);
  return scale(sum_axis1(square(resid)), -0.5);
}

inline AdaptiveHooks make_pde_hooks(const Problem& pb, FnoModel& fno, VfModel& vf,
                                    const PdeAdaptiveOptions& opt, std::uint64_t seed) {
  AdaptiveHooks hooks;
  hooks.surrogate_neg_misfit = [&pb, &fno](Tape& t, Var x) {
    return surrogate_neg_misfit_rows(t, pb, fno, x);
  };
  hooks.exact_misfit = [&pb](const std::vector<double>& m) {
    return misfit(pb.forward(m), pb.lik);
  };
  hooks.refresh_surrogate = [&pb, &fno, &vf, opt, seed](std::size_t stage) {
    FieldPairs data = build_stage_dataset(vf, pb, opt.loop.M, opt.loop.gamma,
                                          seed_stream(seed, "data", stage));
    fno_finetune(fno, data, seed_stream(seed, "finetune", stage), opt.finetune);
  };
  if (opt.stage_metrics) {
    hooks.inversion_metric = [&pb](const std::vector<double>& mu_post) {
      return inversion_error(pb, mu_post);
    };
    hooks.surrogate_metric = [&pb, &fno, opt, seed](std::size_t stage) {
      return surrogate_fitting_error(fno, pb, pb.xi_ref, opt.es_samples,
                                     seed_stream(seed, "es", stage));
    };
  }
  return hooks;
}

inline AdaptiveResult run_adaptive_pde(const Problem& pb, FnoModel& fno, VfModel& vf,
                                       const PdeAdaptiveOptions& opt, std::uint64_t seed) {
  AdaptiveHooks hooks = make_pde_hooks(pb, fno, vf, opt, seed);
  return run_adaptive(vf, hooks, opt.loop, seed);
}

}  // namespace vflow
