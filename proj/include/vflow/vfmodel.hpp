#pragma once

// The dimension-reducing posterior approximator: an unconditional flow
// prior over a k-dim latent, a conditional-flow encoder, and a diagonal
// Gaussian decoder mapping latents to parameter vectors.  Includes the
// unnormalized-target training loss, generative ELBO training, posterior
// sampling, and a plain VAE baseline with the same latent dimension.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/flows.hpp"
#include "vflow/nn.hpp"

namespace vflow {

// Per-row log density of an unnormalized target, built on the tape so
// gradients flow back into the evaluation points.
using TargetLogDensity = std::function<Var(Tape&, Var)>;

struct VfOptions {
  std::size_t prior_layers = 6;
  std::size_t enc_layers = 2;
  std::size_t flow_hidden = 32;
  std::size_t dec_width = 64;
  std::size_t dec_depth = 5;
};

struct VfModel {
  std::size_t d = 0, k = 0;
  FlowStack prior_flow;    // latent prior p_z
  FlowStack encoder_flow;  // q(z | x), conditioned on x
  Mlp decoder;             // k -> 2d: mean and raw sigma
  double sigma_floor = 1e-4;

  void collect(ParamRefs& out) {
    prior_flow.collect(out);
    encoder_flow.collect(out);
    decoder.collect(out);
  }
};

inline VfModel make_vf(std::size_t d, std::size_t k, Rng& rng, const VfOptions& opt = {}) {
  if (k >= d) throw ConfigError("vf: latent dim must be smaller than parameter dim");
  VfModel m;
  m.d = d;
  m.k = k;
  m.prior_flow = make_flow("prior", k, opt.prior_layers, 0, rng, opt.flow_hidden);
  m.encoder_flow = make_flow("enc", k, opt.enc_layers, d, rng, opt.flow_hidden);
  std::vector<std::size_t> dims = {k};
  for (std::size_t l = 0; l < opt.dec_depth; ++l) dims.push_back(opt.dec_width);
  dims.push_back(2 * d);
  m.decoder = Mlp("dec", dims, rng, /*zero_last=*/true);
  return m;
}

// Decoder head: mean and positive sigma for a batch of latents [R, k].
inline std::pair<Var, Var> decoder_params(Tape& t, VfModel& m, Var z) {
  Var out = m.decoder.forward(t, z);
  Var mu = slice_cols(out, 0, m.d);
  Var sigma = add_const(softplus(slice_cols(out, m.d, m.d)), m.sigma_floor);
  return {mu, sigma};
}

inline Var decoder_logdensity(Tape& t, VfModel& m, Var x, Var z) {
  auto [mu, sigma] = decoder_params(t, m, z);
  return gaussian_logpdf_rows(x, mu, sigma);
}

// One joint draw batch through prior flow and decoder, reparameterized
// end to end.
struct VfDraw {
  Var z;        // [n, k] latents
  Var logpz;    // [n] prior-flow density at z
  Var x;        // [n, d] decoded parameter vectors
  Var logpdec;  // [n] decoder density of x given z
};

inline VfDraw vf_draw(Tape& t, VfModel& m, std::size_t n, Rng& rng) {
  FlowSample fs = flow_sample(t, m.prior_flow, n, rng);
  auto [mu, sigma] = decoder_params(t, m, fs.z);
  Var eps = t.constant(rng.normals({n, m.d}));
  Var x = add(mul(eps, sigma), mu);
  Var logpdec = gaussian_logpdf_rows(x, mu, sigma);
  return {fs.z, fs.logq, x, logpdec};
}

// Parameter-space samples as plain values (no gradients retained).
inline Array vf_sample_values(VfModel& m, std::size_t n, Rng& rng) {
  Tape t;
  VfDraw s = vf_draw(t, m, n, rng);
  return t.value(s.x);
}

// Posterior-mean estimate: plain average of n decoded samples.
inline std::vector<double> vf_posterior_mean(VfModel& m, std::size_t n, Rng& rng) {
  Array xs = vf_sample_values(m, n, rng);
  std::vector<double> mean(m.d, 0.0);
  for (std::size_t r = 0; r < xs.shape[0]; ++r)
    for (std::size_t c = 0; c < m.d; ++c) mean[c] += xs(r, c);
  for (double& v : mean) v /= double(xs.shape[0]);
  return mean;
}

// Monte Carlo estimate of the forward KL between the model joint and
// the target joint q(z|x) phat(x), up to the target's log normalizer:
//   (1/M) sum [ log p_dec + log p_z - log q_enc - log phat ].
// Minimizing it fits the model to the unnormalized target.
inline Var vf_unnorm_loss(Tape& t, VfModel& m, std::size_t M, Rng& rng,
                          const TargetLogDensity& target) {
  VfDraw s = vf_draw(t, m, M, rng);
  Var logq = flow_logdensity(t, m.encoder_flow, s.z, &s.x);
  Var logphat = target(t, s.x);
  Var rows = sub(sub(add(s.logpdec, s.logpz), logq), logphat);
  const Array& rv = t.value(rows);
  for (std::size_t r = 0; r < rv.numel(); ++r)
    if (!std::isfinite(rv(r))) {
      const Array& xv = t.value(s.x);
      std::string msg = "vf loss non-finite at sample " + std::to_string(r) + ", xi = [";
      for (std::size_t c = 0; c < std::min<std::size_t>(m.d, 4); ++c)
        msg += (c ? ", " : "") + std::to_string(xv(r, c));
      msg += m.d > 4 ? ", ...]" : "]";
      throw NumericError(msg);
    }
  return mean_all(rows);
}

// Generative ELBO over a data batch, one latent draw per datum:
//   (1/R) sum [ log p_dec(x|z) + log p_z(z) - log q(z|x) ],  z ~ q(.|x).
inline Var vf_elbo(Tape& t, VfModel& m, Var x_batch, Rng& rng) {
  const std::size_t R = t.value(x_batch).shape[0];
  FlowSample es = flow_sample(t, m.encoder_flow, R, rng, &x_batch);
  Var rec = decoder_logdensity(t, m, x_batch, es.z);
  Var logpz = flow_logdensity(t, m.prior_flow, es.z);
  return mean_all(add(sub(rec, es.logq), logpz));
}

// ---------------------------------------------------------------------------
// VAE baseline: Gaussian encoder, fixed N(0, I) prior, same decoder
// family and latent dimension.

struct VaeBaseline {
  std::size_t d = 0, k = 0;
  Mlp encoder;  // d -> 2k
  Mlp decoder;  // k -> 2d
  double sigma_floor = 1e-4;

  void collect(ParamRefs& out) {
    encoder.collect(out);
    decoder.collect(out);
  }
};

inline VaeBaseline make_vae(std::size_t d, std::size_t k, Rng& rng,
                            const VfOptions& opt = {}) {
  VaeBaseline v;
  v.d = d;
  v.k = k;
  std::vector<std::size_t> enc_dims = {d};
  for (std::size_t l = 0; l < opt.dec_depth; ++l) enc_dims.push_back(opt.dec_width);
  enc_dims.push_back(2 * k);
  v.encoder = Mlp("vae.enc", enc_dims, rng, /*zero_last=*/true);
  std::vector<std::size_t> dec_dims = {k};
  for (std::size_t l = 0; l < opt.dec_depth; ++l) dec_dims.push_back(opt.dec_width);
  dec_dims.push_back(2 * d);
  v.decoder = Mlp("vae.dec", dec_dims, rng, /*zero_last=*/true);
  return v;
}

struct VaeElbo {
  Var loss;      // negative ELBO (minimize)
  Var kl_mean;   // mean analytic KL(q(z|x) || N(0, I))
  Var rec_mean;  // mean reconstruction log density
};

inline VaeElbo vae_elbo_loss(Tape& t, VaeBaseline& v, Var x_batch, Rng& rng) {
  const std::size_t R = t.value(x_batch).shape[0];
  Var enc = v.encoder.forward(t, x_batch);
  Var mu = slice_cols(enc, 0, v.k);
  Var sigma = add_const(softplus(slice_cols(enc, v.k, v.k)), v.sigma_floor);
  // KL(N(mu, sigma^2) || N(0, 1)) = 0.5 sum (mu^2 + sigma^2 - 1 - log sigma^2).
  Var kl = scale(sum_axis1(sub(add(square(mu), square(sigma)),
                               add_const(scale(vlog(sigma), 2.0), 1.0))),
                 0.5);
  Var eps = t.constant(rng.normals({R, v.k}));
  Var z = add(mul(eps, sigma), mu);
  Var dec = v.decoder.forward(t, z);
  Var dmu = slice_cols(dec, 0, v.d);
  Var dsigma = add_const(softplus(slice_cols(dec, v.d, v.d)), v.sigma_floor);
  Var rec = gaussian_logpdf_rows(x_batch, dmu, dsigma);
  return {mean_all(sub(kl, rec)), mean_all(kl), mean_all(rec)};
}

}  // namespace vflow
