#pragma once

// Invertible density transforms built from affine coupling layers: an
// unconditional flow with standard-normal base, and a conditional flow
// whose base is a data-dependent diagonal Gaussian.
//
// Direction convention: "forward" is the normalizing direction z -> u
// (latent to base); sampling inverts layer-by-layer.  All transforms are
// built on the tape, so densities and samples are differentiable with
// respect to layer parameters and, for conditional stacks, the
// conditioning input.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/nn.hpp"

namespace vflow {

struct CouplingLayer {
  std::vector<std::size_t> idA, idB;  // disjoint cover of 0..k-1
  Mlp s_net, t_net;                   // |A| (+cond) -> |B|
  double clamp = 5.0;
  bool active() const { return !idA.empty() && !idB.empty(); }
};

struct FlowStack {
  std::size_t k = 0;
  std::size_t cond_dim = 0;  // 0: unconditional, standard-normal base
  std::vector<CouplingLayer> layers;
  Mlp base_net;  // cond_dim -> 2k (mean, raw sigma); conditional only

  bool conditional() const { return cond_dim > 0; }

  void collect(ParamRefs& out) {
    for (auto& l : layers) {
      if (!l.active()) continue;
      l.s_net.collect(out);
      l.t_net.collect(out);
    }
    if (conditional()) base_net.collect(out);
  }
};

// Mask schedule.  When 4 divides k the coordinates form four contiguous
// groups and layer l conditions on groups {l, l+1} (mod 4) to transform
// the other two, so the halves rotate by one group per layer and every
// coordinate is transformed in half the layers.  Otherwise the halves
// alternate between even and odd indices.  Either way the transformed
// half is a function of the untouched half only, and a freshly built
// stack (zero-initialized subnet heads) is exactly the identity map.
inline void coupling_masks(std::size_t k, std::size_t l, std::vector<std::size_t>& idA,
                           std::vector<std::size_t>& idB) {
  for (std::size_t c = 0; c < k; ++c) {
    bool in_a;
    if (k % 4 == 0 && k >= 4) {
      const std::size_t g = c / (k / 4);
      in_a = g == l % 4 || g == (l + 1) % 4;
    } else {
      in_a = (c % 2 == 0) == (l % 2 == 0);
    }
    (in_a ? idA : idB).push_back(c);
  }
}

inline FlowStack make_flow(const std::string& prefix, std::size_t k, std::size_t n_layers,
                           std::size_t cond_dim, Rng& rng, std::size_t hidden = 32) {
  if (k == 0) throw ConfigError("flow: latent dimension must be positive");
  FlowStack st;
  st.k = k;
  st.cond_dim = cond_dim;
  for (std::size_t l = 0; l < n_layers; ++l) {
    CouplingLayer cl;
    coupling_masks(k, l, cl.idA, cl.idB);
    if (cl.active()) {
      const std::string lp = prefix + ".l" + std::to_string(l);
      const std::vector<std::size_t> dims = {cl.idA.size() + cond_dim, hidden, hidden,
                                             cl.idB.size()};
      cl.s_net = Mlp(lp + ".s", dims, rng, /*zero_last=*/true);
      cl.t_net = Mlp(lp + ".t", dims, rng, /*zero_last=*/true);
    }
    st.layers.push_back(std::move(cl));
  }
  if (cond_dim > 0)
    st.base_net = Mlp(prefix + ".base", {cond_dim, hidden, hidden, 2 * k}, rng,
                      /*zero_last=*/true);
  return st;
}

// Data-dependent Gaussian base: (mu, sigma) with a softplus-positive
// sigma floored away from zero.
inline std::pair<Var, Var> flow_base_params(Tape& t, FlowStack& st, Var cond) {
  Var out = st.base_net.forward(t, cond);
  Var mu = slice_cols(out, 0, st.k);
  Var sigma = add_const(softplus(slice_cols(out, st.k, st.k)), 1e-4);
  return {mu, sigma};
}

namespace detail {

// Scatter the (A, B) column blocks back into coordinate order.
inline Var reassemble(Var a_part, Var b_part, const CouplingLayer& cl, std::size_t k) {
  Var cat = concat_cols(a_part, b_part);
  std::vector<std::size_t> perm(k);
  for (std::size_t i = 0; i < cl.idA.size(); ++i) perm[cl.idA[i]] = i;
  for (std::size_t i = 0; i < cl.idB.size(); ++i) perm[cl.idB[i]] = cl.idA.size() + i;
  return permute_cols(cat, perm);
}

inline std::pair<Var, Var> subnet_st(Tape& t, CouplingLayer& cl, Var va, const Var* cond) {
  Var in = cond ? concat_cols(va, *cond) : va;
  Var s = soft_clamp(cl.s_net.forward(t, in), cl.clamp);
  Var tt = cl.t_net.forward(t, in);
  return {s, tt};
}

}  // namespace detail

// One coupling step, normalizing direction: v^B -> v^B*exp(s) + t.
// Returns the new state and the per-row log-determinant.
inline std::pair<Var, Var> couple_forward(Tape& t, CouplingLayer& cl, Var v,
                                          const Var* cond = nullptr) {
  const std::size_t R = t.value(v).shape[0];
  if (!cl.active()) return {v, t.constant(Array::zeros({R}))};
  Var va = gather_cols(v, cl.idA);
  Var vb = gather_cols(v, cl.idB);
  auto [s, tt] = detail::subnet_st(t, cl, va, cond);
  Var vb_new = add(mul(vb, vexp(s)), tt);
  return {detail::reassemble(va, vb_new, cl, t.value(v).shape[1]), sum_axis1(s)};
}

// Inverse coupling: v^B -> (v^B - t) * exp(-s); same s, t as forward.
inline std::pair<Var, Var> couple_inverse(Tape& t, CouplingLayer& cl, Var v,
                                          const Var* cond = nullptr) {
  const std::size_t R = t.value(v).shape[0];
  if (!cl.active()) return {v, t.constant(Array::zeros({R}))};
  Var va = gather_cols(v, cl.idA);
  Var vb = gather_cols(v, cl.idB);
  auto [s, tt] = detail::subnet_st(t, cl, va, cond);
  Var vb_pre = mul(sub(vb, tt), vexp(neg(s)));
  return {detail::reassemble(va, vb_pre, cl, t.value(v).shape[1]), sum_axis1(s)};
}

// z [R, k] -> (u, sum of log-determinants [R]) through every layer.
inline std::pair<Var, Var> flow_forward(Tape& t, FlowStack& st, Var z,
                                        const Var* cond = nullptr) {
  const std::size_t R = t.value(z).shape[0];
  Var v = z;
  Var logdet = t.constant(Array::zeros({R}));
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    auto [vn, ld] = couple_forward(t, st.layers[l], v, cond);
    v = vn;
    logdet = add(logdet, ld);
  }
  return {v, logdet};
}

// u [R, k] -> (z, sum of log-determinants of the forward map at z).
inline std::pair<Var, Var> flow_inverse(Tape& t, FlowStack& st, Var u,
                                        const Var* cond = nullptr) {
  const std::size_t R = t.value(u).shape[0];
  Var v = u;
  Var logdet = t.constant(Array::zeros({R}));
  for (std::size_t l = st.layers.size(); l-- > 0;) {
    auto [vp, ld] = couple_inverse(t, st.layers[l], v, cond);
    v = vp;
    logdet = add(logdet, ld);
  }
  return {v, logdet};
}

// log density of z under the flow: base(f(z)) plus the log-determinant.
inline Var flow_logdensity(Tape& t, FlowStack& st, Var z, const Var* cond = nullptr) {
  if (st.conditional() != (cond != nullptr))
    throw ConfigError("flow: conditioning input mismatch");
  auto [u, logdet] = flow_forward(t, st, z, cond);
  Var base = st.conditional()
                 ? [&] {
                     auto [mu, sigma] = flow_base_params(t, st, *cond);
                     return gaussian_logpdf_rows(u, mu, sigma);
                   }()
                 : std_normal_logpdf_rows(u);
  return add(base, logdet);
}

struct FlowSample {
  Var z;     // [n, k] samples
  Var logq;  // [n] log density of each sample
  Var u;     // [n, k] base draws
};

// Draw from the base and invert; the sample path is reparameterized, so
// gradients reach layer parameters, base networks, and cond.
inline FlowSample flow_sample(Tape& t, FlowStack& st, std::size_t n, Rng& rng,
                              const Var* cond = nullptr) {
  if (st.conditional() != (cond != nullptr))
    throw ConfigError("flow: conditioning input mismatch");
  Var eps = t.constant(rng.normals({n, st.k}));
  Var u = eps;
  Var base_logp;
  if (st.conditional()) {
    if (t.value(*cond).shape[0] != n) throw ShapeError("flow_sample: cond rows != n");
    auto [mu, sigma] = flow_base_params(t, st, *cond);
    u = add(mul(eps, sigma), mu);
    base_logp = gaussian_logpdf_rows(u, mu, sigma);
  } else {
    base_logp = std_normal_logpdf_rows(u);
  }
  auto [z, logdet] = flow_inverse(t, st, u, cond);
  return {z, add(base_logp, logdet), u};
}

}  // namespace vflow
