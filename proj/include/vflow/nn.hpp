#pragma once

// Small dense networks and the Adam optimizer.  Models own their Param
// storage; optimizers and checkpoints reference params by pointer, so a
// model's param containers must not be resized after construction.

#include <cmath>
#include <string>
#include <vector>

#include "vflow/autodiff.hpp"

namespace vflow {

using ParamRefs = std::vector<Param*>;

inline std::size_t total_params(const ParamRefs& ps) {
  std::size_t n = 0;
  for (const Param* p : ps) n += p->numel();
  return n;
}

inline void zero_grads(const ParamRefs& ps) {
  for (Param* p : ps) p->zero_grad();
}

// Fully connected network: linear layers with tanh between them and a
// linear head.  dims = {in, h1, ..., out}.  zero_last initializes the
// head to zero so the enclosing module starts as an identity/zero map.
struct Mlp {
  std::vector<Param> weights;
  std::vector<Param> biases;

  Mlp() = default;

  Mlp(const std::string& prefix, const std::vector<std::size_t>& dims, Rng& rng,
      bool zero_last = false) {
    if (dims.size() < 2) throw ConfigError("Mlp needs at least in/out dims");
    const std::size_t L = dims.size() - 1;
    weights.reserve(L);
    biases.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
      Array w({dims[l], dims[l + 1]});
      Array b({dims[l + 1]});
      if (!(zero_last && l == L - 1)) {
        const double s = std::sqrt(6.0 / double(dims[l] + dims[l + 1]));
        rng.fill_uniform(w, -s, s);
      }
      weights.emplace_back(prefix + ".w" + std::to_string(l), std::move(w));
      biases.emplace_back(prefix + ".b" + std::to_string(l), std::move(b));
    }
  }

  std::size_t layers() const { return weights.size(); }

  Var forward(Tape& t, Var x) {
    for (std::size_t l = 0; l < layers(); ++l) {
      x = add_rowvec(matmul(x, t.param(weights[l])), t.param(biases[l]));
      if (l + 1 < layers()) x = vtanh(x);
    }
    return x;
  }

  void collect(ParamRefs& out) {
    for (auto& p : weights) out.push_back(&p);
    for (auto& p : biases) out.push_back(&p);
  }
};

// ====================== Adam ======================

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamRefs params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Param* p : params_) {
      m_.push_back(Array::zeros(p->value.shape));
      v_.push_back(Array::zeros(p->value.shape));
    }
  }

  void zero_grads() { vflow::zero_grads(params_); }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }

  // One update from the gradients currently held in the params.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      double* m = m_[i].data.data();
      double* v = v_[i].data.data();
      double* th = p.value.data.data();
      const double* g = p.grad.data.data();
      for (std::size_t j = 0; j < p.numel(); ++j) {
        if (!std::isfinite(g[j])) throw NumericError("non-finite gradient in " + p.name);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        th[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  // Drops moment history (used when a training stage restarts).
  void reset_state() {
    t_ = 0;
    for (auto& a : m_) std::fill(a.data.begin(), a.data.end(), 0.0);
    for (auto& a : v_) std::fill(a.data.begin(), a.data.end(), 0.0);
  }

 private:
  ParamRefs params_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Array> m_;
  std::vector<Array> v_;
};

// Gaussian log-density summed over the feature axis: x, mu, sigma all
// [R, D] -> [R].  Written with primitive ops so every input gets exact
// path gradients.
inline Var gaussian_logpdf_rows(Var x, Var mu, Var sigma) {
  const std::size_t D = x.tape->value(x).shape[1];
  Var z = div(sub(x, mu), sigma);
  Var quad = scale(sum_axis1(square(z)), -0.5);
  Var logdet = sum_axis1(vlog(sigma));
  constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
  return add_const(sub(quad, logdet), -0.5 * double(D) * kLog2Pi);
}

// Standard-normal log-density rows: x [R, D] -> [R].
inline Var std_normal_logpdf_rows(Var x) {
  const std::size_t D = x.tape->value(x).shape[1];
  constexpr double kLog2Pi = 1.8378770664093453;
  return add_const(scale(sum_axis1(square(x)), -0.5), -0.5 * double(D) * kLog2Pi);
}

}  // namespace vflow
