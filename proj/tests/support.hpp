#pragma once

// Shared helpers for the test suites: finite-difference gradient
// checking and small numeric utilities.

#include <filesystem>
#include <functional>
#include <string>

#include "vflow/autodiff.hpp"

namespace vtest {

using vflow::Array;

// Scratch-file path under the system temp dir (keeps test artifacts out
// of the working tree).
inline std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Max elementwise mismatch between an analytic gradient and central
// finite differences of eval, scaled by max(1, |fd|, |g|).
inline double fd_max_rel_err(const std::function<double(const Array&)>& eval, Array x0,
                             const Array& grad, double h0 = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    const double xi = x0(i);
    const double h = h0 * std::max(1.0, std::abs(xi));
    x0(i) = xi + h;
    const double fp = eval(x0);
    x0(i) = xi - h;
    const double fm = eval(x0);
    x0(i) = xi;
    const double fd = (fp - fm) / (2.0 * h);
    const double g = grad(i);
    const double denom = std::max({1.0, std::abs(fd), std::abs(g)});
    worst = std::max(worst, std::abs(fd - g) / denom);
  }
  return worst;
}

// Checks d(loss)/d(input) for op_fn: input leaf -> output Var, where the
// scalar loss is sum(output * probe) with a fixed random probe.
inline double fd_check_unary(const std::function<vflow::Var(vflow::Tape&, vflow::Var)>& op_fn,
                             const Array& x0, std::uint64_t probe_seed = 7) {
  vflow::Rng prng(probe_seed);
  Array probe;
  {
    vflow::Tape t;
    vflow::Var x = t.leaf(x0);
    vflow::Var y = op_fn(t, x);
    probe = prng.normals(t.value(y).shape);
  }
  auto eval = [&](const Array& x) {
    vflow::Tape t;
    vflow::Var xv = t.leaf(x, false);
    vflow::Var y = op_fn(t, xv);
    const Array& yv = t.value(y);
    double s = 0.0;
    for (std::size_t i = 0; i < yv.numel(); ++i) s += yv(i) * probe(i);
    return s;
  };
  Array g;
  {
    vflow::Tape t;
    vflow::Var x = t.leaf(x0);
    vflow::Var y = op_fn(t, x);
    vflow::Var loss = vflow::sum_all(vflow::mul(y, t.constant(probe)));
    t.backward(loss);
    g = t.grad(x);
  }
  return fd_max_rel_err(eval, x0, g);
}

inline double max_abs_diff(const Array& a, const Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a(i) - b(i)));
  return m;
}

}  // namespace vtest
