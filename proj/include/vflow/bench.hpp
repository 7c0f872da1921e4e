#pragma once

// Benchmark targets and evaluation metrics: the 100-dimensional
// Rosenbrock posterior, the relative inversion error of reconstructed
// fields, and mode-coverage statistics for bimodal targets.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/forward.hpp"
#include "vflow/io.hpp"

namespace vflow {

// ====================== Rosenbrock target ======================
// xi = [xi_1, xi_2, xi^c] in R^100.  Forward map
//   F(xi_1, xi_2) = (log(100 (xi_2 - xi_1^2)^2 + (1 - xi_1)^2) / 0.3,
//                    xi_1, xi_2),
// observation y = (log 101, 0, 0), and coupling residual xi^c - K xi
// with K the 98x100 all-ones matrix, so (K xi)_i is the coordinate sum.
// log p = -1/2 ||F - y||^2 - 1/2 ||xi^c - K xi||^2.

constexpr std::size_t kRosenbrockDim = 100;

inline double rosenbrock_logp(const double* xi, std::size_t n) {
  if (n != kRosenbrockDim) throw ShapeError("rosenbrock: expected 100 coordinates");
  const double x1 = xi[0], x2 = xi[1];
  const double t = x2 - x1 * x1;
  const double arg = 100.0 * t * t + (1.0 - x1) * (1.0 - x1);
  if (arg <= 0.0) return -1e12;  // log degenerates only at (1, 1)
  const double f1 = std::log(arg) / 0.3;
  const double r1 = f1 - std::log(101.0);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += xi[i];
  double couple = 0.0;
  for (std::size_t i = 2; i < n; ++i) {
    const double r = xi[i] - s;
    couple += r * r;
  }
  return -0.5 * (r1 * r1 + x1 * x1 + x2 * x2 + couple);
}

inline double rosenbrock_logp(const std::vector<double>& xi) {
  return rosenbrock_logp(xi.data(), xi.size());
}

// Row-wise log-density on tape for batches [B, 100]; gradients flow
// into the input.
inline Var rosenbrock_logp_rows(Tape& t, Var x) {
  const Array& xv = t.value(x);
  if (xv.rank() != 2 || xv.shape[1] != kRosenbrockDim)
    throw ShapeError("rosenbrock: need [B, 100] batch, got " + shape_str(xv.shape));
  Var x1 = slice_cols(x, 0, 1);
  Var x2 = slice_cols(x, 1, 1);
  Var xc = slice_cols(x, 2, kRosenbrockDim - 2);
  Var banana = add(scale(square(sub(x2, square(x1))), 100.0),
                   square(add_const(neg(x1), 1.0)));
  Var r1 = add_const(scale(vlog(banana), 1.0 / 0.3), -std::log(101.0));
  Var fres = sum_axis1(add(square(r1), add(square(x1), square(x2))));  // [B]
  Var couple = sum_axis1(square(sub_colvec(xc, sum_axis1(x))));        // [B]
  return scale(add(fres, couple), -0.5);
}

// ====================== Inversion error ======================
// e_I = || m_post - m_ref ||_L2 / || m_ref ||_L2 with fields compared
// on the solver grid by quadrature.

inline double inversion_error(const KlBasis& basis, const double* mu_post, std::size_t d,
                              const KlBasis& basis_ref, const double* xi_ref,
                              std::size_t d_ref) {
  if (basis.n_points != basis_ref.n_points)
    throw ShapeError("inversion error: bases live on different grids");
  const Array m_post = synthesize(basis, mu_post, d);
  const Array m_ref = synthesize(basis_ref, xi_ref, d_ref);
  const double denom = basis_ref.norm(m_ref.data.data());
  if (!(denom > 0.0)) throw ConfigError("inversion error: reference field has zero norm");
  std::vector<double> diff(m_ref.data.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = m_post.data[i] - m_ref.data[i];
  return basis_ref.norm(diff.data()) / denom;
}

inline double inversion_error(const Problem& pb, const std::vector<double>& mu_post) {
  if (mu_post.size() != pb.d) throw ShapeError("inversion error: expected d coefficients");
  const double denom = pb.basis.norm(pb.ref_field.data.data());
  if (!(denom > 0.0)) throw ConfigError("inversion error: reference field has zero norm");
  const Array m_post = pb.input_field(mu_post.data(), mu_post.size());
  std::vector<double> diff(m_post.data.size());
  for (std::size_t i = 0; i < diff.size(); ++i)
    diff[i] = m_post.data[i] - pb.ref_field.data[i];
  return pb.basis.norm(diff.data()) / denom;
}

// ====================== Mode coverage ======================

struct ModeCenters {
  std::array<double, 2> a{0.0, 0.0};
  std::array<double, 2> b{0.0, 0.0};
};

// Locates the two dominant modes of the (xi_1, xi_2) marginal.
// Samples are histogrammed on [-half_width, half_width]^2, the counts
// are smoothed with a separable triangular kernel of half-width
// smooth_bins (distance-decaying weights, so a tight cluster yields a
// unique peak instead of a tie plateau), the second peak is the best
// bin at least min_separation away from the first, and each peak is
// refined by one mean-shift step over the samples within
// min_separation of it.  Widening smooth_bins to the coverage scale
// makes the result a mass concentration rather than a raw density
// spike, which is the right notion for ball-coverage checks.
inline ModeCenters find_two_modes(const Array& samples, double half_width, std::size_t bins,
                                  double min_separation, std::size_t smooth_bins = 1) {
  if (samples.rank() != 2 || samples.shape[1] < 2)
    throw ShapeError("find_two_modes: need [n, >=2] samples");
  if (bins < 2) throw ConfigError("find_two_modes: need at least 2 bins");
  const double cell = 2.0 * half_width / double(bins);
  std::vector<double> hist(bins * bins, 0.0);
  for (std::size_t i = 0; i < samples.shape[0]; ++i) {
    const double u = (samples(i, 0) + half_width) / cell;
    const double v = (samples(i, 1) + half_width) / cell;
    if (u < 0.0 || v < 0.0) continue;
    const std::size_t bu = std::size_t(u), bv = std::size_t(v);
    if (bu >= bins || bv >= bins) continue;
    hist[bu * bins + bv] += 1.0;
  }
  std::vector<double> smooth(bins * bins, 0.0);
  const int W = int(smooth_bins);
  for (std::size_t bu = 0; bu < bins; ++bu)
    for (std::size_t bv = 0; bv < bins; ++bv) {
      double acc = 0.0;
      for (int du = -W; du <= W; ++du)
        for (int dv = -W; dv <= W; ++dv) {
          const long nu = long(bu) + du, nv = long(bv) + dv;
          if (nu < 0 || nv < 0 || nu >= long(bins) || nv >= long(bins)) continue;
          const double wu = 1.0 - double(du < 0 ? -du : du) / double(W + 1);
          const double wv = 1.0 - double(dv < 0 ? -dv : dv) / double(W + 1);
          acc += wu * wv * hist[std::size_t(nu) * bins + std::size_t(nv)];
        }
      smooth[bu * bins + bv] = acc;
    }
  auto center = [&](std::size_t bu, std::size_t bv) {
    return std::array<double, 2>{-half_width + (double(bu) + 0.5) * cell,
                                 -half_width + (double(bv) + 0.5) * cell};
  };
  auto refine = [&](std::array<double, 2> c) {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < samples.shape[0]; ++i) {
      const double dx = samples(i, 0) - c[0], dy = samples(i, 1) - c[1];
      if (dx * dx + dy * dy > min_separation * min_separation) continue;
      sx += samples(i, 0);
      sy += samples(i, 1);
      ++n;
    }
    if (n > 0) c = {sx / double(n), sy / double(n)};
    return c;
  };
  std::size_t best = 0;
  for (std::size_t c = 1; c < smooth.size(); ++c)
    if (smooth[c] > smooth[best]) best = c;
  ModeCenters out;
  out.a = refine(center(best / bins, best % bins));
  std::size_t second = smooth.size();
  for (std::size_t c = 0; c < smooth.size(); ++c) {
    const auto ctr = center(c / bins, c % bins);
    const double dx = ctr[0] - out.a[0], dy = ctr[1] - out.a[1];
    if (std::sqrt(dx * dx + dy * dy) < min_separation) continue;
    if (second == smooth.size() || smooth[c] > smooth[second]) second = c;
  }
  if (second == smooth.size()) throw NumericError("find_two_modes: no separated second mode");
  out.b = refine(center(second / bins, second % bins));
  return out;
}

// Fraction of samples within the given radius of a center in the
// (xi_1, xi_2) plane.
inline double mode_coverage(const Array& samples, const std::array<double, 2>& center,
                            double radius) {
  if (samples.rank() != 2 || samples.shape[1] < 2)
    throw ShapeError("mode_coverage: need [n, >=2] samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.shape[0]; ++i) {
    const double dx = samples(i, 0) - center[0];
    const double dy = samples(i, 1) - center[1];
    if (dx * dx + dy * dy <= radius * radius) ++hit;
  }
  return double(hit) / double(samples.shape[0]);
}

// ====================== Reporting ======================

struct MetricReport {
  std::string problem;
  std::string method;
  std::size_t d = 0;
  double delta = 0.0;
  std::size_t repeat = 0;
  double e_I = 0.0;
  double e_S = 0.0;  // final surrogate fitting error; 0 for exact-solver methods
  std::size_t stages_run = 0;
  bool converged = false;
  bool failed = false;
  std::string note;
};

inline void write_report_csv(const std::string& path, const std::vector<MetricReport>& rows) {
  CsvWriter w;
  w.open(path, {"problem", "method", "d", "delta", "repeat", "e_I", "e_S_final", "stages_run",
                "converged", "note"});
  for (const auto& r : rows)
    w.row({r.problem, r.method, std::to_string(r.d), fmt_g17(r.delta), std::to_string(r.repeat),
           r.failed ? "failed" : fmt_g17(r.e_I), fmt_g17(r.e_S), std::to_string(r.stages_run),
           r.converged ? "1" : "0", r.note});
}

}  // namespace vflow
