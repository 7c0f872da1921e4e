#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <vector>

#include "support.hpp"
#include "vflow/forward.hpp"
#include "vflow/samplers.hpp"

using namespace vflow;

namespace {

double min_pairwise_distance(const Array& pts) {
  double best = 1e300;
  for (std::size_t i = 0; i < pts.shape[0]; ++i)
    for (std::size_t j = i + 1; j < pts.shape[0]; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < pts.shape[1]; ++c) {
        const double d = pts(i, c) - pts(j, c);
        s += d * d;
      }
      best = std::min(best, std::sqrt(s));
    }
  return best;
}

}  // namespace

TEST_CASE("pcn defaults match the published run profile") {
  PcnConfig cfg;
  CHECK(cfg.beta == 0.1);
  CHECK(cfg.iters == 5000);
  CHECK(cfg.burn_frac == 0.2);
  CHECK(cfg.thin == 10);
}

TEST_CASE("pcn accepts every proposal that does not increase the misfit") {
  MisfitFn flat = [](const std::vector<double>&) { return 1.0; };
  Rng rng(42);
  PcnState st = pcn_init({0.0, 0.0}, {0.0, 0.0}, 0.3, flat);
  st.phi = 5.0;  // pretend the current point is worse than any proposal
  for (int i = 0; i < 100; ++i) pcn_step(st, flat, rng);
  CHECK(st.proposed == 100);
  CHECK(st.accepted == 100);
}

TEST_CASE("pcn with beta = 1 proposes independently of the current state") {
  MisfitFn flat = [](const std::vector<double>&) { return 0.0; };
  Rng rng(7);
  PcnState st = pcn_init({1e6, -1e6, 1e6}, {0.0, 0.0, 0.0}, 1.0, flat);
  pcn_step(st, flat, rng);
  for (double v : st.m) CHECK(std::abs(v) < 10.0);  // fresh N(0,1) draw, not 1e6-scale
}

TEST_CASE("pcn with constant misfit samples the prior") {
  const std::vector<double> mu0 = {1.0, -2.0, 0.5, 0.0};
  MisfitFn flat = [](const std::vector<double>&) { return 3.0; };
  PcnConfig cfg;
  cfg.beta = 0.1;
  cfg.iters = 1250000;  // 20% burn-in and thinning by 10 keep 1e5 draws
  SampleRun run = pcn_run(flat, mu0, cfg, 2024);
  REQUIRE(run.samples.shape[0] == 100000);
  CHECK(run.accept_rate == 1.0);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(std::abs(run.mean[j] - mu0[j]) < 0.05);
}

TEST_CASE("pcn matches the conjugate linear-Gaussian posterior mean") {
  // Prior N(0, I), observation y = m + noise with variance 0.25, so the
  // posterior mean is 0.8 y componentwise with variance 0.2.
  const std::vector<double> y = {0.8, -0.4};
  const double sig2 = 0.25;
  MisfitFn mis = [&](const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double r = y[i] - m[i];
      s += r * r;
    }
    return 0.5 * s / sig2;
  };
  PcnConfig cfg;
  cfg.beta = 0.5;
  cfg.iters = 300000;
  SampleRun run = pcn_run(mis, {0.0, 0.0}, cfg, 99);
  CHECK(run.accept_rate > 0.1);
  CHECK(run.accept_rate < 0.9);
  CHECK(std::abs(run.mean[0] - 0.8 * y[0]) < 0.02);
  CHECK(std::abs(run.mean[1] - 0.8 * y[1]) < 0.02);
}

TEST_CASE("pcn runs are reproducible from the seed") {
  MisfitFn mis = [](const std::vector<double>& m) { return 0.5 * m[0] * m[0]; };
  PcnConfig cfg;
  cfg.iters = 2000;
  SampleRun a = pcn_run(mis, {0.0}, cfg, 5150);
  SampleRun b = pcn_run(mis, {0.0}, cfg, 5150);
  SampleRun c = pcn_run(mis, {0.0}, cfg, 5151);
  REQUIRE(a.samples.data == b.samples.data);
  CHECK(a.accept_rate == b.accept_rate);
  CHECK(a.samples.data != c.samples.data);
}

TEST_CASE("pcn acceptance stays in a healthy band on the 1D diffusion problem") {
  Problem pb = make_problem(ProblemKind::darcy1d, 16, 0.05, 777);
  MisfitFn mis = [&](const std::vector<double>& m) { return misfit(pb.forward(m), pb.lik); };
  PcnConfig cfg;  // defaults: beta 0.1, 5000 iterations
  SampleRun run = pcn_run(mis, std::vector<double>(16, 0.0), cfg, 31337);
  CHECK(run.accept_rate > 0.1);
  CHECK(run.accept_rate < 0.9);
  REQUIRE(run.samples.shape[0] == 400);
  REQUIRE(run.samples.all_finite());
}

TEST_CASE("pcn rejects an out-of-range beta") {
  MisfitFn flat = [](const std::vector<double>&) { return 0.0; };
  CHECK_THROWS_AS(pcn_init({0.0}, {0.0}, 0.0, flat), ConfigError);
  CHECK_THROWS_AS(pcn_init({0.0}, {0.0}, 1.5, flat), ConfigError);
}

TEST_CASE("unscented sigma points reconstruct mean and covariance exactly") {
  const std::size_t d = 3;
  Rng rng(11);
  Array m({d, d});
  rng.fill_uniform(m, -1.0, 1.0);
  Array cov = Array::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < d; ++k) cov(i, j) += m(i, k) * m(j, k);
      if (i == j) cov(i, j) += 0.5;
    }
  const std::vector<double> mean = {0.3, -1.2, 2.0};
  std::size_t repairs = 0;
  Array pts = uki_sigma_points(mean, cov, 1e-10, &repairs);
  REQUIRE(pts.shape == Shape{2 * d + 1, d});
  CHECK(repairs == 0);
  const double w = 1.0 / double(2 * d);
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t s = 1; s < 2 * d + 1; ++s) mu += w * pts(s, j);
    CHECK(std::abs(mu - mean[j]) < 1e-12);
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double c = 0.0;
      for (std::size_t s = 1; s < 2 * d + 1; ++s)
        c += w * (pts(s, i) - mean[i]) * (pts(s, j) - mean[j]);
      CHECK(std::abs(c - cov(i, j)) < 1e-12);
    }
}

TEST_CASE("uki step with no dynamics noise and no information is the identity") {
  UkiState st = uki_init(3);
  st.mean = {0.4, -0.7, 1.1};
  st.cov(0, 1) = st.cov(1, 0) = 0.2;
  const UkiState before = st;
  EnsembleForward fwd = [](const Array& x) { return x; };
  UkiConfig cfg;
  cfg.alpha = 1.0;
  cfg.sigma_omega = 0.0;  // but keep cov strictly PD so no repair path
  st.cov(0, 0) = st.cov(1, 1) = st.cov(2, 2) = 1.0;
  uki_step(st, fwd, {0.0, 0.0, 0.0}, {1e30, 1e30, 1e30}, cfg);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(st.mean[i] - before.mean[i]) < 1e-12);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(std::abs(st.cov(i, j) - before.cov(i, j)) < 1e-12);
}

TEST_CASE("uki agrees with the dense Kalman recursion for a linear map") {
  // G(m) = A m with a fixed 2x3 matrix; the sigma-point transform is
  // exact for linear maps, so the iterates must track the closed-form
  // Gaussian recursion.
  const double A[2][3] = {{1.0, 0.5, 0.0}, {0.0, 1.0, -0.5}};
  const std::vector<double> y = {1.0, -2.0};
  const std::vector<double> eta2 = {0.04, 0.09};
  UkiConfig cfg;  // alpha 0.5, process noise (2 - alpha^2) I, doubled obs noise

  EnsembleForward fwd = [&](const Array& x) {
    Array g({x.shape[0], 2});
    for (std::size_t s = 0; s < x.shape[0]; ++s)
      for (std::size_t r = 0; r < 2; ++r) {
        double v = 0.0;
        for (std::size_t c = 0; c < 3; ++c) v += A[r][c] * x(s, c);
        g(s, r) = v;
      }
    return g;
  };

  UkiState st = uki_init(3);
  double m[3] = {0.0, 0.0, 0.0};
  double C[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const double al = 0.5, sw = 2.0 - 0.25;
  for (int step = 0; step < 80; ++step) {
    uki_step(st, fwd, y, eta2, cfg);

    double mh[3], Ch[3][3];
    for (int i = 0; i < 3; ++i) mh[i] = al * m[i];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) Ch[i][j] = al * al * C[i][j] + (i == j ? sw : 0.0);
    double CA[3][2];  // Ch A^T
    for (int i = 0; i < 3; ++i)
      for (int r = 0; r < 2; ++r) {
        CA[i][r] = 0.0;
        for (int c = 0; c < 3; ++c) CA[i][r] += Ch[i][c] * A[r][c];
      }
    double S[2][2];
    for (int r = 0; r < 2; ++r)
      for (int t = 0; t < 2; ++t) {
        S[r][t] = (r == t ? 2.0 * eta2[r] : 0.0);
        for (int c = 0; c < 3; ++c) S[r][t] += A[r][c] * CA[c][t];
      }
    const double det = S[0][0] * S[1][1] - S[0][1] * S[1][0];
    const double Si[2][2] = {{S[1][1] / det, -S[0][1] / det}, {-S[1][0] / det, S[0][0] / det}};
    double K[3][2];
    for (int i = 0; i < 3; ++i)
      for (int r = 0; r < 2; ++r) K[i][r] = CA[i][0] * Si[0][r] + CA[i][1] * Si[1][r];
    double innov[2];
    for (int r = 0; r < 2; ++r) {
      innov[r] = y[r];
      for (int c = 0; c < 3; ++c) innov[r] -= A[r][c] * mh[c];
    }
    for (int i = 0; i < 3; ++i) m[i] = mh[i] + K[i][0] * innov[0] + K[i][1] * innov[1];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        C[i][j] = Ch[i][j] - (K[i][0] * CA[j][0] + K[i][1] * CA[j][1]);
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(st.mean[i] - m[i]) < 1e-3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(std::abs(st.cov(i, j) - C[i][j]) < 1e-3);
}

TEST_CASE("uki covariance stays symmetric through nonlinear updates") {
  EnsembleForward fwd = [](const Array& x) {
    Array g({x.shape[0], 2});
    for (std::size_t s = 0; s < x.shape[0]; ++s) {
      g(s, 0) = x(s, 0) + 0.3 * x(s, 1) * x(s, 1);
      g(s, 1) = x(s, 1) * x(s, 0);
    }
    return g;
  };
  UkiState st = uki_init(2);
  UkiConfig cfg;
  for (int step = 0; step < 20; ++step) {
    uki_step(st, fwd, {0.5, 0.2}, {0.01, 0.01}, cfg);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(std::abs(st.cov(i, j) - st.cov(j, i)) < 1e-12);
  }
}

TEST_CASE("uki repairs a singular covariance with logged jitter") {
  UkiState st = uki_init(2);
  st.cov(0, 0) = st.cov(1, 1) = 1.0;
  st.cov(0, 1) = st.cov(1, 0) = 1.0;  // rank one
  EnsembleForward fwd = [](const Array& x) { return x; };
  UkiConfig cfg;
  cfg.alpha = 1.0;
  cfg.sigma_omega = 0.0;  // prediction keeps the defective covariance
  uki_step(st, fwd, {0.3, -0.3}, {0.04, 0.04}, cfg);
  CHECK(st.jitter_repairs >= 1);
  CHECK(st.cov.all_finite());
}

TEST_CASE("svgd bandwidth follows the median heuristic") {
  Array two({2, 1});
  two(0, 0) = 0.0;
  two(1, 0) = 2.0;
  CHECK(std::abs(svgd_bandwidth(two) - 4.0 / std::log(2.0)) < 1e-12);

  Array three({3, 1});
  three(0, 0) = 0.0;
  three(1, 0) = 1.0;
  three(2, 0) = 10.0;  // squared distances 1, 81, 100; median 81
  CHECK(std::abs(svgd_bandwidth(three) - 81.0 / std::log(3.0)) < 1e-12);
}

TEST_CASE("svgd requires at least two particles") {
  CHECK_THROWS_AS(svgd_init(Array({1, 3})), ConfigError);
  Array one({1, 2});
  CHECK_THROWS_AS(svgd_bandwidth(one), ConfigError);
}

TEST_CASE("svgd repulsion separates a close pair") {
  Array pts = Array::zeros({6, 2});
  pts(1, 0) = 0.1;  // near-coincident pair at the origin
  pts(2, 0) = 10.0;
  pts(2, 1) = 10.0;
  pts(3, 0) = -10.0;
  pts(3, 1) = 10.0;
  pts(4, 0) = 10.0;
  pts(4, 1) = -10.0;
  pts(5, 0) = -10.0;
  pts(5, 1) = -10.0;
  SvgdState st = svgd_init(pts);
  const double before = min_pairwise_distance(st.particles);
  GradLogP zero = [](const Array& x) { return Array::zeros(x.shape); };
  svgd_step(st, zero, SvgdConfig{});
  const double after = min_pairwise_distance(st.particles);
  CHECK(after > before);
  CHECK_FALSE(st.degenerate);
}

TEST_CASE("svgd recovers a Gaussian target mean") {
  const double mux = 0.7, muy = -0.3, var = 0.25;
  GradLogP grad = [&](const Array& x) {
    Array g({x.shape[0], 2});
    for (std::size_t i = 0; i < x.shape[0]; ++i) {
      g(i, 0) = -(x(i, 0) - mux) / var;
      g(i, 1) = -(x(i, 1) - muy) / var;
    }
    return g;
  };
  Rng rng(5);
  SvgdState st = svgd_init(rng.normals({100, 2}));
  SvgdConfig cfg;
  cfg.step = 0.05;
  svgd_run(st, grad, 800, cfg);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    mx += st.particles(i, 0) / 100.0;
    my += st.particles(i, 1) / 100.0;
  }
  CHECK(std::abs(mx - mux) < 0.05);
  CHECK(std::abs(my - muy) < 0.05);
}

TEST_CASE("svgd flags a fully coincident ensemble as degenerate") {
  Array pts({3, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    pts(i, 0) = 1.5;
    pts(i, 1) = -0.5;
  }
  SvgdState st = svgd_init(pts);
  GradLogP zero = [](const Array& x) { return Array::zeros(x.shape); };
  svgd_step(st, zero, SvgdConfig{});
  CHECK(st.degenerate);
  for (std::size_t i = 0; i < 3; ++i) {  // symmetric forces: nobody moves
    CHECK(st.particles(i, 0) == 1.5);
    CHECK(st.particles(i, 1) == -0.5);
  }
}

TEST_CASE("stretch move with unit scale never moves the ensemble") {
  LogDensityFn logp = [](const double* x, std::size_t) { return -0.5 * x[0] * x[0]; };
  Rng rng(3);
  Array init = rng.normals({4, 1});
  StretchConfig cfg;
  cfg.walkers = 4;
  cfg.burn = 0;
  cfg.steps = 5;
  cfg.a = 1.0;  // z is identically 1, so every proposal equals the current point
  SampleRun run = ensemble_mcmc_run(logp, 1, cfg, 17, &init);
  REQUIRE(run.samples.shape == Shape{20, 1});
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t w = 0; w < 4; ++w)
      CHECK(run.samples(s * 4 + w, 0) == init(w, 0));
}

TEST_CASE("stretch move dimension correction vanishes only in 1D") {
  LogDensityFn flat = [](const double*, std::size_t) { return 0.0; };
  StretchConfig cfg;
  cfg.walkers = 8;
  cfg.burn = 0;
  cfg.steps = 50;
  SampleRun one = ensemble_mcmc_run(flat, 1, cfg, 4242);
  CHECK(one.accept_rate == 1.0);  // z^{d-1} = 1: flat density accepts everything
  SampleRun two = ensemble_mcmc_run(flat, 2, cfg, 4242);
  CHECK(two.accept_rate < 1.0);  // the z factor now rejects some shrink moves
}

TEST_CASE("stretch move recovers a 1D Gaussian variance") {
  const double mu = 1.5, var = 0.49;
  LogDensityFn logp = [&](const double* x, std::size_t) {
    return -0.5 * (x[0] - mu) * (x[0] - mu) / var;
  };
  StretchConfig cfg;
  cfg.walkers = 50;
  cfg.burn = 400;
  cfg.steps = 400;  // 2e4 retained draws
  SampleRun run = ensemble_mcmc_run(logp, 1, cfg, 2718);
  REQUIRE(run.samples.shape[0] == 20000);
  CHECK(std::abs(run.mean[0] - mu) < 0.05);
  double s2 = 0.0;
  for (std::size_t i = 0; i < run.samples.shape[0]; ++i) {
    const double dlt = run.samples(i, 0) - run.mean[0];
    s2 += dlt * dlt;
  }
  s2 /= double(run.samples.shape[0] - 1);
  CHECK(std::abs(s2 - var) < 0.05 * var);
}

TEST_CASE("stretch move enforces the walker floor and is seed-reproducible") {
  LogDensityFn flat = [](const double*, std::size_t) { return 0.0; };
  StretchConfig cfg;
  cfg.walkers = 3;
  CHECK_THROWS_AS(ensemble_mcmc_run(flat, 2, cfg, 1), ConfigError);

  cfg.walkers = 6;
  cfg.burn = 10;
  cfg.steps = 20;
  SampleRun a = ensemble_mcmc_run(flat, 2, cfg, 909);
  SampleRun b = ensemble_mcmc_run(flat, 2, cfg, 909);
  REQUIRE(a.samples.data == b.samples.data);
  CHECK(a.accept_rate == b.accept_rate);
}

TEST_CASE("sample dumps use xi_k column headers") {
  Array s({2, 3});
  for (std::size_t i = 0; i < 6; ++i) s.data[i] = double(i) + 0.5;
  const std::string path = vtest::tmp_path("samples_dump.csv");
  save_samples_csv(path, s);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "xi_1,xi_2,xi_3");
  std::string row;
  std::getline(in, row);
  CHECK(row == "0.5,1.5,2.5");
}
