#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include "support.hpp"
#include "vflow/adaptive.hpp"

using namespace vflow;

namespace {

// Small 1D diffusion problem on a coarse grid, same covariance family
// as the full-size setup, cheap enough for loop tests.
Problem make_mini_problem(std::size_t d, std::uint64_t seed) {
  GrfSpec spec = grf_spec_for(ProblemKind::darcy1d);
  spec.grid = {64};
  Problem pb;
  pb.kind = ProblemKind::darcy1d;
  pb.d = d;
  pb.noise_delta = 0.05;
  pb.basis = build_basis(spec, d);
  pb.basis_ref = build_basis(spec, 24);
  Rng rng(seed);
  pb.xi_ref.resize(24);
  for (double& v : pb.xi_ref) v = rng.uniform(-3.0, 3.0);
  pb.ref_field = synthesize(pb.basis_ref, pb.xi_ref.data(), 24);
  pb.obs = uniform_interior_1d(64, 8);
  const std::vector<double> clean = observe(pb.solve_field(pb.ref_field), pb.obs);
  pb.lik = gen_observation(clean, pb.noise_delta, seed_stream(seed, "obs"), pb.obs);
  return pb;
}

AdaptiveHooks gaussian_hooks(const std::vector<double>& y, double sigma,
                             std::size_t* refresh_calls = nullptr) {
  AdaptiveHooks hooks;
  hooks.surrogate_neg_misfit = [&y, sigma](Tape& t, Var x) {
    Array neg_y({y.size()});
    for (std::size_t i = 0; i < y.size(); ++i) neg_y(i) = -y[i];
    Var resid = scale(add_rowvec(x, t.constant(neg_y)), 1.0 / sigma);
    return scale(sum_axis1(square(resid)), -0.5);
  };
  hooks.exact_misfit = [y, sigma](const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double r = (y[i] - m[i]) / sigma;
      s += r * r;
    }
    return 0.5 * s;
  };
  if (refresh_calls)
    hooks.refresh_surrogate = [refresh_calls](std::size_t) { ++*refresh_calls; };
  return hooks;
}

}  // namespace

TEST_CASE("prior mean update interpolates between posterior and anchor") {
  const std::vector<double> post = {2.0, -4.0};
  const std::vector<double> prev = {0.0, 2.0};
  CHECK(update_prior_mean(post, prev, 1.0) == post);
  CHECK(update_prior_mean(post, prev, 0.0) == prev);
  const auto half = update_prior_mean({2.0}, {0.0}, 0.5);
  CHECK(half.size() == 1);
  CHECK(half[0] == 1.0);
  CHECK_THROWS_AS(update_prior_mean(post, {1.0}, 0.5), ShapeError);
}

TEST_CASE("stopping check compares relative misfit change") {
  CHECK(stopping_check(10.0, 10.0, 0.01));         // no change
  CHECK(stopping_check(10.0, 9.95, 0.01));         // ratio 0.005
  CHECK_FALSE(stopping_check(10.0, 5.0, 0.01));    // ratio 0.5
  CHECK(stopping_check(0.0, 3.0, 0.01));           // perfect start counts as done
  CHECK_THROWS_AS(stopping_check(-1.0, 1.0, 0.01), ConfigError);
}

TEST_CASE("coefficient perturbation has the configured strength") {
  Rng rng(88);
  Array xi = rng.normals({500, 4});
  Rng prng(99);
  Array same = perturb_coefficients(xi, 0.0, prng);
  CHECK(same.data == xi.data);

  Array hat = perturb_coefficients(xi, 3.0, prng);
  for (std::size_t j = 0; j < 4; ++j) {
    double s2 = 0.0;
    for (std::size_t i = 0; i < 500; ++i) {
      const double dlt = hat(i, j) - xi(i, j);
      s2 += dlt * dlt;
    }
    const double sd = std::sqrt(s2 / 499.0);
    CHECK(sd > 2.7);
    CHECK(sd < 3.3);
  }
}

TEST_CASE("posterior mean estimate tracks a constant decoder") {
  Rng rng(505);
  VfModel vf = make_vf(2, 1, rng);
  Array& head = vf.decoder.biases.back().value;
  REQUIRE(head.data.size() == 4);
  head(0) = 0.7;
  head(1) = -0.3;
  head(2) = -30.0;  // softplus(-30) ~ 0: sigma collapses to its floor
  head(3) = -30.0;
  Rng srng(42);
  const std::vector<double> mu = vf_posterior_mean(vf, 100, srng);
  CHECK(std::abs(mu[0] - 0.7) < 5.0 * 1e-4 / 10.0);
  CHECK(std::abs(mu[1] + 0.3) < 5.0 * 1e-4 / 10.0);
}

TEST_CASE("prior mean chain stays inside the convex envelope of its inputs") {
  Rng rng(61);
  std::vector<double> mu = {rng.normal(), rng.normal(), rng.normal()};
  std::vector<double> lo = mu, hi = mu;
  for (int it = 0; it < 20; ++it) {
    std::vector<double> post = {3.0 * rng.normal(), 3.0 * rng.normal(), 3.0 * rng.normal()};
    for (int j = 0; j < 3; ++j) {
      lo[j] = std::min(lo[j], post[j]);
      hi[j] = std::max(hi[j], post[j]);
    }
    mu = update_prior_mean(post, mu, 0.5);
    for (int j = 0; j < 3; ++j) {
      CHECK(mu[j] >= lo[j] - 1e-12);
      CHECK(mu[j] <= hi[j] + 1e-12);
    }
  }
}

TEST_CASE("stage datasets are reproducible, sized exactly, and stage-disjoint") {
  Problem pb = make_mini_problem(8, 1234);
  Rng rng(7);
  VfOptions small;
  small.prior_layers = 2;
  small.flow_hidden = 8;
  small.dec_width = 16;
  small.dec_depth = 2;
  VfModel vf = make_vf(8, 2, rng, small);

  FieldPairs a = build_stage_dataset(vf, pb, 16, 1.5, seed_stream(1000, "data", 1));
  FieldPairs b = build_stage_dataset(vf, pb, 16, 1.5, seed_stream(1000, "data", 1));
  FieldPairs c = build_stage_dataset(vf, pb, 16, 1.5, seed_stream(1000, "data", 2));
  REQUIRE(a.size() == 16);
  REQUIRE(a.m.data == b.m.data);
  REQUIRE(a.u.data == b.u.data);
  REQUIRE(a.m.all_finite());
  REQUIRE(a.u.all_finite());

  // No input field generated for one stage may reappear in another.
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      bool same = true;
      for (std::size_t p = 0; p < a.m.shape[1] && same; ++p)
        same = a.m(i, p) == c.m(j, p);
      CHECK_FALSE(same);
    }
}

TEST_CASE("adaptive loop drives the prior toward a Gaussian target") {
  const std::vector<double> y = {1.2, -0.6};
  std::size_t refreshes = 0;
  AdaptiveHooks hooks = gaussian_hooks(y, 0.5, &refreshes);

  Rng rng(2025);
  VfOptions small;
  small.prior_layers = 4;
  small.flow_hidden = 16;
  small.dec_width = 32;
  small.dec_depth = 3;
  VfModel vf = make_vf(2, 1, rng, small);

  LoopConfig cfg;
  cfg.K_max = 12;
  cfg.N_e = 5;
  cfg.M = 200;
  cfg.stage_samples = 256;
  SECTION("runs the stage budget and lands near the target") {
    AdaptiveResult res = run_adaptive(vf, hooks, cfg, 31415);
    REQUIRE(res.stages_run >= 2);
    CHECK(std::abs(res.mu_post[0] - y[0]) < 0.05);
    CHECK(std::abs(res.mu_post[1] - y[1]) < 0.05);
    CHECK(res.log.size() == res.stages_run * cfg.N_e);
    CHECK(refreshes == res.stages_run - 1);
    for (const auto& rec : res.log) CHECK(std::isfinite(rec.vf_loss));
    for (std::size_t k = 1; k <= res.stages_run; ++k) {
      const StageRecord& last = res.log[k * cfg.N_e - 1];
      CHECK(last.stage == k);
      CHECK(last.epoch == cfg.N_e);
      CHECK(std::isfinite(last.phi_prior_exact));
    }
  }
  SECTION("an always-true stop ends after one stage") {
    cfg.epsilon = std::numeric_limits<double>::infinity();
    AdaptiveResult res = run_adaptive(vf, hooks, cfg, 31415);
    CHECK(res.converged);
    CHECK(res.stages_run == 1);
    CHECK(refreshes == 0);
  }
}

TEST_CASE("a non-finite stage restarts once with halved rate, then aborts") {
  const std::vector<double> y = {0.5};
  Rng rng(11);
  VfOptions tiny;
  tiny.prior_layers = 2;
  tiny.flow_hidden = 8;
  tiny.dec_width = 8;
  tiny.dec_depth = 2;
  LoopConfig cfg;
  cfg.K_max = 1;
  cfg.N_e = 1;
  cfg.M = 16;
  cfg.stage_samples = 32;

  VfModel vf = make_vf(2, 1, rng, tiny);
  std::size_t calls = 0;
  AdaptiveHooks hooks;
  hooks.exact_misfit = [&y](const std::vector<double>& m) {
    const double r = y[0] - m[0];
    return 0.5 * r * r;
  };
  hooks.surrogate_neg_misfit = [&calls](Tape& t, Var x) {
    ++calls;
    Var rows = scale(sum_axis1(square(x)), -0.5);
    if (calls == 1)
      return add_const(rows, std::numeric_limits<double>::quiet_NaN());
    return rows;
  };
  AdaptiveResult res = run_adaptive(vf, hooks, cfg, 999);
  CHECK(res.restarts == 1);
  CHECK(res.stages_run == 1);
  CHECK(std::isfinite(res.mu_post[0]));

  std::size_t always = 0;
  AdaptiveHooks bad = hooks;
  bad.surrogate_neg_misfit = [&always](Tape& t, Var x) {
    ++always;
    (void)t;
    return add_const(scale(sum_axis1(square(x)), -0.5),
                     std::numeric_limits<double>::quiet_NaN());
  };
  VfModel vf2 = make_vf(2, 1, rng, tiny);
  try {
    run_adaptive(vf2, bad, cfg, 999);
    FAIL("expected a NumericError after two failed attempts");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("diverged twice") != std::string::npos);
  }
}

TEST_CASE("pde adaptive loop runs stages end to end on a mini problem") {
  Problem pb = make_mini_problem(8, 777);
  Rng rng(13);

  FnoConfig fcfg;
  fcfg.grid = 64;
  fcfg.dim = 1;
  fcfg.periodic = false;
  fcfg.width = 8;
  fcfg.modes = 4;
  fcfg.depth = 2;
  fcfg.proj_hidden = 16;
  FnoModel fno = make_fno(fcfg, rng);
  FieldPairs warm = make_prior_dataset(pb, 32, 555);
  FnoTrainConfig pre;
  pre.epochs = 3;
  pre.batch = 8;
  pre.halve_every = 0;
  train_fno(fno, warm, pre, 556);

  VfOptions small;
  small.prior_layers = 2;
  small.flow_hidden = 8;
  small.dec_width = 16;
  small.dec_depth = 2;
  VfModel vf = make_vf(8, 2, rng, small);

  PdeAdaptiveOptions opt;
  opt.loop.K_max = 2;
  opt.loop.N_e = 2;
  opt.loop.M = 16;
  opt.loop.stage_samples = 64;
  opt.loop.epsilon = 1e-9;  // force the full stage budget
  opt.finetune.epochs = 3;
  opt.finetune.batch = 8;
  opt.finetune.halve_every = 0;
  opt.es_samples = 3;

  AdaptiveResult res = run_adaptive_pde(pb, fno, vf, opt, 424242);
  CHECK(res.stages_run == 2);
  CHECK_FALSE(res.converged);
  CHECK(res.restarts == 0);
  REQUIRE(res.log.size() == 4);
  const StageRecord& last = res.log.back();
  CHECK(std::isfinite(last.phi_prior_exact));
  CHECK(std::isfinite(last.e_I));
  CHECK(std::isfinite(last.e_S));
  CHECK(last.e_I >= 0.0);
  CHECK(last.e_S > 0.0);
  REQUIRE(res.mu_post.size() == 8);

  const std::string path = vtest::tmp_path("stage_log_test.csv");
  write_stage_log_csv(path, res.log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "stage,epoch,vf_loss,phi_prior_exact,e_I,e_S,wallclock_s");
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
}
