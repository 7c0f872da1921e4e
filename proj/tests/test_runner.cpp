#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "support.hpp"
#include "vflow/runner.hpp"

using namespace vflow;

TEST_CASE("method and problem names round-trip through their parsers") {
  for (Method m : {Method::ours, Method::pcn, Method::uki_fdm, Method::uki_fno,
                   Method::svgd_fno})
    CHECK(parse_method(method_name(m)) == m);
  for (ProblemKind k : {ProblemKind::darcy1d, ProblemKind::darcy2d, ProblemKind::ns2d})
    CHECK(parse_problem(problem_name(k)) == k);
  CHECK_THROWS_AS(parse_method("newton"), ConfigError);
  CHECK_THROWS_AS(parse_problem("stokes"), ConfigError);
}

TEST_CASE("cell labels name problem, size, noise, method, and repeat") {
  CHECK(cell_label(ProblemKind::darcy1d, 32, 0.05, Method::ours, 2) ==
        "darcy1d/d32/delta0.05/ours/r2");
  CHECK(cell_label(ProblemKind::ns2d, 64, 0.1, Method::uki_fno, 0) ==
        "ns2d/d64/delta0.1/uki-fno/r0");
}

TEST_CASE("leading_pair keeps the first two columns") {
  Array s({3, 5});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) s(i, j) = double(10 * i + j);
  Array p = leading_pair(s);
  REQUIRE(p.shape[0] == 3);
  REQUIRE(p.shape[1] == 2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p(i, 0) == s(i, 0));
    CHECK(p(i, 1) == s(i, 1));
  }
  Array bad({3, 1});
  CHECK_THROWS_AS(leading_pair(bad), ShapeError);
}

TEST_CASE("coverage report finds planted concentrations and scores both fractions") {
  Rng rng(41);
  const std::size_t na = 1200, nb = 800;
  Array ref({na + nb, 2});
  for (std::size_t i = 0; i < na; ++i) {
    ref(i, 0) = 1.0 + 0.05 * rng.normal();
    ref(i, 1) = 0.0 + 0.05 * rng.normal();
  }
  for (std::size_t i = na; i < na + nb; ++i) {
    ref(i, 0) = -1.0 + 0.05 * rng.normal();
    ref(i, 1) = 0.0 + 0.05 * rng.normal();
  }
  // Method samples: 90% on the lighter concentration, 10% on the heavier.
  Array mth({1000, 2});
  for (std::size_t i = 0; i < 900; ++i) {
    mth(i, 0) = -1.0 + 0.05 * rng.normal();
    mth(i, 1) = 0.05 * rng.normal();
  }
  for (std::size_t i = 900; i < 1000; ++i) {
    mth(i, 0) = 1.0 + 0.05 * rng.normal();
    mth(i, 1) = 0.05 * rng.normal();
  }
  CoverageReport rep = coverage_against_reference(ref, mth);
  CHECK(rep.radius == 0.5);
  // Center a is the heavier reference concentration at (+1, 0).
  CHECK(std::abs(rep.centers.a[0] - 1.0) < 0.1);
  CHECK(std::abs(rep.centers.a[1]) < 0.1);
  CHECK(std::abs(rep.centers.b[0] + 1.0) < 0.1);
  CHECK(std::abs(rep.centers.b[1]) < 0.1);
  CHECK(rep.frac_a == Catch::Approx(0.1).margin(0.02));
  CHECK(rep.frac_b == Catch::Approx(0.9).margin(0.02));
}

TEST_CASE("benchmark scales: desk defaults and full-budget settings") {
  RosenbrockScale desk = rosenbrock_scale(false);
  CHECK(desk.vf_epochs == 2000);
  CHECK(desk.n_samples == 20000);
  CHECK(desk.mcmc_walkers * desk.mcmc_steps == desk.n_samples);
  RosenbrockScale full = rosenbrock_scale(true);
  CHECK(full.vf_epochs == 20000);
  CHECK(full.vf_batch == 10000);
  CHECK(full.mcmc_walkers == 1000);
  CHECK(full.mcmc_burn == 50000);
  CHECK(full.mcmc_walkers * full.mcmc_steps == full.n_samples);
}

TEST_CASE("benchmark sampler rejects an inconsistent sample budget") {
  RosenbrockScale rs;
  rs.mcmc_walkers = 7;  // 7 * 100 != 20000
  CHECK_THROWS_AS(rosenbrock_mcmc_samples(rs, 1), ConfigError);
}

TEST_CASE("matrix runner pairs methods on shared data and records failures") {
  MatrixSpec spec;
  spec.problems = {ProblemKind::darcy1d};
  spec.dims = {8};
  spec.deltas = {0.05, -1.0};  // the negative level cannot build a problem
  spec.methods = {Method::pcn, Method::uki_fdm};
  spec.repeats = 2;
  std::size_t seen = 0;
  std::vector<MetricReport> rows =
      run_matrix(spec, 99, [&seen](const MetricReport&) { ++seen; });
  REQUIRE(rows.size() == 8);  // 2 deltas x 2 methods x 2 repeats
  CHECK(seen == rows.size());

  std::set<std::string> methods;
  for (const MetricReport& r : rows) {
    CHECK(r.problem == "darcy1d");
    CHECK(r.d == 8);
    methods.insert(r.method);
    if (r.delta < 0.0) {
      CHECK(r.failed);
      CHECK_FALSE(r.note.empty());
    } else {
      CHECK_FALSE(r.failed);
      CHECK(r.converged);
      CHECK(std::isfinite(r.e_I));
      CHECK(r.e_I >= 0.0);
      CHECK(r.e_I < 1.5);
    }
  }
  CHECK(methods == std::set<std::string>{"pcn", "uki-fdm"});

  // Repeats index as written and rerunning reproduces every number.
  std::vector<MetricReport> again = run_matrix(spec, 99);
  REQUIRE(again.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].repeat == rows[i].repeat);
    if (!rows[i].failed) {
      CHECK(again[i].e_I == rows[i].e_I);
      CHECK(again[i].note == rows[i].note);
    }
  }
}

TEST_CASE("problem construction is fail-closed on size and noise level") {
  CHECK_THROWS_AS(make_problem(ProblemKind::darcy1d, 0, 0.05, 1), ConfigError);
  CHECK_THROWS_AS(make_problem(ProblemKind::darcy1d, 257, 0.05, 1), ConfigError);
  CHECK_THROWS_AS(make_problem(ProblemKind::darcy1d, 8, 0.0, 1), ConfigError);
}
