#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "vflow/surrogate.hpp"

using namespace vflow;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

void set_all_params(FnoModel& m, double v) {
  ParamRefs ps;
  m.collect(ps);
  for (Param* p : ps) std::fill(p->value.data.begin(), p->value.data.end(), v);
}

void randomize_params(FnoModel& m, Rng& rng, double scale) {
  ParamRefs ps;
  m.collect(ps);
  for (Param* p : ps)
    for (double& v : p->value.data) v = rng.uniform(-scale, scale);
}

// Reduced-resolution 1D problem sharing the production covariance
// family; big enough to be nontrivial, small enough for test budgets.
Problem make_mini_darcy(std::size_t d) {
  GrfSpec spec = grf_spec_for(ProblemKind::darcy1d);
  spec.grid = {64};
  Problem pb;
  pb.kind = ProblemKind::darcy1d;
  pb.d = d;
  pb.noise_delta = 0.01;
  pb.basis = build_basis(spec, d);
  return pb;
}

double heldout_error(FnoModel& m, const FieldPairs& test) {
  Array pred = fno_predict(m, test.m);
  double acc = 0.0;
  const std::size_t N = test.m.shape[1];
  for (std::size_t i = 0; i < test.size(); ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      const double d = pred(i, j) - test.u(i, j);
      num += d * d;
      den += test.u(i, j) * test.u(i, j);
    }
    acc += std::sqrt(num / den);
  }
  return acc / double(test.size());
}

}  // namespace

TEST_CASE("periodic fourier basis columns are orthonormal") {
  SpectralBasis sb = make_fourier_basis_1d(16, 8, true);
  REQUIRE(sb.contract.shape == Shape{16, 16});
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = 0; b < 16; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 16; ++j) dot += sb.contract(j, a) * sb.contract(j, b);
      const bool zero_sin = (a == 1);  // sine of mode zero
      const double want = (a == b && !zero_sin) ? 1.0 : 0.0;
      REQUIRE_THAT(dot, WithinAbs(want, 1e-12));
    }

  SpectralBasis sb2 = make_fourier_basis_2d(8, 3, true);
  const std::size_t cols = 2 * sb2.pairs;
  REQUIRE(sb2.pairs == 13);  // 3 on-axis + 2*5 half-plane wavevectors
  for (std::size_t a = 0; a < cols; ++a)
    for (std::size_t b = 0; b < cols; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 64; ++j) dot += sb2.contract(j, a) * sb2.contract(j, b);
      const double want = (a == b && a != 1) ? 1.0 : 0.0;
      REQUIRE_THAT(dot, WithinAbs(want, 1e-12));
    }
}

TEST_CASE("fourier basis rejects out-of-range mode counts") {
  REQUIRE_THROWS_AS(make_fourier_basis_1d(16, 9, true), ConfigError);
  REQUIRE_THROWS_AS(make_fourier_basis_1d(16, 0, true), ConfigError);
  REQUIRE_THROWS_AS(make_fourier_basis_2d(8, 5, false), ConfigError);
}

TEST_CASE("zero weights collapse the operator to the head bias") {
  Rng rng(51);
  FnoConfig cfg{16, 1, false, 6, 3, 4, 8, true};
  FnoModel m = make_fno(cfg, rng);
  set_all_params(m, 0.0);
  m.project.biases.back().value(0) = 0.37;

  Tape t;
  Var out = fno_forward(t, m, t.constant(rng.normals({2, 16})));
  for (double v : t.value(out).data) REQUIRE(v == 0.37);
}

TEST_CASE("grid mismatch is rejected") {
  Rng rng(52);
  FnoConfig cfg{16, 1, false, 4, 3, 2, 4, true};
  FnoModel m = make_fno(cfg, rng);
  Tape t;
  Var bad = t.constant(rng.normals({2, 17}));
  REQUIRE_THROWS_AS(fno_forward(t, m, bad), ShapeError);
}

TEST_CASE("periodic model without coordinates commutes with grid shifts") {
  Rng rng(53);
  FnoConfig cfg{16, 1, true, 6, 4, 4, 8, false};  // ablated: no coordinate channel
  FnoModel m = make_fno(cfg, rng);
  randomize_params(m, rng, 0.3);

  Array base = rng.normals({1, 16});
  const std::size_t s = 5;
  Array shifted({1, 16});
  for (std::size_t j = 0; j < 16; ++j) shifted(0, j) = base(0, (j + 16 - s) % 16);

  Array out0 = fno_predict(m, base);
  Array out1 = fno_predict(m, shifted);
  double worst = 0.0;
  for (std::size_t j = 0; j < 16; ++j)
    worst = std::max(worst, std::abs(out1(0, j) - out0(0, (j + 16 - s) % 16)));
  REQUIRE(worst < 1e-10);
}

TEST_CASE("frequencies beyond the retained modes never reach the spectral path") {
  Rng rng(54);
  FnoConfig cfg{16, 1, true, 5, 3, 4, 8, false};
  FnoModel m = make_fno(cfg, rng);
  // Ablation: bypasses off and all biases zero, lift passes the field
  // into every channel, so the output is a bias-free projection of the
  // spectral path and vanishes exactly when the contraction does.
  set_all_params(m, 0.0);
  for (double& v : m.lift.weights[0].value.data) v = 1.0;
  for (auto& l : m.layers) rng.fill_uniform(l.weights.value, -0.5, 0.5);
  for (auto& w : m.project.weights) rng.fill_uniform(w.value, -0.5, 0.5);

  auto probe = [&](std::size_t k) {
    Array f({1, 16});
    for (std::size_t j = 0; j < 16; ++j) f(0, j) = std::cos(2.0 * kPi * double(k) * j / 16.0);
    Array out = fno_predict(m, f);
    double mx = 0.0;
    for (double v : out.data) mx = std::max(mx, std::abs(v));
    return mx;
  };

  REQUIRE(probe(5) < 1e-9);   // above the retained band: contraction is exactly zero
  REQUIRE(probe(7) < 1e-9);
  REQUIRE(probe(2) > 1e-6);   // in-band content flows through
}

TEST_CASE("relative loss hits its degenerate values exactly") {
  Rng rng(55);
  Array truth = rng.normals({3, 10});
  {
    Tape t;
    Var p = t.constant(truth);
    Var tr = t.constant(truth);
    REQUIRE(t.value(relative_l2_loss(p, tr))(0) == 0.0);
  }
  {
    Tape t;
    Var p = t.constant(Array::zeros({3, 10}));
    Var tr = t.constant(truth);
    REQUIRE(t.value(relative_l2_loss(p, tr))(0) == 1.0);
  }
}

TEST_CASE("relative loss is invariant to common rescaling") {
  Rng rng(56);
  Array pred = rng.normals({4, 12});
  Array truth = rng.normals({4, 12});
  double l1, l2;
  {
    Tape t;
    l1 = t.value(relative_l2_loss(t.constant(pred), t.constant(truth)))(0);
  }
  for (double& v : pred.data) v *= 3.7;
  for (double& v : truth.data) v *= 3.7;
  {
    Tape t;
    l2 = t.value(relative_l2_loss(t.constant(pred), t.constant(truth)))(0);
  }
  REQUIRE_THAT(l2, WithinRel(l1, 1e-14));
}

TEST_CASE("operator gradients match finite differences on a small 1d grid") {
  Rng rng(57);
  FnoConfig cfg{16, 1, false, 4, 3, 2, 4, true};
  FnoModel m = make_fno(cfg, rng);
  randomize_params(m, rng, 0.3);
  Array x0 = rng.normals({2, 16});
  Array truth = rng.normals({2, 16});

  auto eval = [&](const Array& x) {
    Tape t;
    Var out = fno_forward(t, m, t.constant(x));
    return t.value(relative_l2_loss(out, t.constant(truth)))(0);
  };

  ParamRefs ps;
  m.collect(ps);
  zero_grads(ps);
  Array xgrad;
  {
    Tape t;
    Var xin = t.leaf(x0, true);
    Var out = fno_forward(t, m, xin);
    t.backward(relative_l2_loss(out, t.constant(truth)));
    xgrad = t.grad(xin);
  }

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t j = 0; j < x0.numel(); ++j) {
    const double keep = x0.data[j];
    x0.data[j] = keep + h;
    const double up = eval(x0);
    x0.data[j] = keep - h;
    const double dn = eval(x0);
    x0.data[j] = keep;
    const double fd = (up - dn) / (2.0 * h);
    worst = std::max(worst, std::abs(xgrad.data[j] - fd) /
                                std::max({1.0, std::abs(fd), std::abs(xgrad.data[j])}));
  }
  for (Param* p : ps)
    for (std::size_t j = 0; j < p->numel(); ++j) {
      const double keep = p->value.data[j];
      p->value.data[j] = keep + h;
      const double up = eval(x0);
      p->value.data[j] = keep - h;
      const double dn = eval(x0);
      p->value.data[j] = keep;
      const double fd = (up - dn) / (2.0 * h);
      worst = std::max(worst, std::abs(p->grad.data[j] - fd) /
                                  std::max({1.0, std::abs(fd), std::abs(p->grad.data[j])}));
    }
  REQUIRE(worst < 1e-4);
}

TEST_CASE("operator gradients match finite differences on a small 2d grid") {
  Rng rng(58);
  FnoConfig cfg{8, 2, true, 3, 2, 2, 4, true};
  FnoModel m = make_fno(cfg, rng);
  randomize_params(m, rng, 0.3);
  Array x0 = rng.normals({1, 64});
  Array truth = rng.normals({1, 64});

  auto eval = [&]() {
    Tape t;
    Var out = fno_forward(t, m, t.constant(x0));
    return t.value(relative_l2_loss(out, t.constant(truth)))(0);
  };

  ParamRefs ps;
  m.collect(ps);
  zero_grads(ps);
  {
    Tape t;
    Var out = fno_forward(t, m, t.constant(x0));
    t.backward(relative_l2_loss(out, t.constant(truth)));
  }

  const double h = 1e-6;
  double worst = 0.0;
  for (Param* p : ps)
    for (std::size_t j = 0; j < p->numel(); ++j) {
      const double keep = p->value.data[j];
      p->value.data[j] = keep + h;
      const double up = eval();
      p->value.data[j] = keep - h;
      const double dn = eval();
      p->value.data[j] = keep;
      const double fd = (up - dn) / (2.0 * h);
      worst = std::max(worst, std::abs(p->grad.data[j] - fd) /
                                  std::max({1.0, std::abs(fd), std::abs(p->grad.data[j])}));
    }
  REQUIRE(worst < 1e-4);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Rng rng(59);
  FnoConfig cfg{16, 1, false, 4, 3, 2, 4, true};
  FnoModel m = make_fno(cfg, rng);
  randomize_params(m, rng, 0.3);

  FieldPairs data;
  data.m = rng.normals({10, 16});
  data.u = rng.normals({10, 16});

  ParamRefs ps;
  m.collect(ps);
  std::vector<Array> before;
  for (Param* p : ps) before.push_back(p->value);

  FnoTrainConfig tc{3, 4, 0.0, 0};
  fno_finetune(m, data, 99, tc);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = 0; j < ps[i]->numel(); ++j)
      REQUIRE(ps[i]->value.data[j] == before[i].data[j]);
}

TEST_CASE("fine-tuning an empty dataset is rejected") {
  Rng rng(60);
  FnoConfig cfg{16, 1, false, 4, 3, 2, 4, true};
  FnoModel m = make_fno(cfg, rng);
  REQUIRE_THROWS_AS(fno_finetune(m, FieldPairs{}, 1), ConfigError);
}

TEST_CASE("dataset generation is deterministic and thread-count independent") {
  Problem pb = make_mini_darcy(8);
  FieldPairs a = make_prior_dataset(pb, 12, 7070);
  FieldPairs b = make_prior_dataset(pb, 12, 7070);
  REQUIRE(a.m.shape == Shape{12, 64});
  REQUIRE(vtest::max_abs_diff(a.m, b.m) == 0.0);
  REQUIRE(vtest::max_abs_diff(a.u, b.u) == 0.0);
  REQUIRE(a.m.all_finite());
  REQUIRE(a.u.all_finite());
}

TEST_CASE("field pair files round-trip") {
  Problem pb = make_mini_darcy(8);
  FieldPairs a = make_prior_dataset(pb, 5, 808);
  const std::string path = vtest::tmp_path("pairs_test.bin");
  save_pairs(path, a);
  FieldPairs b = load_pairs(path);
  REQUIRE(vtest::max_abs_diff(a.m, b.m) == 0.0);
  REQUIRE(vtest::max_abs_diff(a.u, b.u) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("parallel_for covers every index once and propagates errors") {
  std::vector<std::atomic<int>> hits(257);
  for (auto& h : hits) h = 0;
  parallel_for(257, [&](std::size_t i) { hits[i]++; }, 5);
  for (auto& h : hits) REQUIRE(h == 1);

  REQUIRE_THROWS_AS(parallel_for(100,
                                 [](std::size_t i) {
                                   if (i == 37) throw NumericError("worker failure");
                                 },
                                 4),
                    NumericError);
}

TEST_CASE("exact-solver predictor has zero fitting error") {
  Problem pb = make_problem(ProblemKind::darcy1d, 16, 0.01, 12345);
  BatchPredictor oracle = [&pb](const Array& fields) {
    Array out({fields.shape[0], fields.shape[1]});
    for (std::size_t i = 0; i < fields.shape[0]; ++i) {
      Array f({fields.shape[1]});
      std::copy(fields.data.begin() + long(i * fields.shape[1]),
                fields.data.begin() + long((i + 1) * fields.shape[1]), f.data.begin());
      Array u = pb.solve_field(f);
      std::copy(u.data.begin(), u.data.end(), out.data.begin() + long(i * fields.shape[1]));
    }
    return out;
  };
  REQUIRE(surrogate_fitting_error(oracle, pb, pb.xi_ref, 3, 321) == 0.0);
}

TEST_CASE("fitting error is seed-reproducible and independent of observation noise") {
  Problem lo = make_problem(ProblemKind::darcy1d, 16, 0.01, 12345);
  Problem hi = make_problem(ProblemKind::darcy1d, 16, 0.10, 12345);
  Rng rng(61);
  FnoConfig cfg = fno_config_for(ProblemKind::darcy1d);
  cfg.width = 8;
  cfg.modes = 4;
  cfg.depth = 2;
  cfg.proj_hidden = 8;
  FnoModel m = make_fno(cfg, rng);

  const double a = surrogate_fitting_error(m, lo, lo.xi_ref, 4, 777);
  const double b = surrogate_fitting_error(m, lo, lo.xi_ref, 4, 777);
  const double c = surrogate_fitting_error(m, hi, hi.xi_ref, 4, 777);
  REQUIRE(a == b);
  REQUIRE(a == c);  // states only; observation noise never enters
  REQUIRE(a > 0.0);
}

TEST_CASE("checkpoints restore spectral weights exactly") {
  Rng rng(62);
  FnoConfig cfg{16, 1, false, 4, 3, 2, 4, true};
  FnoModel m = make_fno(cfg, rng);
  randomize_params(m, rng, 0.5);
  ParamRefs ps;
  m.collect(ps);
  const std::string path = vtest::tmp_path("fno_ckpt_test.bin");
  save_params(path, ps);

  Array probe = rng.normals({2, 16});
  Array before = fno_predict(m, probe);
  randomize_params(m, rng, 0.5);
  load_params(path, ps);
  Array after = fno_predict(m, probe);
  REQUIRE(vtest::max_abs_diff(before, after) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("mini pretraining run fits in-distribution darcy flow") {
  Problem pb = make_mini_darcy(16);
  FieldPairs train = make_prior_dataset(pb, 160, 4001);
  FieldPairs test = make_prior_dataset(pb, 40, 4002);

  Rng rng(63);
  FnoConfig cfg{64, 1, false, 16, 8, 4, 32, true};
  FnoModel m = make_fno(cfg, rng);

  std::vector<double> epoch_losses;
  FnoTrainConfig tc{40, 40, 1e-3, 25};
  fno_pretrain(m, train, 515, tc,
               [&](std::size_t, double l) { epoch_losses.push_back(l); });

  REQUIRE(epoch_losses.size() == 40);
  REQUIRE(epoch_losses.back() < epoch_losses.front());

  const double err0 = heldout_error(m, test);
  REQUIRE(err0 < 0.05);

  // Fine-tuning on more in-distribution data must not degrade held-out
  // accuracy beyond a factor of two.
  FieldPairs extra = make_prior_dataset(pb, 60, 4003);
  FnoTrainConfig ft = fno_finetune_defaults();
  ft.epochs = 20;
  fno_finetune(m, extra, 516, ft);
  const double err1 = heldout_error(m, test);
  REQUIRE(err1 < 2.0 * err0);
}
