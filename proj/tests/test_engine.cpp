#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "oracles.hpp"
#include "ssvi/engine.hpp"

using namespace ssvi;

namespace {

// Degenerate test model: one Dirichlet block, fixed local stats per group.
struct ConstStatModel final : Model {
  BlockLayout layout_;
  Vec prior_;
  Vec stat_;
  std::size_t groups_;

  ConstStatModel(Vec prior, Vec stat, std::size_t groups)
      : layout_(BlockLayout::uniform(Family::Dirichlet, 1, prior.size())),
        prior_(std::move(prior)), stat_(std::move(stat)), groups_(groups) {}

  std::string_view name() const override { return "const_stat"; }
  const BlockLayout& layout() const override { return layout_; }
  const Vec& prior() const override { return prior_; }
  std::size_t num_groups() const override { return groups_; }
  bool supports(EStepKind) const override { return true; }
  void batch_stats(std::span<const double>, std::span<const std::size_t> groups,
                   const EStepConfig&, Rng&, Vec& accum) override {
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = 0; j < stat_.size(); ++j) accum[j] += stat_[j];
  }
  double diagnostic(const Vec&) const override { return 0.0; }
};

}  // namespace

TEST_SUITE_BEGIN("engine");

TEST_CASE("step size schedule") {
  CHECK(step_size(1, {1.0, 0.75, false}) == doctest::Approx(1.0));
  CHECK(step_size(16, {1.0, 0.75, false}) == doctest::Approx(0.125));
  CHECK(step_size(100, {1.0, 0.75, false}) ==
        doctest::Approx(std::exp(-0.75 * std::log(100.0))).epsilon(1e-12));
  CHECK(step_size(100, {1.0, 0.75, false}) == doctest::Approx(0.031623).epsilon(1e-4));
  CHECK_THROWS_AS(step_size(0, {}), std::domain_error);
}

TEST_CASE("data multiplier with and without ramping") {
  Schedule off{1.0, 0.75, false};
  CHECK(data_multiplier(1, 1000, 100, off) == doctest::Approx(10.0));
  CHECK(data_multiplier(99, 1000, 100, off) == doctest::Approx(10.0));
  Schedule on{1.0, 0.75, true};
  CHECK(data_multiplier(1, 1000, 100, on) == doctest::Approx(1.0));
  CHECK(data_multiplier(5, 1000, 100, on) == doctest::Approx(5.0));
  CHECK(data_multiplier(10, 1000, 100, on) == doctest::Approx(10.0));
  CHECK(data_multiplier(11, 1000, 100, on) == doctest::Approx(10.0));
  CHECK_THROWS_AS(data_multiplier(1, 10, 11, off), std::domain_error);
}

TEST_CASE("mean-field m-step arithmetic") {
  const Vec lambda{2.0, 2.0}, prior{1.0, 1.0};

  // rho = 1 is full replacement
  const Vec full = mstep_meanfield(lambda, prior, Vec{3.0, 5.0}, 1.0);
  CHECK(full[0] == 4.0);
  CHECK(full[1] == 6.0);

  // convex combination toward the target
  const Vec half = mstep_meanfield(lambda, prior, Vec{3.0, 5.0}, 0.5);
  CHECK(half[0] == doctest::Approx(3.0));
  CHECK(half[1] == doctest::Approx(4.0));

  // stats = lambda - prior is a fixed point for any rho
  for (double rho : {0.1, 0.37, 0.9, 1.0}) {
    const Vec fp = mstep_meanfield(lambda, prior, Vec{1.0, 1.0}, rho);
    CHECK(fp[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(fp[1] == doctest::Approx(2.0).epsilon(1e-15));
  }

  CHECK_THROWS_AS(mstep_meanfield(lambda, prior, Vec{0.0, 0.0}, 0.0),
                  std::domain_error);
  CHECK_THROWS_AS(mstep_meanfield(lambda, prior, Vec{0.0, 0.0}, 1.5),
                  std::domain_error);
}

TEST_CASE("averaged m-step: conjugate replacement and two-step unroll") {
  const Vec prior{0.5, 1.5};
  // rho = 1 with observed stats lands exactly on the conjugate posterior
  const Vec stats{7.0, 3.0};
  Vec lambda{123.0, 456.0};
  lambda = mstep_ssvi_a(lambda, prior, stats, 1.0);
  CHECK(lambda[0] == prior[0] + stats[0]);
  CHECK(lambda[1] == prior[1] + stats[1]);

  // rho = (1, 0.5) with constant stats stays at prior + stats
  lambda = mstep_ssvi_a(lambda, prior, stats, 0.5);
  CHECK(lambda[0] == doctest::Approx(prior[0] + stats[0]).epsilon(1e-15));
  CHECK(lambda[1] == doctest::Approx(prior[1] + stats[1]).epsilon(1e-15));

  // rho -> 0 leaves lambda almost unchanged
  const Vec before{2.0, 2.0};
  const Vec after = mstep_ssvi_a(before, prior, Vec{100.0, 100.0}, 1e-12);
  CHECK(after[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("convex-combination bound") {
  Rng rng(3);
  const Vec prior{0.3, 0.8, 2.0};
  for (int trial = 0; trial < 100; ++trial) {
    Vec lambda(3), stats(3);
    for (double& x : lambda) x = rng.uniform(0.1, 5.0);
    for (double& x : stats) x = rng.uniform(0.0, 10.0);
    const double rho = rng.uniform(0.01, 1.0);
    const Vec next = mstep_ssvi_a(lambda, prior, stats, rho);
    for (std::size_t i = 0; i < 3; ++i) {
      const double target = prior[i] + stats[i];
      CHECK(next[i] >= std::min(lambda[i], target) - 1e-12);
      CHECK(next[i] <= std::max(lambda[i], target) + 1e-12);
    }
  }
}

TEST_CASE("apply_v: zero stats, linearity") {
  const BlockLayout layout = BlockLayout::uniform(Family::Dirichlet, 1, 4);
  const Vec lambda{2.0, 1.0, 3.0, 0.7};
  Rng rng(5);
  const BlockedDraw draw = sample_global(layout, lambda, rng);

  const Vec zero = apply_v(layout, lambda, draw, Vec(4, 0.0));
  for (double x : zero) CHECK(x == 0.0);

  Vec s1(4), s2(4);
  for (double& x : s1) x = rng.uniform(-1.0, 1.0);
  for (double& x : s2) x = rng.uniform(-1.0, 1.0);
  Vec combo(4);
  for (std::size_t i = 0; i < 4; ++i) combo[i] = 2.0 * s1[i] - 3.0 * s2[i];
  const Vec v1 = apply_v(layout, lambda, draw, s1);
  const Vec v2 = apply_v(layout, lambda, draw, s2);
  const Vec vc = apply_v(layout, lambda, draw, combo);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(vc[i] == doctest::Approx(2.0 * v1[i] - 3.0 * v2[i]).epsilon(1e-10));
}

TEST_CASE("apply_v matches the dense assembly oracle") {
  NaturalParams lam{Family::Dirichlet, {2.0, 1.0, 0.6}};
  const BlockLayout layout = BlockLayout::uniform(Family::Dirichlet, 1, 3);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Vec u(3), stats(3);
    for (double& x : u) x = rng.uniform();
    for (double& x : stats) x = rng.uniform(-2.0, 2.0);
    const GlobalDraw draw = sample_by_inversion(lam, u);
    BlockedDraw bd{draw.beta, draw.uniforms, draw.auxiliaries};
    const Vec got = apply_v(layout, lam.values, bd, stats);
    const Vec want = oracles::dense_apply_v(lam, draw, stats);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(oracles::rel_err(got[i], want[i]) < 1e-8);
  }
}

TEST_CASE("apply_v for the gamma family matches dense assembly") {
  NaturalParams lam{Family::Gamma, {1.5, 4.0}};
  const BlockLayout layout = BlockLayout::uniform(Family::Gamma, 1, 2);
  Rng rng(11);
  Vec u{rng.uniform(), rng.uniform()};
  const GlobalDraw draw = sample_by_inversion(lam, u);
  BlockedDraw bd{draw.beta, draw.uniforms, draw.auxiliaries};
  const Vec stats{0.7, -1.3};
  const Vec got = apply_v(layout, lam.values, bd, stats);
  const Vec want = oracles::dense_apply_v(lam, draw, stats);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(oracles::rel_err(got[i], want[i]) < 1e-8);
}

TEST_CASE("Monte-Carlo mean of V is the identity (smoke)") {
  const std::size_t k = 3;
  const BlockLayout layout = BlockLayout::uniform(Family::Dirichlet, 1, k);
  const Vec lambda{1.8, 0.9, 3.1};
  Rng rng(13);
  std::vector<std::vector<MeanVar>> acc(k, std::vector<MeanVar>(k));
  Vec unit(k);
  for (int s = 0; s < 4000; ++s) {
    const BlockedDraw draw = sample_global(layout, lambda, rng);
    for (std::size_t j = 0; j < k; ++j) {
      std::fill(unit.begin(), unit.end(), 0.0);
      unit[j] = 1.0;
      const Vec col = apply_v(layout, lambda, draw, unit);
      for (std::size_t i = 0; i < k; ++i) acc[i][j].add(col[i]);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double want = i == j ? 1.0 : 0.0;
      CHECK(std::fabs(acc[i][j].mean - want) < 6.0 * acc[i][j].std_error());
    }
  }
}

TEST_CASE("structured m-step: prior reversion and natural-gradient assembly") {
  const BlockLayout layout = BlockLayout::uniform(Family::Dirichlet, 1, 3);
  const Vec lambda{2.5, 1.2, 0.8}, prior{1.0, 1.0, 1.0};
  Rng rng(17);
  const BlockedDraw draw = sample_global(layout, lambda, rng);

  // zero stats revert toward the prior
  const Vec rev = mstep_ssvi(layout, lambda, prior, draw, Vec(3, 0.0), 0.25);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(rev[i] == doctest::Approx(0.75 * lambda[i] + 0.25 * prior[i]).epsilon(1e-13));

  // (lambda' - lambda)/rho reproduces -lambda + prior + V stats assembled
  // densely from the same draw
  const Vec stats{4.0, 0.5, 2.0};
  const double rho = 0.37;
  const Vec next = mstep_ssvi(layout, lambda, prior, draw, stats, rho);
  NaturalParams lam{Family::Dirichlet, lambda};
  GlobalDraw gd{draw.beta, draw.uniforms, draw.auxiliaries};
  const Vec vstats = oracles::dense_apply_v(lam, gd, stats);
  for (std::size_t i = 0; i < 3; ++i) {
    const double g_nat = -lambda[i] + prior[i] + vstats[i];
    CHECK((next[i] - lambda[i]) / rho == doctest::Approx(g_nat).epsilon(1e-8));
  }
}

TEST_CASE("m-step keeps the natural-parameter domain") {
  const BlockLayout layout = BlockLayout::uniform(Family::Dirichlet, 1, 2);
  const Vec lambda{0.05, 4.0}, prior{0.01, 1.0};
  Rng rng(19);
  // large negative stats push the target far below zero
  for (int trial = 0; trial < 50; ++trial) {
    const BlockedDraw draw = sample_global(layout, lambda, rng);
    const Vec next = mstep_ssvi(layout, lambda, prior, draw, Vec{-50.0, -50.0}, 1.0);
    for (double x : next) {
      CHECK(x >= kDomainFloor);
      CHECK(std::isfinite(x));
    }
  }
}

TEST_CASE("averaged update agrees with the structured update in expectation") {
  // constant local stats decouple eta from the draw, so averaging the V-term
  // over draws must reproduce the plain conjugate target
  const BlockLayout layout = BlockLayout::uniform(Family::Dirichlet, 1, 3);
  const Vec lambda{2.2, 1.4, 3.6}, prior{0.5, 0.5, 0.5};
  const Vec stats{3.0, 1.0, 2.0};
  const double rho = 0.5;
  const Vec avg_update = mstep_ssvi_a(lambda, prior, stats, rho);

  Rng rng(23);
  std::vector<MeanVar> acc(3);
  for (int s = 0; s < 20000; ++s) {
    const BlockedDraw draw = sample_global(layout, lambda, rng);
    const Vec next = mstep_ssvi(layout, lambda, prior, draw, stats, rho);
    for (std::size_t i = 0; i < 3; ++i) acc[i].add(next[i]);
  }
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::fabs(acc[i].mean - avg_update[i]) < 4.0 * acc[i].std_error());
}

TEST_CASE("run: zero iterations returns the initialization") {
  ConstStatModel model(Vec{1.0, 2.0}, Vec{0.5, 0.5}, 10);
  RunConfig cfg;
  cfg.iterations = 0;
  cfg.seed = 7;
  cfg.lambda_init = Vec{3.0, 4.0};
  const RunResult r = run(model, cfg);
  CHECK(r.lambda == Vec{3.0, 4.0});
  CHECK(r.trace.rows.empty());
  CHECK(r.iterations_run == 0);
}

TEST_CASE("run: deterministic replay and trace shape") {
  ConstStatModel model(Vec{1.0, 2.0, 0.5}, Vec{0.2, 0.4, 0.1}, 20);
  RunConfig cfg;
  cfg.iterations = 25;
  cfg.minibatch = 7;
  cfg.seed = 99;
  cfg.mstep = MStepKind::SSVI;
  cfg.init_noise_scale = 2.0;
  const RunResult a = run(model, cfg);
  const RunResult b = run(model, cfg);
  CHECK(a.trace.replay_hash() == b.trace.replay_hash());
  CHECK(a.lambda == b.lambda);
  CHECK(a.trace.rows.size() == 25);
  CHECK(a.trace.rows.front().t == 1);
  CHECK(a.trace.rows.back().t == 25);
  for (const auto& row : a.trace.rows)
    CHECK(row.multiplier == doctest::Approx(20.0 / 7.0));

  RunConfig other = cfg;
  other.seed = 100;
  const RunResult c = run(model, other);
  CHECK(a.trace.replay_hash() != c.trace.replay_hash());
}

TEST_CASE("run: advisory relative-change termination") {
  // constant stats with decaying rho: iterates converge to prior + N*stat
  ConstStatModel model(Vec{1.0, 1.0}, Vec{1.0, 1.0}, 4);
  RunConfig cfg;
  cfg.iterations = 5000;
  cfg.seed = 3;
  cfg.tol = 1e-9;
  cfg.patience = 3;
  cfg.mstep = MStepKind::SSVI_A;
  const RunResult r = run(model, cfg);
  CHECK(r.iterations_run < 5000);
  CHECK(r.trace.rows.size() == r.iterations_run);
}

TEST_CASE("run: rejects unsupported configurations") {
  ConstStatModel model(Vec{1.0}, Vec{1.0}, 5);
  RunConfig cfg;
  cfg.iterations = 1;
  cfg.minibatch = 9;  // more than the number of groups
  CHECK_THROWS_AS(run(model, cfg), std::domain_error);
}

TEST_CASE("checkpoint round trip") {
  Checkpoint ckpt;
  ckpt.model_name = "dpmb";
  ckpt.iteration = 42;
  ckpt.lambda = Vec{1.0, 2.5, 1e-8, 3.14159265358979};
  Rng rng(5);
  rng.uniform();
  ckpt.rng_state = rng.state();
  ckpt.config_digest = 0xdeadbeefULL;
  ckpt.dataset_digest = 0x1234ULL;

  const std::string path = "ckpt_roundtrip_test.json";
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.model_name == ckpt.model_name);
  CHECK(back.iteration == ckpt.iteration);
  CHECK(back.lambda == ckpt.lambda);  // bit-exact doubles
  CHECK(back.rng_state == ckpt.rng_state);
  CHECK(back.config_digest == ckpt.config_digest);
  CHECK(back.dataset_digest == ckpt.dataset_digest);
  std::remove(path.c_str());

  // restored rng continues identically
  Rng r1(5);
  r1.uniform();
  Rng r2(0);
  r2.restore(back.rng_state);
  for (int i = 0; i < 10; ++i) CHECK(r1.next_u64() == r2.next_u64());
}

TEST_SUITE_END();
