#include <array>
#include <cmath>
#include <memory>
#include <vector>

#include <doctest.h>

#include "support/oracles.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/imp.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/objective.hpp"

using namespace ticketlab;

namespace {

RegistryPtr flat_registry(std::size_t n) {
  return std::make_shared<const ParamRegistry>(std::vector<ParamSegment>{
      {"w", {n}, 0, SegmentKind::weight}});
}

// 1/2 sum a_i (m_i theta_i)^2 with an analytic Hessian, for the curvature
// bound checks.
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(std::vector<double> diag)
      : diag_(std::move(diag)) {}

  double value(const ParamVector& p, const PruningMask& m) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.bits[i]) s += 0.5 * diag_[i] * p[i] * p[i];
    }
    return s;
  }
  ParamVector gradient(const ParamVector& p,
                       const PruningMask& m) const override {
    ParamVector g = zeros_like(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.bits[i]) g.values[i] = diag_[i] * p[i];
    }
    return g;
  }
  ParamVector hessian_vector(const ParamVector& p, const PruningMask& m,
                             const ParamVector& d) const override {
    ParamVector h = zeros_like(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.bits[i]) h.values[i] = diag_[i] * d[i];
    }
    return h;
  }

 private:
  std::vector<double> diag_;
};

ImpConfig quick_imp(std::uint64_t seed) {
  ImpConfig cfg;
  cfg.seed = seed;
  cfg.train.learning_rate = 0.1;
  cfg.train.momentum = 0.9;
  cfg.train.epochs = 12;
  cfg.train.batch_size = 16;
  return cfg;
}

}  // namespace

TEST_CASE("a target of one quantum stops after a single prune round") {
  // 20 prunable weights: one round at rate 0.2 lands exactly on 0.2.
  const MlpSpec spec{{2, 5, 2}, Activation::relu};
  const Dataset data = make_blobs(2, 16, 2, 2.0, 11);
  ImpConfig cfg = quick_imp(1);
  cfg.target_sparsity = 0.2;
  cfg.prune_rate = 0.2;
  cfg.train.epochs = 2;

  const TicketArtifact art = run_imp(spec, cfg, data);
  REQUIRE(art.rounds.size() == 2);  // dense round, then the pruned one
  CHECK(art.rounds[0].sparsity == 0.0);
  CHECK(art.rounds[1].sparsity == doctest::Approx(0.2));
  CHECK(art.mask.sparsity() == doctest::Approx(0.2));
}

TEST_CASE("sparsity trajectory equals the floor recurrence") {
  const MlpSpec spec{{3, 7, 3}, Activation::relu};
  const Dataset data = make_blobs(3, 12, 3, 2.0, 5);
  ImpConfig cfg = quick_imp(7);
  cfg.target_sparsity = 0.8;
  cfg.prune_rate = 0.2;
  cfg.train.epochs = 1;

  const TicketArtifact art = run_imp(spec, cfg, data);
  const std::size_t prunable = art.mask.prunable_count();
  const auto traj =
      unmasked_trajectory(prunable, cfg.prune_rate, art.rounds.size() - 1);
  REQUIRE(traj.size() == art.rounds.size());
  for (std::size_t r = 0; r < art.rounds.size(); ++r) {
    const double expected =
        1.0 - static_cast<double>(traj[r]) / static_cast<double>(prunable);
    CHECK(art.rounds[r].sparsity == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(art.rounds.back().sparsity >= 0.8 - 1e-12);
  CHECK(art.rounds[art.rounds.size() - 2].sparsity < 0.8);
}

TEST_CASE("the final round can be replayed bit for bit") {
  const MlpSpec spec{{2, 6, 2}, Activation::relu};
  const Dataset data = make_blobs(2, 20, 2, 2.5, 3);
  ImpConfig cfg = quick_imp(21);
  cfg.target_sparsity = 0.5;

  const TicketArtifact art = run_imp(spec, cfg, data);
  CHECK(art.anchor.values == art.init.values);  // rewind_step 0

  OptimizerConfig replay = cfg.train;
  replay.seed = imp_round_seed(cfg.seed, art.rounds.size() - 1);
  const RetrainResult re =
      retrain_with_mask(spec, art.mask, art.anchor, data, replay, cfg.reg);
  CHECK(re.params.values == art.trained.values);
  CHECK(re.train_error == art.rounds.back().train_error);
  CHECK(re.test_error == art.rounds.back().test_error);
  CHECK(re.dist_from_start == art.rounds.back().dist_from_init);
}

TEST_CASE("runs are reproducible and seeds matter") {
  const MlpSpec spec{{2, 5, 2}, Activation::tanh};
  const Dataset data = make_blobs(2, 12, 2, 2.0, 9);
  ImpConfig cfg = quick_imp(33);
  cfg.target_sparsity = 0.4;
  cfg.train.epochs = 3;

  const TicketArtifact a = run_imp(spec, cfg, data);
  const TicketArtifact b = run_imp(spec, cfg, data);
  CHECK(a.trained.values == b.trained.values);
  CHECK(a.mask.bits == b.mask.bits);

  cfg.seed = 34;
  const TicketArtifact c = run_imp(spec, cfg, data);
  CHECK(a.trained.values != c.trained.values);
}

TEST_CASE("a positive rewind step anchors at that optimizer step") {
  const MlpSpec spec{{2, 5, 2}, Activation::relu};
  const Dataset data = make_blobs(2, 16, 2, 2.0, 13);
  ImpConfig cfg = quick_imp(55);
  cfg.target_sparsity = 0.3;
  cfg.rewind_step = 2;
  cfg.train.epochs = 3;

  const TicketArtifact art = run_imp(spec, cfg, data);
  CHECK(art.anchor.values != art.init.values);

  // The anchor is the round-0 snapshot; replay round 0 to reproduce it.
  OptimizerConfig round0 = cfg.train;
  round0.seed = imp_round_seed(cfg.seed, 0);
  const PruningMask dense = PruningMask::all_ones(make_registry(spec));
  const TrainResult replay =
      train(spec, data.train, dense, art.init, round0, cfg.reg, 2);
  CHECK(art.anchor.values == replay.snapshot.values);
}

TEST_CASE("an all-ones retrain reproduces the dense baseline") {
  const MlpSpec spec{{2, 6, 2}, Activation::relu};
  const Dataset data = make_blobs(2, 16, 2, 2.0, 17);
  const RegistryPtr reg = make_registry(spec);
  const ParamVector init = init_params(spec, 4);
  const PruningMask dense = PruningMask::all_ones(reg);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.seed = 77;
  const RegularizerConfig reg_cfg;

  const RetrainResult re =
      retrain_with_mask(spec, dense, init, data, cfg, reg_cfg);
  const TrainResult direct = train(spec, data.train, dense, init, cfg, reg_cfg);
  CHECK(re.params.values == direct.params.values);
}

TEST_CASE("anchored regularization pulls the ticket toward its start") {
  const MlpSpec spec{{2, 8, 2}, Activation::relu};
  const Dataset data = make_blobs(2, 24, 2, 2.5, 19);
  const RegistryPtr reg = make_registry(spec);
  const ParamVector init = init_params(spec, 6);
  RngStream rng(3);
  const PruningMask mask = testing::random_mask(reg, rng, 0.6);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.9;
  cfg.epochs = 25;
  cfg.batch_size = 12;
  cfg.seed = 5;

  RegularizerConfig plain;
  const RetrainResult free_run =
      retrain_with_mask(spec, mask, init, data, cfg, plain);

  RegularizerConfig anchored;
  anchored.kind = RegularizerKind::l2_init;
  anchored.lambda = 0.05;
  anchored.anchor = init;
  const RetrainResult pulled =
      retrain_with_mask(spec, mask, init, data, cfg, anchored);

  CHECK(pulled.dist_from_start < free_run.dist_from_start);
}

TEST_CASE("separable blobs yield a zero-train-error ticket at 80% sparsity") {
  const MlpSpec spec{{2, 16, 2}, Activation::relu};
  // Data seed chosen for well-separated centers (the blob directions are
  // random, so some seeds produce overlapping classes).
  const Dataset data = make_blobs(2, 32, 2, 4.0, 102);
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ImpConfig cfg = quick_imp(seed);
    cfg.target_sparsity = 0.8;
    cfg.prune_rate = 0.2;
    cfg.criterion = PruneCriterion::large_final;
    cfg.train.epochs = 25;
    const TicketArtifact art = run_imp(spec, cfg, data);
    CHECK(art.mask.sparsity() >= 0.8 - 1e-12);
    if (art.rounds.back().train_error == 0.0) ++wins;
  }
  CHECK(wins >= 4);
}

TEST_CASE("imp config and data validation") {
  const MlpSpec spec{{2, 4, 2}, Activation::relu};
  ImpConfig cfg = quick_imp(1);

  cfg.target_sparsity = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.target_sparsity = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = quick_imp(1);
  cfg.prune_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = quick_imp(1);
  Dataset empty;
  CHECK_THROWS_AS(run_imp(spec, cfg, empty), DataError);
}

TEST_CASE("a prune quota that rounds to zero aborts loudly") {
  const MlpSpec spec{{2, 3, 2}, Activation::relu};  // 12 prunable weights
  const Dataset data = make_blobs(2, 8, 2, 2.0, 23);
  ImpConfig cfg = quick_imp(2);
  cfg.target_sparsity = 0.5;
  cfg.prune_rate = 0.05;  // floor(12 * 0.05) = 0
  cfg.train.epochs = 1;
  CHECK_THROWS_AS(run_imp(spec, cfg, data), NumericError);
}

TEST_CASE("drop table with no pruning is exactly zero everywhere") {
  const MlpSpec spec{{2, 6, 2}, Activation::relu};
  const Dataset data = make_blobs(2, 16, 2, 2.0, 29);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  const RegularizerConfig reg_cfg;

  const auto table = criteria_drop_table(
      spec, data, cfg, reg_cfg, /*target_sparsity=*/0.0, /*prune_rate=*/0.2,
      {PruneCriterion::large_final, PruneCriterion::random_scores}, {1, 2});
  REQUIRE(table.size() == 2);
  for (const CriterionDrops& row : table) {
    REQUIRE(row.per_seed.size() == 2);
    CHECK(row.after_prune == 0.0);
    CHECK(row.after_rewind == 0.0);
    CHECK(row.after_retrain == 0.0);
    for (const auto& s : row.per_seed) {
      CHECK(s == std::array<double, 3>{0.0, 0.0, 0.0});
    }
  }
}

TEST_CASE("drop table prefers keeping large weights, per seed majority") {
  // Wide enough that 20% of the weights still cover the task; the ordering
  // collapses to chance on very small nets.
  const MlpSpec spec{{4, 48, 3}, Activation::relu};
  const Dataset data = make_blobs(3, 40, 4, 5.0, 7);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.15;
  cfg.momentum = 0.9;
  cfg.epochs = 40;
  cfg.batch_size = 20;
  const RegularizerConfig reg_cfg;

  const std::vector<PruneCriterion> criteria = {PruneCriterion::large_final,
                                                PruneCriterion::small_final,
                                                PruneCriterion::random_scores};
  const auto table = criteria_drop_table(spec, data, cfg, reg_cfg, 0.8, 0.2,
                                         criteria, {1, 2, 3, 4, 5});
  REQUIRE(table.size() == 3);
  const CriterionDrops& large = table[0];
  const CriterionDrops& small = table[1];
  const CriterionDrops& random = table[2];

  // Drop magnitudes after pruning: large_final < random <= small_final.
  int large_under_random = 0;
  int random_under_small = 0;
  for (std::size_t s = 0; s < 5; ++s) {
    if (std::abs(large.per_seed[s][0]) < std::abs(random.per_seed[s][0])) {
      ++large_under_random;
    }
    if (std::abs(random.per_seed[s][0]) <= std::abs(small.per_seed[s][0])) {
      ++random_under_small;
    }
  }
  CHECK(large_under_random >= 4);
  CHECK(random_under_small >= 4);
  CHECK(std::abs(large.after_prune) < std::abs(random.after_prune));
  CHECK(std::abs(random.after_prune) <= std::abs(small.after_prune));

  // Means are the plain per-seed averages.
  for (const CriterionDrops& row : table) {
    double sum = 0.0;
    for (const auto& s : row.per_seed) sum += s[0];
    CHECK(row.after_prune == doctest::Approx(sum / 5.0).epsilon(1e-12));
  }
}

TEST_CASE("pruning delta negates exactly the removed weights") {
  const RegistryPtr reg = flat_registry(4);
  const ParamVector trained(reg, {0.5, -0.1, 0.3, -0.9});
  const PruningMask mask = PruningMask::all_ones(reg);
  RngStream rng(1);
  const auto scores = score(PruneCriterion::large_final, trained, rng);

  const PruningDelta pd = pruning_delta(trained, mask, scores, 0.5);
  CHECK(pd.next_mask.bits == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(pd.delta.values == std::vector<double>{0.0, 0.1, -0.3, 0.0});
  // Applying the delta reproduces the post-pruning weights.
  for (std::size_t i = 0; i < trained.size(); ++i) {
    const double after = trained[i] + pd.delta.values[i];
    CHECK(after == (pd.next_mask.bits[i] ? trained[i] : 0.0));
  }
}

TEST_CASE("curvature bound on a diagonal quadratic, closed form") {
  const RegistryPtr reg = flat_registry(2);
  const PruningMask mask = PruningMask::all_ones(reg);
  const QuadraticObjective obj({1.0, 3.0});
  const ParamVector at_zero(reg);
  ParamVector delta(reg, {1.0, 1.0});

  TaylorConfig cfg;
  cfg.slack = 0.0;
  cfg.power_iters = 300;
  cfg.power_tol = 1e-14;

  const TaylorCheck chk = taylor_bound_check(obj, at_zero, mask, delta, cfg);
  CHECK(chk.lhs == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(chk.rhs == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(chk.max_eigenvalue == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(chk.holds);
  CHECK(chk.stationary);
  CHECK(chk.grad_norm == 0.0);
  CHECK(chk.grad_tol == doctest::Approx(1e-3 * std::sqrt(2.0)));
}

TEST_CASE("zero perturbation gives a degenerate but holding bound") {
  const RegistryPtr reg = flat_registry(2);
  const PruningMask mask = PruningMask::all_ones(reg);
  const QuadraticObjective obj({1.0, 3.0});
  const ParamVector at_zero(reg);
  const ParamVector delta(reg);

  const TaylorCheck chk =
      taylor_bound_check(obj, at_zero, mask, delta, TaylorConfig{});
  CHECK(chk.lhs == 0.0);
  CHECK(chk.rhs == 0.0);
  CHECK(chk.holds);
  CHECK(chk.delta_norm == 0.0);
}

TEST_CASE("non-stationary base points are flagged but still checked") {
  const RegistryPtr reg = flat_registry(2);
  const PruningMask mask = PruningMask::all_ones(reg);
  const QuadraticObjective obj({1.0, 3.0});
  const ParamVector at(reg, {1.0, 1.0});
  const ParamVector delta(reg, {0.5, 0.0});

  const TaylorCheck chk = taylor_bound_check(obj, at, mask, delta, TaylorConfig{});
  CHECK_FALSE(chk.stationary);
  CHECK(chk.grad_norm == doctest::Approx(std::sqrt(10.0)).epsilon(1e-12));
  CHECK(chk.rhs > 0.0);
  CHECK(chk.delta_norm == 0.5);
}

TEST_CASE("perturbations are clipped to the unmasked subspace") {
  const RegistryPtr reg = flat_registry(2);
  PruningMask mask = PruningMask::all_ones(reg);
  mask.bits = {1, 0};
  const QuadraticObjective obj({1.0, 3.0});
  const ParamVector at_zero(reg);
  const ParamVector delta(reg, {1.0, 1.0});

  TaylorConfig cfg;
  cfg.slack = 0.05;
  const TaylorCheck chk = taylor_bound_check(obj, at_zero, mask, delta, cfg);
  // Coordinate 1 is masked away: effective delta (1,0), curvature 1.
  CHECK(chk.delta_norm == 1.0);
  CHECK(chk.lhs == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(chk.max_eigenvalue == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(chk.holds);
}

TEST_CASE("removing small weights moves the loss less than removing large") {
  int small_wins = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const MlpSpec spec{{2, 10, 2}, Activation::tanh};
    const Dataset data = make_blobs(2, 24, 2, 2.5, 37 + seed);
    const RegistryPtr reg = make_registry(spec);
    const ParamVector init = init_params(spec, seed);
    const PruningMask dense = PruningMask::all_ones(reg);
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.9;
    cfg.epochs = 40;
    cfg.batch_size = 12;
    cfg.seed = seed;
    const RegularizerConfig reg_cfg;
    const TrainResult base = train(spec, data.train, dense, init, cfg, reg_cfg);

    const MlpBatchObjective obj(spec, data.train);
    RngStream rng(seed);
    const auto small_scores =
        score(PruneCriterion::small_final, base.params, rng);
    const auto large_scores =
        score(PruneCriterion::large_final, base.params, rng);
    // small_final keeps small weights, so pruning removes the large ones
    // and vice versa; compare the loss change from each removal.
    const PruningDelta keep_small =
        pruning_delta(base.params, dense, small_scores, 0.2);
    const PruningDelta keep_large =
        pruning_delta(base.params, dense, large_scores, 0.2);

    TaylorConfig tc;
    tc.seed = seed;
    const TaylorCheck remove_large =
        taylor_bound_check(obj, base.params, dense, keep_small.delta, tc);
    const TaylorCheck remove_small =
        taylor_bound_check(obj, base.params, dense, keep_large.delta, tc);
    if (remove_small.lhs < remove_large.lhs) ++small_wins;
  }
  CHECK(small_wins >= 2);
}
