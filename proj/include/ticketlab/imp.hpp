#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ticketlab/data.hpp"
#include "ticketlab/mask.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/objective.hpp"
#include "ticketlab/optim.hpp"

namespace ticketlab {

struct ImpConfig {
  double target_sparsity = 0.8;               // stop once reached
  double prune_rate = 0.2;                    // fraction removed per round
  PruneCriterion criterion = PruneCriterion::large_final;
  std::size_t rewind_step = 0;                // optimizer steps; 0 = init
  bool prune_biases = false;
  OptimizerConfig train;                      // per-round budget; seed derived
  RegularizerConfig reg;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoundLog {
  std::size_t round = 0;        // 0 = dense training run
  double sparsity = 0.0;        // of the mask this round trained under
  double train_loss = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  double dist_from_init = 0.0;  // ||m.(trained - init)||_2
};

struct TicketArtifact {
  MlpSpec spec;
  ParamVector init;      // exact initialization
  ParamVector anchor;    // rewind point (== init when rewind_step = 0)
  PruningMask mask;      // final mask
  ParamVector trained;   // weights trained under the final mask
  std::vector<RoundLog> rounds;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;  // of the producing run, for reports
};

// Seed for the training run of one pruning round; exposed so a round can
// be replayed standalone and match the pipeline bit for bit.
std::uint64_t imp_round_seed(std::uint64_t base_seed, std::size_t round);

// Train, prune the lowest-scored fraction globally, rewind survivors to
// the anchor, repeat until the mask reaches the target sparsity, then
// train once more so `trained` belongs to the final mask.
TicketArtifact run_imp(const MlpSpec& spec, const ImpConfig& cfg,
                       const Dataset& data);

struct RetrainResult {
  ParamVector params;
  double train_loss = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  double dist_from_start = 0.0;  // ||m.(final - start)||_2
};

// Train only the unmasked weights starting from `start` (masked
// coordinates are zeroed first).
RetrainResult retrain_with_mask(const MlpSpec& spec, const PruningMask& mask,
                                const ParamVector& start, const Dataset& data,
                                const OptimizerConfig& train_cfg,
                                const RegularizerConfig& reg);

struct CriterionDrops {
  PruneCriterion criterion = PruneCriterion::large_final;
  // Mean change in train accuracy caused by the mask, in percent points,
  // at three stages: pruned-vs-dense trained weights, masked-vs-dense
  // initialization, and retrained-vs-dense-retrained. An all-ones mask
  // scores zero everywhere.
  double after_prune = 0.0;
  double after_rewind = 0.0;
  double after_retrain = 0.0;
  std::vector<std::array<double, 3>> per_seed;
};

// For each seed: train one dense base network, then apply every criterion
// to that same base (prune to the target sparsity with scores held fixed)
// and measure the three accuracy drops.
std::vector<CriterionDrops> criteria_drop_table(
    const MlpSpec& spec, const Dataset& data, const OptimizerConfig& train_cfg,
    const RegularizerConfig& reg, double target_sparsity, double prune_rate,
    const std::vector<PruneCriterion>& criteria,
    const std::vector<std::uint64_t>& seeds);

struct PruningDelta {
  ParamVector delta;      // negation of the weights the next round removes
  PruningMask next_mask;  // mask after that round
};

PruningDelta pruning_delta(const ParamVector& trained, const PruningMask& mask,
                           const std::vector<double>& scores, double rate);

struct TaylorConfig {
  std::size_t gamma_points = 11;  // evenly spaced on [0,1]
  double slack = 0.05;            // inflate the grid supremum estimate
  std::size_t power_iters = 100;
  double power_tol = 1e-4;
  double grad_tol_scale = 1e-3;   // stationarity tolerance = scale*sqrt(dim)
  std::uint64_t seed = 0;
};

struct TaylorCheck {
  double lhs = 0.0;        // |L(theta+delta) - L(theta)|
  double rhs = 0.0;        // 0.5*||delta||^2 * max_gamma lambda_max * (1+slack)
  bool holds = false;
  double delta_norm = 0.0;
  double max_eigenvalue = 0.0;
  double argmax_gamma = 0.0;
  double grad_norm = 0.0;  // at the base point
  double grad_tol = 0.0;
  bool stationary = false;  // grad_norm <= grad_tol; check runs either way
};

// Curvature bound on the loss change under a parameter perturbation: the
// top Hessian eigenvalue is maximized over the segment between the two
// points on a gamma grid. delta is zeroed at masked coordinates before use.
TaylorCheck taylor_bound_check(const Objective& obj, const ParamVector& params,
                               const PruningMask& mask,
                               const ParamVector& delta,
                               const TaylorConfig& cfg);

}  // namespace ticketlab
