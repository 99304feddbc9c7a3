#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ticketlab/data.hpp"
#include "ticketlab/mask.hpp"
#include "ticketlab/objective.hpp"
#include "ticketlab/param_vector.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

enum class OptimizerKind { sgd, sam, nvrm };

const char* to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.1;
  double momentum = 0.0;
  double sam_rho = 0.0;            // perturbation radius, sam only
  double nvrm_b = 0.0;             // noise std, nvrm only
  std::size_t nvrm_samples = 1;    // gradient draws averaged per nvrm step
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Optional step decay: lr is scaled by decay_factor every decay_every
  // epochs. decay_every = 0 keeps the rate constant.
  double lr_decay_factor = 1.0;
  std::size_t lr_decay_every = 0;

  void validate() const;
};

enum class RegularizerKind { none, l2_init, l2_norm };

const char* to_string(RegularizerKind k);
RegularizerKind regularizer_kind_from_string(const std::string& s);

// Distance penalties restricted to unmasked prunable coordinates:
// l2_init adds lambda*||m.(theta - anchor)||^2, l2_norm the same with
// anchor 0. Biases and masked weights are never penalized.
struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::none;
  double lambda = 0.0;
  std::optional<ParamVector> anchor;  // required for l2_init

  void validate() const;
};

struct RegTerm {
  double value = 0.0;
  ParamVector grad;
};

RegTerm reg_term(const RegularizerConfig& cfg, const ParamVector& params,
                 const PruningMask& mask);

struct OptimizerState {
  ParamVector velocity;       // momentum buffer, zero at masked coordinates
  std::size_t step_count = 0;
  std::size_t sam_fallbacks = 0;  // steps where the masked gradient vanished
  double lr_scale = 1.0;          // set by the epoch loop when decay is on

  static OptimizerState fresh(const ParamVector& like);
};

// Single steps over an abstract objective. All of them guarantee that
// masked coordinates are left untouched regardless of what the objective
// reports there. Non-finite gradients abort with a NumericError naming the
// step and coordinate.
void step_sgd(OptimizerState& state, const OptimizerConfig& cfg,
              const Objective& obj, ParamVector& params,
              const PruningMask& mask, const RegularizerConfig& reg);

// Two-point step: perturb along the normalized masked gradient by sam_rho,
// re-evaluate the gradient there, apply the update at the unperturbed
// point. A vanishing masked gradient falls back to a plain SGD step (the
// perturbation direction is undefined); the fallback is counted in state.
void step_sam(OptimizerState& state, const OptimizerConfig& cfg,
              const Objective& obj, ParamVector& params,
              const PruningMask& mask, const RegularizerConfig& reg);

// Averages the gradient over nvrm_samples draws of Gaussian noise with std
// nvrm_b applied to unmasked coordinates only, then updates like SGD.
void step_nvrm(OptimizerState& state, const OptimizerConfig& cfg,
               const Objective& obj, ParamVector& params,
               const PruningMask& mask, const RegularizerConfig& reg,
               RngStream& noise_rng);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;   // data term only, masked forward
  double train_error = 0.0;  // zero-one error on the training batch
};

struct TrainResult {
  ParamVector params;          // weights after the last step
  ParamVector snapshot;        // weights after snapshot_step optimizer steps
  std::size_t snapshot_step = 0;
  OptimizerState state;
  std::vector<EpochStats> epochs;
};

// Minibatch training loop for the network loss. Shuffling, NVRM noise and
// any other randomness are drawn from streams derived from cfg.seed, so a
// rerun with the same inputs is reproducible bit for bit. snapshot_step is
// counted in optimizer steps; 0 snapshots the supplied initialization.
TrainResult train(const MlpSpec& spec, const Batch& train_data,
                  const PruningMask& mask, ParamVector params,
                  const OptimizerConfig& cfg, const RegularizerConfig& reg,
                  std::size_t snapshot_step = 0);

}  // namespace ticketlab
