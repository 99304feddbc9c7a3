#pragma once

#include <cstdint>
#include <vector>

#include "ticketlab/data.hpp"
#include "ticketlab/imp.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/optim.hpp"
#include "ticketlab/pacbayes.hpp"

namespace ticketlab {

// Joint training of weights and sigmoid-relaxed gates: the loss sees
// sigmoid(beta*s) * theta at prunable coordinates plus an L1 penalty on
// the open gates, with the temperature beta annealed upward so gates
// harden over training.

struct CsConfig {
  double penalty = 1e-3;      // weight of the open-gate L1 term
  double beta_start = 1.0;    // temperature, grown geometrically per epoch
  double beta_end = 100.0;
  double s_init = 0.05;       // gates start slightly open
  double threshold = 0.5;     // final binarization cut on sigmoid(beta*s)
  bool prune_biases = false;
  OptimizerConfig train;      // must be plain sgd; seed is derived
  std::uint64_t seed = 0;
  double prior_sigma = 0.1;   // for the bound report on the final ticket
  BoundOptConfig bound;

  void validate() const;
};

struct GateState {
  std::vector<double> s;  // gate logits; meaningful at prunable coordinates
  double beta = 1.0;
};

// Numerically stable sigmoid that reaches exactly 0 and 1 in saturation,
// so frozen gates reproduce the discrete objective bit for bit.
double gate_sigmoid(double x);

struct CsObjectiveResult {
  double value = 0.0;         // data_term + penalty_term
  double data_term = 0.0;     // cross-entropy of the gated network
  double penalty_term = 0.0;  // penalty * sum of open gates
  ParamVector grad_theta;
  std::vector<double> grad_s;
};

CsObjectiveResult cs_objective(const MlpSpec& spec, const ParamVector& params,
                               const GateState& gates,
                               const std::vector<std::uint8_t>& prunable,
                               const Batch& batch, double penalty);

struct CsEpochLog {
  std::size_t epoch = 0;
  double beta = 0.0;
  double density = 0.0;     // fraction of prunable gates above threshold
  double train_loss = 0.0;  // gated objective on the full training batch
  std::size_t sign_changes = 0;  // gate logits that crossed zero this epoch
};

struct CsResult {
  TicketArtifact ticket;
  GateState gates;             // final logits, beta at beta_end
  std::vector<CsEpochLog> epochs;
  double final_density = 0.0;  // kept fraction of prunable coordinates
  double train_error = 0.0;    // of the binarized network
  double test_error = 0.0;
  BoundReport bound;           // spike-slab certificate on the final ticket
};

CsResult run_cs(const MlpSpec& spec, const CsConfig& cfg, const Dataset& data,
                const ParamVector& init);

}  // namespace ticketlab
