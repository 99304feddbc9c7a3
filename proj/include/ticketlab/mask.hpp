#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ticketlab/param_vector.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

// Binary keep/drop mask aligned to a ParamVector. `prunable` marks which
// coordinates are eligible for pruning at all; non-prunable coordinates
// (biases by default) always carry bit 1.
struct PruningMask {
  RegistryPtr registry;
  std::vector<std::uint8_t> bits;
  std::vector<std::uint8_t> prunable;

  PruningMask() = default;

  // All-ones mask; weights prunable, biases prunable only when requested.
  static PruningMask all_ones(RegistryPtr reg, bool prune_biases = false);

  std::size_t size() const { return bits.size(); }

  std::size_t prunable_count() const;
  std::size_t unmasked_prunable_count() const;
  std::size_t unmasked_count() const;  // bits set, prunable or not

  // 1 - kept/eligible, over prunable coordinates only.
  double sparsity() const;

  bool keeps(std::size_t i) const { return bits[i] != 0; }

  void check_invariants() const;  // bits[i]=1 wherever prunable[i]=0
  bool aligned_with(const ParamVector& params) const;
  void require_aligned(const ParamVector& params) const;
};

enum class PruneCriterion { large_final, small_final, random_scores };

const char* to_string(PruneCriterion c);
PruneCriterion prune_criterion_from_string(const std::string& s);

// Saliency scores per coordinate; lower scores get pruned first.
//   large_final:  |theta_i|      (keep large trained magnitudes)
//   small_final: -|theta_i|      (keep small trained magnitudes)
//   random:       i.i.d. uniform
std::vector<double> score(PruneCriterion criterion, const ParamVector& trained,
                          RngStream& rng);

// Globally masks the floor(p * unmasked_prunable) lowest-scoring coordinates
// among those currently unmasked and prunable. Ties break toward the lower
// index. Previously masked bits stay masked.
PruningMask prune_round(const PruningMask& mask,
                        const std::vector<double>& scores, double rate);

// Unmasked-prunable count trajectory after k rounds at rate p, matching
// prune_round's floor quota exactly.
std::vector<std::size_t> unmasked_trajectory(std::size_t initial_unmasked,
                                             double rate, std::size_t rounds);

// Bit-packed binary plus a JSON registry sidecar at <path>.registry.json.
void save_mask(const PruningMask& mask, const std::string& path);
PruningMask load_mask(const std::string& path);

// Applies the mask in place: masked coordinates forced to exactly zero.
void apply_mask(ParamVector& params, const PruningMask& mask);

}  // namespace ticketlab
