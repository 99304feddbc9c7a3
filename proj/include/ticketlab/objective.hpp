#pragma once

#include "ticketlab/data.hpp"
#include "ticketlab/mask.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/param_vector.hpp"

namespace ticketlab {

// Twice-differentiable masked objective. Optimizers, curvature probes and
// the pruning diagnostics only see this surface, so they work equally on a
// network loss or a synthetic test function.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual double value(const ParamVector& params,
                       const PruningMask& mask) const = 0;
  virtual ParamVector gradient(const ParamVector& params,
                               const PruningMask& mask) const = 0;
  virtual ParamVector hessian_vector(const ParamVector& params,
                                     const PruningMask& mask,
                                     const ParamVector& direction) const = 0;
};

// Mean cross-entropy of an MLP on a fixed batch.
class MlpBatchObjective final : public Objective {
 public:
  MlpBatchObjective(const MlpSpec& spec, const Batch& batch)
      : spec_(spec), batch_(batch) {}

  double value(const ParamVector& params,
               const PruningMask& mask) const override {
    return forward(spec_, params, mask, batch_).loss;
  }
  ParamVector gradient(const ParamVector& params,
                       const PruningMask& mask) const override {
    return grad(spec_, params, mask, batch_);
  }
  ParamVector hessian_vector(const ParamVector& params,
                             const PruningMask& mask,
                             const ParamVector& direction) const override {
    return hvp(spec_, params, mask, batch_, direction);
  }

 private:
  const MlpSpec& spec_;
  const Batch& batch_;
};

}  // namespace ticketlab
