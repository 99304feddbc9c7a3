#pragma once

#include <cstdint>

#include "ticketlab/data.hpp"
#include "ticketlab/mask.hpp"
#include "ticketlab/mlp_spec.hpp"
#include "ticketlab/param_vector.hpp"
#include "ticketlab/tensor.hpp"

namespace ticketlab {

RegistryPtr make_registry(const MlpSpec& spec);

// Scaled normal init (variance matched to the activation); biases zero.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed);

struct ForwardResult {
  double loss = 0.0;  // mean cross-entropy at mask ⊙ params
  Tensor logits;      // (n, classes)
};

// All three evaluate the masked loss L(mask ⊙ params); gradients and
// Hessian products are taken with respect to the raw parameters, so masked
// coordinates carry exact zeros.
ForwardResult forward(const MlpSpec& spec, const ParamVector& params,
                      const PruningMask& mask, const Batch& batch);

ParamVector grad(const MlpSpec& spec, const ParamVector& params,
                 const PruningMask& mask, const Batch& batch);

ParamVector hvp(const MlpSpec& spec, const ParamVector& params,
                const PruningMask& mask, const Batch& batch,
                const ParamVector& direction);

// Fraction misclassified under argmax (ties to the lowest class index).
double zero_one_error(const MlpSpec& spec, const ParamVector& params,
                      const PruningMask& mask, const Batch& batch);

// Argmax predictions for a raw (already effective) parameter vector.
// Used where noise is deliberately applied without re-masking.
double zero_one_error_dense(const MlpSpec& spec, const ParamVector& params,
                            const Batch& batch);
double cross_entropy_dense(const MlpSpec& spec, const ParamVector& params,
                           const Batch& batch);
ParamVector grad_dense(const MlpSpec& spec, const ParamVector& params,
                       const Batch& batch);

}  // namespace ticketlab
