#pragma once

#include <cstddef>
#include <vector>

#include "ticketlab/data.hpp"
#include "ticketlab/dual.hpp"
#include "ticketlab/mlp_spec.hpp"

namespace ticketlab::detail {

// Layer l in [1, L] has weights (widths[l] x widths[l-1]) followed by a bias
// of widths[l]; segments are laid out in that order.
struct LayerOffsets {
  std::vector<std::size_t> weight;
  std::vector<std::size_t> bias;
};

LayerOffsets layer_offsets(const MlpSpec& spec);

// Mean cross-entropy over the batch, computed from effective parameters
// (mask already absorbed by the caller). When `grad_out` is non-null it
// receives d(loss)/d(effective) of the same length. All reductions run in a
// fixed sequential order so results are bit-stable.
//
// The scalar type carries the derivative bookkeeping: S=double is the plain
// gradient; S=Dual seeds a direction and the gradient's derivative slots
// come back as the Hessian-vector product. ReLU contributes zero curvature
// at its kink (its derivative is a constant per branch).
template <class S>
S cross_entropy_and_grad(const MlpSpec& spec, const std::vector<S>& effective,
                         const Batch& batch, std::vector<S>* grad_out,
                         std::vector<S>* logits_out) {
  using std::exp;
  using std::log;
  using std::tanh;
  const auto& w = spec.widths;
  const std::size_t layers = w.size() - 1;
  const std::size_t n = batch.size();
  const LayerOffsets off = layer_offsets(spec);
  const bool use_relu = spec.activation == Activation::relu;

  // acts[0] is the input; acts[l] the post-activation of layer l.
  std::vector<std::vector<S>> acts(layers + 1);
  std::vector<std::vector<S>> pre(layers + 1);
  acts[0].resize(n * w[0]);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < w[0]; ++i) {
      acts[0][s * w[0] + i] = S(batch.inputs.at(s, i));
    }
  }

  for (std::size_t l = 1; l <= layers; ++l) {
    const std::size_t in = w[l - 1];
    const std::size_t out = w[l];
    const S* weights = effective.data() + off.weight[l];
    const S* biases = effective.data() + off.bias[l];
    pre[l].resize(n * out);
    acts[l].resize(n * out);
    for (std::size_t s = 0; s < n; ++s) {
      const S* a = acts[l - 1].data() + s * in;
      for (std::size_t o = 0; o < out; ++o) {
        S z = biases[o];
        const S* row = weights + o * in;
        for (std::size_t i = 0; i < in; ++i) z += row[i] * a[i];
        pre[l][s * out + o] = z;
        if (l == layers) {
          acts[l][s * out + o] = z;  // logits
        } else if (use_relu) {
          acts[l][s * out + o] = primal(z) > 0.0 ? z : S(0.0);
        } else {
          acts[l][s * out + o] = tanh(z);
        }
      }
    }
  }

  const std::size_t classes = w[layers];
  if (logits_out) *logits_out = acts[layers];

  // Cross-entropy via log-sum-exp; remember each sample's lse for backward.
  std::vector<S> lse(n);
  S total = S(0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const S* z = acts[layers].data() + s * classes;
    S zmax = z[0];
    for (std::size_t j = 1; j < classes; ++j) {
      if (z[j] > zmax) zmax = z[j];
    }
    S sumexp = S(0.0);
    for (std::size_t j = 0; j < classes; ++j) sumexp += exp(z[j] - zmax);
    lse[s] = zmax + log(sumexp);
    total += lse[s] - z[batch.labels[s]];
  }
  const S inv_n = S(1.0 / static_cast<double>(n));
  const S loss = total * inv_n;

  if (!grad_out) return loss;

  grad_out->assign(effective.size(), S(0.0));
  std::vector<S> delta(n * classes);
  for (std::size_t s = 0; s < n; ++s) {
    const S* z = acts[layers].data() + s * classes;
    for (std::size_t j = 0; j < classes; ++j) {
      S p = exp(z[j] - lse[s]);
      if (static_cast<int>(j) == batch.labels[s]) p -= S(1.0);
      delta[s * classes + j] = p * inv_n;
    }
  }

  std::vector<S> delta_prev;
  for (std::size_t l = layers; l >= 1; --l) {
    const std::size_t in = w[l - 1];
    const std::size_t out = w[l];
    const S* weights = effective.data() + off.weight[l];
    S* gw = grad_out->data() + off.weight[l];
    S* gb = grad_out->data() + off.bias[l];
    for (std::size_t s = 0; s < n; ++s) {
      const S* d = delta.data() + s * out;
      const S* a = acts[l - 1].data() + s * in;
      for (std::size_t o = 0; o < out; ++o) {
        S* grow = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += d[o] * a[i];
        gb[o] += d[o];
      }
    }
    if (l == 1) break;
    delta_prev.assign(n * in, S(0.0));
    for (std::size_t s = 0; s < n; ++s) {
      const S* d = delta.data() + s * out;
      S* dp = delta_prev.data() + s * in;
      for (std::size_t o = 0; o < out; ++o) {
        const S* row = weights + o * in;
        for (std::size_t i = 0; i < in; ++i) dp[i] += d[o] * row[i];
      }
      const S* zprev = pre[l - 1].data() + s * in;
      for (std::size_t i = 0; i < in; ++i) {
        if (use_relu) {
          if (!(primal(zprev[i]) > 0.0)) dp[i] = S(0.0);
        } else {
          const S t = tanh(zprev[i]);
          dp[i] = dp[i] * (S(1.0) - t * t);
        }
      }
    }
    delta.swap(delta_prev);
  }
  return loss;
}

}  // namespace ticketlab::detail
