#include "ticketlab/mlp.hpp"

#include <cmath>
#include <string>

#include "ticketlab/detail/mlp_kernel.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

const char* to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

namespace detail {

LayerOffsets layer_offsets(const MlpSpec& spec) {
  LayerOffsets off;
  const std::size_t layers = spec.layer_count();
  off.weight.resize(layers + 1, 0);
  off.bias.resize(layers + 1, 0);
  std::size_t cursor = 0;
  for (std::size_t l = 1; l <= layers; ++l) {
    off.weight[l] = cursor;
    cursor += spec.widths[l] * spec.widths[l - 1];
    off.bias[l] = cursor;
    cursor += spec.widths[l];
  }
  return off;
}

}  // namespace detail

RegistryPtr make_registry(const MlpSpec& spec) {
  spec.validate();
  std::vector<ParamSegment> segments;
  std::size_t cursor = 0;
  for (std::size_t l = 1; l <= spec.layer_count(); ++l) {
    const std::size_t in = spec.widths[l - 1];
    const std::size_t out = spec.widths[l];
    segments.push_back({"layer" + std::to_string(l) + ".weight",
                        {out, in},
                        cursor,
                        SegmentKind::weight});
    cursor += out * in;
    segments.push_back({"layer" + std::to_string(l) + ".bias",
                        {out},
                        cursor,
                        SegmentKind::bias});
    cursor += out;
  }
  return std::make_shared<const ParamRegistry>(std::move(segments));
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  ParamVector params(make_registry(spec));
  RngStream rng(derive_seed(seed, {tag("init")}));
  for (const auto& seg : params.registry->segments()) {
    if (seg.kind == SegmentKind::bias) continue;  // biases start at zero
    const std::size_t fan_in = seg.shape[1];
    const double gain = spec.activation == Activation::relu ? 2.0 : 1.0;
    const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < seg.size(); ++i) {
      params.values[seg.offset + i] = rng.normal(0.0, stddev);
    }
  }
  return params;
}

namespace {

void check_inputs(const MlpSpec& spec, const ParamVector& params,
                  const PruningMask& mask, const Batch& batch) {
  spec.validate();
  const auto expected = make_registry(spec);
  if (params.registry && !(*params.registry == *expected)) {
    // Name the first segment where the supplied layout disagrees.
    const auto& got = params.registry->segments();
    const auto& want = expected->segments();
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (i >= got.size() || !(got[i].name == want[i].name &&
                               got[i].shape == want[i].shape &&
                               got[i].offset == want[i].offset)) {
        throw ShapeError("registry mismatch at segment '" + want[i].name +
                         "'");
      }
    }
    throw ShapeError("registry mismatch: extra segments beyond model");
  }
  if (params.values.size() != expected->total_size()) {
    // Registry-less vector of the wrong length: name the first segment the
    // actual values cannot satisfy.
    for (const auto& seg : expected->segments()) {
      if (seg.offset + seg.size() > params.values.size()) {
        throw ShapeError("parameter vector too short for segment '" +
                         seg.name + "' (needs " +
                         std::to_string(seg.offset + seg.size()) + ", have " +
                         std::to_string(params.values.size()) + ")");
      }
    }
    throw ShapeError("parameter vector length " +
                     std::to_string(params.values.size()) +
                     " exceeds model size " +
                     std::to_string(expected->total_size()));
  }
  if (mask.size() != params.values.size()) {
    throw ShapeError("mask length " + std::to_string(mask.size()) +
                     " does not match parameters (" +
                     std::to_string(params.values.size()) + ")");
  }
  if (batch.size() == 0) throw DataError("empty batch");
  if (batch.input_dim() != spec.input_dim()) {
    throw ShapeError("batch inputs have dimension " +
                     std::to_string(batch.input_dim()) + ", model expects " +
                     std::to_string(spec.input_dim()));
  }
  batch.validate(spec.classes());
}

std::vector<double> effective_params(const ParamVector& params,
                                     const PruningMask& mask) {
  std::vector<double> eff(params.values.size());
  for (std::size_t i = 0; i < eff.size(); ++i) {
    eff[i] = mask.bits[i] ? params.values[i] : 0.0;
  }
  return eff;
}

}  // namespace

ForwardResult forward(const MlpSpec& spec, const ParamVector& params,
                      const PruningMask& mask, const Batch& batch) {
  check_inputs(spec, params, mask, batch);
  const std::vector<double> eff = effective_params(params, mask);
  std::vector<double> logits;
  const double loss =
      detail::cross_entropy_and_grad<double>(spec, eff, batch, nullptr,
                                             &logits);
  ForwardResult out;
  out.loss = loss;
  out.logits.shape = {batch.size(), spec.classes()};
  out.logits.data = std::move(logits);
  return out;
}

ParamVector grad(const MlpSpec& spec, const ParamVector& params,
                 const PruningMask& mask, const Batch& batch) {
  check_inputs(spec, params, mask, batch);
  const std::vector<double> eff = effective_params(params, mask);
  std::vector<double> g;
  detail::cross_entropy_and_grad<double>(spec, eff, batch, &g, nullptr);
  ParamVector out = zeros_like(params);
  if (!out.registry) out.registry = make_registry(spec);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.values[i] = mask.bits[i] ? g[i] : 0.0;  // chain rule through the mask
  }
  return out;
}

ParamVector hvp(const MlpSpec& spec, const ParamVector& params,
                const PruningMask& mask, const Batch& batch,
                const ParamVector& direction) {
  check_inputs(spec, params, mask, batch);
  if (direction.values.size() != params.values.size()) {
    throw ShapeError("hvp direction length mismatch");
  }
  std::vector<Dual> eff(params.values.size());
  for (std::size_t i = 0; i < eff.size(); ++i) {
    if (mask.bits[i]) {
      eff[i] = Dual(params.values[i], direction.values[i]);
    } else {
      eff[i] = Dual(0.0, 0.0);
    }
  }
  std::vector<Dual> g;
  detail::cross_entropy_and_grad<Dual>(spec, eff, batch, &g, nullptr);
  ParamVector out = zeros_like(params);
  if (!out.registry) out.registry = make_registry(spec);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.values[i] = mask.bits[i] ? g[i].d : 0.0;
  }
  return out;
}

namespace {

double zero_one_from_logits(const Tensor& logits,
                            const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  const std::size_t classes = logits.cols();
  std::size_t wrong = 0;
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j) {
      if (logits.at(s, j) > logits.at(s, best)) best = j;
    }
    if (static_cast<int>(best) != labels[s]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

}  // namespace

double zero_one_error(const MlpSpec& spec, const ParamVector& params,
                      const PruningMask& mask, const Batch& batch) {
  const ForwardResult fr = forward(spec, params, mask, batch);
  return zero_one_from_logits(fr.logits, batch.labels);
}

double zero_one_error_dense(const MlpSpec& spec, const ParamVector& params,
                            const Batch& batch) {
  std::vector<double> logits;
  detail::cross_entropy_and_grad<double>(spec, params.values, batch, nullptr,
                                         &logits);
  Tensor t;
  t.shape = {batch.size(), spec.classes()};
  t.data = std::move(logits);
  return zero_one_from_logits(t, batch.labels);
}

double cross_entropy_dense(const MlpSpec& spec, const ParamVector& params,
                           const Batch& batch) {
  return detail::cross_entropy_and_grad<double>(spec, params.values, batch,
                                                nullptr, nullptr);
}

ParamVector grad_dense(const MlpSpec& spec, const ParamVector& params,
                       const Batch& batch) {
  std::vector<double> g;
  detail::cross_entropy_and_grad<double>(spec, params.values, batch, &g,
                                         nullptr);
  ParamVector out = zeros_like(params);
  out.values = std::move(g);
  return out;
}

}  // namespace ticketlab
