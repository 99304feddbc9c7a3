#include "ticketlab/optim.hpp"

#include <cmath>

#include "ticketlab/errors.hpp"
#include "ticketlab/mlp.hpp"

namespace ticketlab {

const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sam: return "sam";
    case OptimizerKind::nvrm: return "nvrm";
  }
  return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sam") return OptimizerKind::sam;
  if (s == "nvrm") return OptimizerKind::nvrm;
  throw ConfigError("unknown optimizer '" + s + "' (want sgd|sam|nvrm)");
}

const char* to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::l2_init: return "l2_init";
    case RegularizerKind::l2_norm: return "l2_norm";
  }
  return "?";
}

RegularizerKind regularizer_kind_from_string(const std::string& s) {
  if (s == "none") return RegularizerKind::none;
  if (s == "l2_init") return RegularizerKind::l2_init;
  if (s == "l2_norm") return RegularizerKind::l2_norm;
  throw ConfigError("unknown regularizer '" + s +
                    "' (want none|l2_init|l2_norm)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0,1)");
  }
  if (sam_rho < 0.0) throw ConfigError("sam_rho must be >= 0");
  if (nvrm_b < 0.0) throw ConfigError("nvrm_b must be >= 0");
  if (kind != OptimizerKind::sam && sam_rho != 0.0) {
    throw ConfigError("sam_rho is only meaningful for the sam optimizer");
  }
  if (kind != OptimizerKind::nvrm && nvrm_b != 0.0) {
    throw ConfigError("nvrm_b is only meaningful for the nvrm optimizer");
  }
  if (nvrm_samples == 0) throw ConfigError("nvrm_samples must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    throw ConfigError("lr_decay_factor must lie in (0,1]");
  }
}

void RegularizerConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("regularizer lambda must be >= 0");
  if (kind == RegularizerKind::l2_init && lambda > 0.0 && !anchor) {
    throw ConfigError("l2_init regularizer needs an anchor parameter vector");
  }
}

RegTerm reg_term(const RegularizerConfig& cfg, const ParamVector& params,
                 const PruningMask& mask) {
  mask.require_aligned(params);
  RegTerm out;
  out.grad = zeros_like(params);
  if (cfg.kind == RegularizerKind::none || cfg.lambda == 0.0) return out;
  if (cfg.kind == RegularizerKind::l2_init) {
    if (!cfg.anchor) {
      throw ConfigError("l2_init regularizer needs an anchor parameter vector");
    }
    cfg.anchor->require_aligned(params);
  }
  const double* anchor =
      cfg.kind == RegularizerKind::l2_init ? cfg.anchor->values.data() : nullptr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask.bits[i] == 0 || mask.prunable[i] == 0) continue;
    const double d = anchor ? params.values[i] - anchor[i] : params.values[i];
    out.value += cfg.lambda * d * d;
    out.grad.values[i] = 2.0 * cfg.lambda * d;
  }
  return out;
}

OptimizerState OptimizerState::fresh(const ParamVector& like) {
  OptimizerState s;
  s.velocity = zeros_like(like);
  return s;
}

namespace {

// Data gradient plus regularizer gradient, forced to zero at masked
// coordinates so no optimizer can move them.
ParamVector total_gradient(const Objective& obj, const ParamVector& params,
                           const PruningMask& mask,
                           const RegularizerConfig& reg, std::size_t step) {
  ParamVector g = obj.gradient(params, mask);
  const RegTerm r = reg_term(reg, params, mask);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.values[i] = mask.bits[i] ? g.values[i] + r.grad.values[i] : 0.0;
    if (!std::isfinite(g.values[i])) {
      throw NumericError("non-finite gradient at step " +
                         std::to_string(step) + ", coordinate " +
                         std::to_string(i));
    }
  }
  return g;
}

void apply_update(OptimizerState& state, const OptimizerConfig& cfg,
                  ParamVector& params, const PruningMask& mask,
                  const ParamVector& g) {
  const double lr = cfg.learning_rate * state.lr_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask.bits[i] == 0) continue;
    double& v = state.velocity.values[i];
    v = cfg.momentum * v + g.values[i];
    params.values[i] -= lr * v;
  }
  ++state.step_count;
}

}  // namespace

void step_sgd(OptimizerState& state, const OptimizerConfig& cfg,
              const Objective& obj, ParamVector& params,
              const PruningMask& mask, const RegularizerConfig& reg) {
  mask.require_aligned(params);
  const ParamVector g = total_gradient(obj, params, mask, reg, state.step_count);
  apply_update(state, cfg, params, mask, g);
}

void step_sam(OptimizerState& state, const OptimizerConfig& cfg,
              const Objective& obj, ParamVector& params,
              const PruningMask& mask, const RegularizerConfig& reg) {
  mask.require_aligned(params);
  const ParamVector g0 =
      total_gradient(obj, params, mask, reg, state.step_count);
  const double n = std::sqrt(dot(g0, g0));
  if (n == 0.0 || cfg.sam_rho == 0.0) {
    if (n == 0.0) ++state.sam_fallbacks;
    apply_update(state, cfg, params, mask, g0);
    return;
  }
  ParamVector perturbed = params;
  const double scale = cfg.sam_rho / n;
  for (std::size_t i = 0; i < params.size(); ++i) {
    perturbed.values[i] += scale * g0.values[i];  // g0 already zero if masked
  }
  const ParamVector g =
      total_gradient(obj, perturbed, mask, reg, state.step_count);
  apply_update(state, cfg, params, mask, g);
}

void step_nvrm(OptimizerState& state, const OptimizerConfig& cfg,
               const Objective& obj, ParamVector& params,
               const PruningMask& mask, const RegularizerConfig& reg,
               RngStream& noise_rng) {
  mask.require_aligned(params);
  ParamVector sum = zeros_like(params);
  ParamVector noisy = params;
  for (std::size_t j = 0; j < cfg.nvrm_samples; ++j) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      noisy.values[i] = mask.bits[i]
                            ? params.values[i] + cfg.nvrm_b * noise_rng.normal()
                            : params.values[i];
    }
    const ParamVector g =
        total_gradient(obj, noisy, mask, reg, state.step_count);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.values[i] += g.values[i];
  }
  const double inv = 1.0 / static_cast<double>(cfg.nvrm_samples);
  for (std::size_t i = 0; i < sum.size(); ++i) sum.values[i] *= inv;
  apply_update(state, cfg, params, mask, sum);
}

TrainResult train(const MlpSpec& spec, const Batch& train_data,
                  const PruningMask& mask, ParamVector params,
                  const OptimizerConfig& cfg, const RegularizerConfig& reg,
                  std::size_t snapshot_step) {
  spec.validate();
  cfg.validate();
  reg.validate();
  mask.require_aligned(params);
  train_data.validate(spec.classes());
  if (train_data.role != DataRole::train) {
    throw DataError("refusing to optimize on a batch tagged as test data");
  }
  if (train_data.size() == 0) throw DataError("empty training batch");

  TrainResult out;
  out.state = OptimizerState::fresh(params);
  out.snapshot_step = snapshot_step;
  bool have_snapshot = false;
  if (snapshot_step == 0) {
    out.snapshot = params;
    have_snapshot = true;
  }

  const std::size_t n = train_data.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.lr_decay_every > 0) {
      out.state.lr_scale =
          std::pow(cfg.lr_decay_factor,
                   static_cast<double>(epoch / cfg.lr_decay_every));
    }
    RngStream shuffle_rng(derive_seed(cfg.seed, {tag("shuffle"), epoch}));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const Batch batch = train_data.select(
          std::vector<std::size_t>(order.begin() + start, order.begin() + stop));
      const MlpBatchObjective obj(spec, batch);
      if (!have_snapshot && out.state.step_count == snapshot_step) {
        out.snapshot = params;
        have_snapshot = true;
      }
      switch (cfg.kind) {
        case OptimizerKind::sgd:
          step_sgd(out.state, cfg, obj, params, mask, reg);
          break;
        case OptimizerKind::sam:
          step_sam(out.state, cfg, obj, params, mask, reg);
          break;
        case OptimizerKind::nvrm: {
          RngStream noise(
              derive_seed(cfg.seed, {tag("nvrm_noise"), out.state.step_count}));
          step_nvrm(out.state, cfg, obj, params, mask, reg, noise);
          break;
        }
      }
    }
    const ForwardResult eval = forward(spec, params, mask, train_data);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = eval.loss;
    stats.train_error = zero_one_error(spec, params, mask, train_data);
    out.epochs.push_back(stats);
  }
  if (!have_snapshot) out.snapshot = params;  // snapshot_step past the end
  out.params = std::move(params);
  return out;
}

}  // namespace ticketlab
