#include "ticketlab/contsparse.hpp"

#include <cmath>

#include "ticketlab/errors.hpp"

namespace ticketlab {

void CsConfig::validate() const {
  if (penalty < 0.0) throw ConfigError("gate penalty must be >= 0");
  if (!(beta_start > 0.0) || beta_end < beta_start) {
    throw ConfigError("temperature schedule must be nondecreasing from a "
                      "positive start");
  }
  if (s_init == 0.0) throw ConfigError("gate logits must start away from 0");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("binarization threshold must lie in (0,1)");
  }
  if (train.kind != OptimizerKind::sgd) {
    throw ConfigError("continuous sparsification trains with plain sgd");
  }
  train.validate();
  bound.validate();
  if (!(prior_sigma > 0.0)) throw ConfigError("prior sigma must be positive");
}

double gate_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

CsObjectiveResult cs_objective(const MlpSpec& spec, const ParamVector& params,
                               const GateState& gates,
                               const std::vector<std::uint8_t>& prunable,
                               const Batch& batch, double penalty) {
  const std::size_t n = params.size();
  if (gates.s.size() != n || prunable.size() != n) {
    throw ShapeError("gate state does not align with the parameters");
  }

  CsObjectiveResult out;
  out.grad_s.assign(n, 0.0);

  ParamVector effective = params;
  std::vector<double> gate(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!prunable[i]) continue;
    gate[i] = gate_sigmoid(gates.beta * gates.s[i]);
    effective.values[i] = gate[i] * params.values[i];
    out.penalty_term += penalty * gate[i];
  }

  out.data_term = cross_entropy_dense(spec, effective, batch);
  out.value = out.data_term + out.penalty_term;

  const ParamVector ge = grad_dense(spec, effective, batch);
  out.grad_theta = zeros_like(params);
  for (std::size_t i = 0; i < n; ++i) {
    if (prunable[i]) {
      out.grad_theta.values[i] = gate[i] * ge.values[i];
      // d(sigmoid)/dx = sigmoid*(1-sigmoid); chain through gate and penalty.
      const double dgate = gates.beta * gate[i] * (1.0 - gate[i]);
      out.grad_s[i] =
          dgate * (params.values[i] * ge.values[i] + penalty);
    } else {
      out.grad_theta.values[i] = ge.values[i];
    }
  }
  return out;
}

namespace {

double epoch_beta(const CsConfig& cfg, std::size_t epoch) {
  const std::size_t total = cfg.train.epochs;
  if (total <= 1) return cfg.beta_end;
  const double frac =
      static_cast<double>(epoch) / static_cast<double>(total - 1);
  return cfg.beta_start * std::pow(cfg.beta_end / cfg.beta_start, frac);
}

double gate_density(const CsConfig& cfg, const GateState& gates,
                    const std::vector<std::uint8_t>& prunable) {
  std::size_t total = 0;
  std::size_t open = 0;
  for (std::size_t i = 0; i < gates.s.size(); ++i) {
    if (!prunable[i]) continue;
    ++total;
    if (gate_sigmoid(gates.beta * gates.s[i]) >= cfg.threshold) ++open;
  }
  return total == 0 ? 0.0 : static_cast<double>(open) /
                                static_cast<double>(total);
}

}  // namespace

CsResult run_cs(const MlpSpec& spec, const CsConfig& cfg, const Dataset& data,
                const ParamVector& init) {
  spec.validate();
  cfg.validate();
  if (data.train.size() == 0) throw DataError("empty training set");

  const RegistryPtr registry = make_registry(spec);
  if (init.size() != registry->total_size()) {
    throw ShapeError("initialization does not match the model");
  }
  const PruningMask dense = PruningMask::all_ones(registry, cfg.prune_biases);
  const std::vector<std::uint8_t>& prunable = dense.prunable;

  CsResult res;
  res.gates.s.assign(init.size(), 0.0);
  for (std::size_t i = 0; i < init.size(); ++i) {
    if (prunable[i]) res.gates.s[i] = cfg.s_init;
  }

  ParamVector params = init;
  ParamVector v_theta = zeros_like(params);
  std::vector<double> v_s(init.size(), 0.0);
  std::vector<double> prev_s = res.gates.s;

  const std::uint64_t train_seed = derive_seed(cfg.seed, {tag("cs_train")});
  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    res.gates.beta = epoch_beta(cfg, epoch);
    RngStream shuffle_rng(derive_seed(train_seed, {tag("shuffle"), epoch}));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.train.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.train.batch_size);
      const Batch batch = data.train.select(std::vector<std::size_t>(
          order.begin() + start, order.begin() + stop));
      const CsObjectiveResult obj =
          cs_objective(spec, params, res.gates, prunable, batch, cfg.penalty);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(obj.grad_theta.values[i]) ||
            !std::isfinite(obj.grad_s[i])) {
          throw NumericError("non-finite gradient in gate training at epoch " +
                             std::to_string(epoch));
        }
        double& vt = v_theta.values[i];
        vt = cfg.train.momentum * vt + obj.grad_theta.values[i];
        params.values[i] -= cfg.train.learning_rate * vt;
        double& vs = v_s[i];
        vs = cfg.train.momentum * vs + obj.grad_s[i];
        res.gates.s[i] -= cfg.train.learning_rate * vs;
      }
    }

    CsEpochLog log;
    log.epoch = epoch;
    log.beta = res.gates.beta;
    log.density = gate_density(cfg, res.gates, prunable);
    log.train_loss = cs_objective(spec, params, res.gates, prunable,
                                  data.train, cfg.penalty)
                         .value;
    for (std::size_t i = 0; i < prev_s.size(); ++i) {
      if (prunable[i] && (prev_s[i] > 0.0) != (res.gates.s[i] > 0.0)) {
        ++log.sign_changes;
      }
    }
    prev_s = res.gates.s;
    res.epochs.push_back(log);
  }
  res.gates.beta = cfg.beta_end;

  PruningMask mask = dense;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (prunable[i]) {
      mask.bits[i] =
          gate_sigmoid(cfg.beta_end * res.gates.s[i]) >= cfg.threshold ? 1 : 0;
    }
  }
  if (mask.unmasked_prunable_count() == 0) {
    throw NumericError("all gates collapsed to zero; lower the gate penalty");
  }

  res.final_density = 1.0 - mask.sparsity();
  res.ticket.spec = spec;
  res.ticket.seed = cfg.seed;
  res.ticket.learning_rate = cfg.train.learning_rate;
  res.ticket.init = init;
  res.ticket.anchor = init;
  res.ticket.mask = mask;
  res.ticket.trained = params;
  apply_mask(res.ticket.trained, mask);

  RoundLog round;
  round.round = 0;
  round.sparsity = mask.sparsity();
  round.train_loss =
      forward(spec, res.ticket.trained, mask, data.train).loss;
  round.train_error =
      zero_one_error(spec, res.ticket.trained, mask, data.train);
  round.test_error = zero_one_error(spec, res.ticket.trained, mask, data.test);
  double d2 = 0.0;
  for (std::size_t i = 0; i < init.size(); ++i) {
    if (mask.bits[i] == 0) continue;
    const double d = res.ticket.trained.values[i] - init.values[i];
    d2 += d * d;
  }
  round.dist_from_init = std::sqrt(d2);
  res.ticket.rounds.push_back(round);
  res.train_error = round.train_error;
  res.test_error = round.test_error;

  const double keep =
      std::min(1.0 - 1e-6, std::max(1e-6, 1.0 - mask.sparsity()));
  BoundOptConfig bound_cfg = cfg.bound;
  bound_cfg.seed = derive_seed(cfg.seed, {tag("cs_bound")});
  const SpikeSlabPrior prior =
      SpikeSlabPrior::uniform(init, cfg.prior_sigma, keep);
  res.bound =
      optimize_posterior_sigma(spec, res.ticket, prior, data, bound_cfg).report;
  return res;
}

}  // namespace ticketlab
