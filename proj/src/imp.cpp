#include "ticketlab/imp.hpp"

#include <cmath>

#include "ticketlab/errors.hpp"
#include "ticketlab/hessian.hpp"

namespace ticketlab {

void ImpConfig::validate() const {
  if (!(target_sparsity > 0.0 && target_sparsity < 1.0)) {
    throw ConfigError("target sparsity must lie in (0,1)");
  }
  if (!(prune_rate > 0.0 && prune_rate < 1.0)) {
    throw ConfigError("prune rate must lie in (0,1)");
  }
  train.validate();
  reg.validate();
}

std::uint64_t imp_round_seed(std::uint64_t base_seed, std::size_t round) {
  return derive_seed(base_seed, {tag("imp_round"), round});
}

namespace {

double masked_distance(const ParamVector& a, const ParamVector& b,
                       const PruningMask& mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask.bits[i] == 0) continue;
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s);
}

RoundLog log_round(std::size_t round, const MlpSpec& spec,
                   const ParamVector& trained, const ParamVector& init,
                   const PruningMask& mask, const Dataset& data,
                   double train_loss) {
  RoundLog log;
  log.round = round;
  log.sparsity = mask.sparsity();
  log.train_loss = train_loss;
  log.train_error = zero_one_error(spec, trained, mask, data.train);
  log.test_error = zero_one_error(spec, trained, mask, data.test);
  log.dist_from_init = masked_distance(trained, init, mask);
  return log;
}

}  // namespace

TicketArtifact run_imp(const MlpSpec& spec, const ImpConfig& cfg,
                       const Dataset& data) {
  spec.validate();
  cfg.validate();
  if (data.train.size() == 0) throw DataError("empty training set");

  TicketArtifact art;
  art.spec = spec;
  art.seed = cfg.seed;
  art.learning_rate = cfg.train.learning_rate;
  art.init = init_params(spec, cfg.seed);
  art.mask = PruningMask::all_ones(make_registry(spec), cfg.prune_biases);

  ParamVector params = art.init;
  const double quantum_eps = 1e-12;
  for (std::size_t round = 0;; ++round) {
    OptimizerConfig round_cfg = cfg.train;
    round_cfg.seed = imp_round_seed(cfg.seed, round);
    // Only the dense round needs the rewind snapshot.
    TrainResult res = train(spec, data.train, art.mask, params, round_cfg,
                            cfg.reg, round == 0 ? cfg.rewind_step : 0);
    if (round == 0) art.anchor = res.snapshot;
    art.trained = res.params;
    art.rounds.push_back(log_round(round, spec, art.trained, art.init,
                                   art.mask, data,
                                   res.epochs.empty()
                                       ? forward(spec, art.trained, art.mask,
                                                 data.train).loss
                                       : res.epochs.back().train_loss));
    if (art.mask.sparsity() >= cfg.target_sparsity - quantum_eps) break;

    RngStream prune_rng(derive_seed(cfg.seed, {tag("prune"), round}));
    const std::vector<double> scores =
        score(cfg.criterion, art.trained, prune_rng);
    PruningMask next = prune_round(art.mask, scores, cfg.prune_rate);
    if (next.unmasked_prunable_count() == art.mask.unmasked_prunable_count()) {
      throw NumericError("prune quota rounded to zero at sparsity " +
                         std::to_string(art.mask.sparsity()) +
                         "; raise the rate or lower the target");
    }
    art.mask = std::move(next);
    params = art.anchor;
    apply_mask(params, art.mask);
  }
  return art;
}

RetrainResult retrain_with_mask(const MlpSpec& spec, const PruningMask& mask,
                                const ParamVector& start, const Dataset& data,
                                const OptimizerConfig& train_cfg,
                                const RegularizerConfig& reg) {
  mask.require_aligned(start);
  ParamVector params = start;
  apply_mask(params, mask);
  TrainResult res = train(spec, data.train, mask, params, train_cfg, reg, 0);

  RetrainResult out;
  out.params = std::move(res.params);
  out.train_loss = res.epochs.empty()
                       ? forward(spec, out.params, mask, data.train).loss
                       : res.epochs.back().train_loss;
  out.train_error = zero_one_error(spec, out.params, mask, data.train);
  out.test_error = zero_one_error(spec, out.params, mask, data.test);
  out.dist_from_start = masked_distance(out.params, start, mask);
  return out;
}

namespace {

// Iterate the per-round quota on fixed scores until the target is reached.
PruningMask prune_to_target(const PruningMask& start,
                            const std::vector<double>& scores, double rate,
                            double target) {
  PruningMask mask = start;
  while (mask.sparsity() < target - 1e-12) {
    PruningMask next = prune_round(mask, scores, rate);
    if (next.unmasked_prunable_count() == mask.unmasked_prunable_count()) {
      throw NumericError("prune quota rounded to zero before target " +
                         std::to_string(target));
    }
    mask = std::move(next);
  }
  return mask;
}

}  // namespace

std::vector<CriterionDrops> criteria_drop_table(
    const MlpSpec& spec, const Dataset& data, const OptimizerConfig& train_cfg,
    const RegularizerConfig& reg, double target_sparsity, double prune_rate,
    const std::vector<PruneCriterion>& criteria,
    const std::vector<std::uint64_t>& seeds) {
  if (criteria.empty() || seeds.empty()) {
    throw ConfigError("drop table needs at least one criterion and one seed");
  }

  std::vector<CriterionDrops> table(criteria.size());
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    table[c].criterion = criteria[c];
  }

  for (std::uint64_t seed : seeds) {
    const ParamVector init = init_params(spec, seed);
    const PruningMask dense = PruningMask::all_ones(make_registry(spec));
    OptimizerConfig base_cfg = train_cfg;
    base_cfg.seed = derive_seed(seed, {tag("drop_base")});
    TrainResult base = train(spec, data.train, dense, init, base_cfg, reg, 0);
    const double base_acc =
        1.0 - zero_one_error(spec, base.params, dense, data.train);
    const double init_acc =
        1.0 - zero_one_error(spec, init, dense, data.train);

    // Each stage compares masked vs dense at that same stage, so an
    // all-ones mask scores zero in every column. The retrain seed is
    // shared between the masked run and its dense reference: common
    // randomness isolates the mask's effect.
    OptimizerConfig retrain_cfg = train_cfg;
    retrain_cfg.seed = derive_seed(seed, {tag("drop_retrain")});
    const RetrainResult dense_re =
        retrain_with_mask(spec, dense, init, data, retrain_cfg, reg);
    const double dense_retrain_acc = 1.0 - dense_re.train_error;

    for (std::size_t c = 0; c < criteria.size(); ++c) {
      RngStream prune_rng(derive_seed(seed, {tag("drop_prune"), c}));
      const std::vector<double> scores =
          score(criteria[c], base.params, prune_rng);
      const PruningMask mask =
          prune_to_target(dense, scores, prune_rate, target_sparsity);

      const double pruned_acc =
          1.0 - zero_one_error(spec, base.params, mask, data.train);
      const double rewound_acc =
          1.0 - zero_one_error(spec, init, mask, data.train);
      const RetrainResult re =
          retrain_with_mask(spec, mask, init, data, retrain_cfg, reg);
      const double retrained_acc = 1.0 - re.train_error;

      table[c].per_seed.push_back({100.0 * (pruned_acc - base_acc),
                                   100.0 * (rewound_acc - init_acc),
                                   100.0 * (retrained_acc - dense_retrain_acc)});
    }
  }

  const double n = static_cast<double>(seeds.size());
  for (CriterionDrops& row : table) {
    for (const auto& s : row.per_seed) {
      row.after_prune += s[0] / n;
      row.after_rewind += s[1] / n;
      row.after_retrain += s[2] / n;
    }
  }
  return table;
}

PruningDelta pruning_delta(const ParamVector& trained, const PruningMask& mask,
                           const std::vector<double>& scores, double rate) {
  PruningDelta out;
  out.next_mask = prune_round(mask, scores, rate);
  out.delta = zeros_like(trained);
  for (std::size_t i = 0; i < trained.size(); ++i) {
    if (mask.bits[i] != 0 && out.next_mask.bits[i] == 0) {
      out.delta.values[i] = -trained.values[i];
    }
  }
  return out;
}

TaylorCheck taylor_bound_check(const Objective& obj, const ParamVector& params,
                               const PruningMask& mask,
                               const ParamVector& delta,
                               const TaylorConfig& cfg) {
  mask.require_aligned(params);
  delta.require_aligned(params);
  if (cfg.gamma_points < 2) {
    throw ConfigError("taylor check needs at least 2 gamma points");
  }

  TaylorCheck out;
  const ParamVector g = obj.gradient(params, mask);
  out.grad_norm = std::sqrt(dot(g, g));
  out.grad_tol =
      cfg.grad_tol_scale * std::sqrt(static_cast<double>(params.size()));
  out.stationary = out.grad_norm <= out.grad_tol;

  ParamVector d = delta;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (mask.bits[i] == 0) d.values[i] = 0.0;
  }
  out.delta_norm = std::sqrt(dot(d, d));

  ParamVector shifted = params;
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    shifted.values[i] += d.values[i];
  }
  out.lhs = std::abs(obj.value(shifted, mask) - obj.value(params, mask));

  if (out.delta_norm == 0.0) {
    out.rhs = 0.0;
    out.holds = out.lhs <= out.rhs;
    return out;
  }

  for (std::size_t j = 0; j < cfg.gamma_points; ++j) {
    const double gamma = static_cast<double>(j) /
                         static_cast<double>(cfg.gamma_points - 1);
    ParamVector point = params;
    for (std::size_t i = 0; i < point.size(); ++i) {
      point.values[i] += gamma * d.values[i];
    }
    RngStream rng(derive_seed(cfg.seed, {tag("taylor"), j}));
    const EigenResult eig =
        top_eigenpair(obj, point, mask, cfg.power_iters, cfg.power_tol, rng);
    if (j == 0 || eig.value > out.max_eigenvalue) {
      out.max_eigenvalue = eig.value;
      out.argmax_gamma = gamma;
    }
  }
  out.rhs = 0.5 * out.delta_norm * out.delta_norm * out.max_eigenvalue *
            (1.0 + cfg.slack);
  out.holds = out.lhs <= out.rhs;
  return out;
}

}  // namespace ticketlab
