#include "ticketlab/pacbayes.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ticketlab/detail/format.hpp"
#include "ticketlab/errors.hpp"

namespace ticketlab {

SpikeSlabPrior SpikeSlabPrior::uniform(ParamVector mean, double sigma_p,
                                       double keep_prob) {
  SpikeSlabPrior p;
  p.sigma.assign(mean.size(), sigma_p);
  p.mean = std::move(mean);
  p.keep_prob = keep_prob;
  p.validate();
  return p;
}

void SpikeSlabPrior::validate() const {
  if (!(keep_prob > 0.0 && keep_prob < 1.0)) {
    throw ConfigError("prior keep probability must lie in (0,1)");
  }
  if (sigma.size() != mean.size()) {
    throw ShapeError("prior sigma length does not match its mean");
  }
  for (double s : sigma) {
    if (!(s > 0.0)) throw ConfigError("prior sigma must be positive");
  }
}

void SpikeSlabPosterior::validate() const {
  mask.check_invariants();
  mask.require_aligned(mean);
  if (sigma.size() != mean.size()) {
    throw ShapeError("posterior sigma length does not match its mean");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (mask.bits[i] == 0 && mean.values[i] != 0.0) {
      throw ConfigError("posterior mean nonzero at masked coordinate " +
                        std::to_string(i));
    }
    if (mask.bits[i] != 0 && mask.prunable[i] != 0 && !(sigma[i] > 0.0)) {
      throw ConfigError("posterior sigma must be positive at unmasked "
                        "coordinate " + std::to_string(i));
    }
  }
}

void GaussianPosterior::validate() const {
  if (sigma.size() != mean.size()) {
    throw ShapeError("posterior sigma length does not match its mean");
  }
  if (!(prior_sigma > 0.0)) throw ConfigError("prior sigma must be positive");
  for (double s : sigma) {
    if (!(s > 0.0)) throw ConfigError("posterior sigma must be positive");
  }
}

namespace {

double gauss_kl_1d(double mean_q, double sigma_q, double mean_p,
                   double sigma_p) {
  const double d = mean_q - mean_p;
  return std::log(sigma_p / sigma_q) +
         (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) - 0.5;
}

}  // namespace

KlTerms kl_spike_slab(const SpikeSlabPosterior& post,
                      const SpikeSlabPrior& prior) {
  post.validate();
  prior.validate();
  if (prior.mean.size() != post.mean.size()) {
    throw ShapeError("prior/posterior mean lengths differ");
  }
  KlTerms kl;
  const double keep_cost = -std::log(prior.keep_prob);
  const double drop_cost = -std::log(1.0 - prior.keep_prob);
  for (std::size_t i = 0; i < post.mean.size(); ++i) {
    if (post.mask.prunable[i] == 0) continue;  // deterministic coordinate
    if (post.mask.bits[i] != 0) {
      kl.gauss += gauss_kl_1d(post.mean.values[i], post.sigma[i],
                              prior.mean.values[i], prior.sigma[i]);
      kl.bern += keep_cost;
    } else {
      kl.bern += drop_cost;
    }
  }
  return kl;
}

double kl_gaussian(const GaussianPosterior& post) {
  post.validate();
  double kl = 0.0;
  for (std::size_t i = 0; i < post.mean.size(); ++i) {
    kl += gauss_kl_1d(post.mean.values[i], post.sigma[i], 0.0,
                      post.prior_sigma);
  }
  return kl;
}

double kl_spike_slab_1d(double lambda_q, double mean_q, double sigma_q,
                        double lambda_p, double mean_p, double sigma_p) {
  if (!(lambda_q >= 0.0 && lambda_q <= 1.0)) {
    throw ConfigError("posterior mixture weight must lie in [0,1]");
  }
  if (!(lambda_p > 0.0 && lambda_p < 1.0)) {
    throw ConfigError("prior mixture weight must lie in (0,1)");
  }
  if (!(sigma_q > 0.0) || !(sigma_p > 0.0)) {
    throw ConfigError("mixture sigmas must be positive");
  }
  auto ratio_term = [](double a, double b) {
    return a == 0.0 ? 0.0 : a * std::log(a / b);
  };
  return lambda_q * gauss_kl_1d(mean_q, sigma_q, mean_p, sigma_p) +
         ratio_term(lambda_q, lambda_p) +
         ratio_term(1.0 - lambda_q, 1.0 - lambda_p);
}

ParamVector sample_posterior_noise(const SpikeSlabPosterior& post,
                                   RngStream& rng) {
  ParamVector noise = zeros_like(post.mean);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (post.mask.bits[i] != 0 && post.mask.prunable[i] != 0) {
      noise.values[i] = post.sigma[i] * rng.normal();
    }
  }
  return noise;
}

namespace {

double dense_loss(const MlpSpec& spec, const ParamVector& params,
                  const Batch& data, RiskLoss loss) {
  return loss == RiskLoss::zero_one ? zero_one_error_dense(spec, params, data)
                                    : cross_entropy_dense(spec, params, data);
}

RiskEstimate risk_from_sampler(
    const MlpSpec& spec, const ParamVector& mean, const Batch& data,
    std::size_t samples, RiskLoss loss, RngStream& rng,
    const std::vector<double>& sigma, const std::vector<std::uint8_t>& active) {
  if (samples < 2) throw ConfigError("risk estimate needs k >= 2 samples");
  RiskEstimate est;
  est.samples = samples;
  est.point = dense_loss(spec, mean, data, loss);
  ParamVector theta = mean;
  double sum = 0.0;
  double sumsq = 0.0;
  for (std::size_t j = 0; j < samples; ++j) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta.values[i] = active[i] ? mean.values[i] + sigma[i] * rng.normal()
                                  : mean.values[i];
    }
    const double v = dense_loss(spec, theta, data, loss);
    sum += v;
    sumsq += v * v;
  }
  const double k = static_cast<double>(samples);
  est.noisy = sum / k;
  est.sharpness = est.noisy - est.point;
  const double var =
      std::max(0.0, (sumsq - k * est.noisy * est.noisy) / (k - 1.0));
  est.std_error = std::sqrt(var / k);
  return est;
}

std::vector<std::uint8_t> spike_slab_active(const PruningMask& mask) {
  std::vector<std::uint8_t> active(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    active[i] = (mask.bits[i] != 0 && mask.prunable[i] != 0) ? 1 : 0;
  }
  return active;
}

}  // namespace

RiskEstimate posterior_risk(const MlpSpec& spec,
                            const SpikeSlabPosterior& post, const Batch& data,
                            std::size_t samples, RiskLoss loss,
                            RngStream& rng) {
  post.validate();
  return risk_from_sampler(spec, post.mean, data, samples, loss, rng,
                           post.sigma, spike_slab_active(post.mask));
}

RiskEstimate posterior_risk_gaussian(const MlpSpec& spec,
                                     const GaussianPosterior& post,
                                     const Batch& data, std::size_t samples,
                                     RiskLoss loss, RngStream& rng) {
  post.validate();
  return risk_from_sampler(spec, post.mean, data, samples, loss, rng,
                           post.sigma,
                           std::vector<std::uint8_t>(post.mean.size(), 1));
}

SharpnessEstimate expected_sharpness(const MlpSpec& spec,
                                     const SpikeSlabPosterior& post,
                                     const Batch& data, std::size_t samples,
                                     RngStream& rng, RiskLoss loss) {
  const RiskEstimate est = posterior_risk(spec, post, data, samples, loss, rng);
  return {est.sharpness, est.std_error, est.samples};
}

double variational_kl_bound(double risk_q, double kl_total, std::size_t m,
                            double delta) {
  if (!(risk_q >= 0.0 && risk_q <= 1.0)) {
    throw ConfigError("risk must lie in [0,1]");
  }
  if (m < 1) throw ConfigError("sample count m must be >= 1");
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw ConfigError("delta must lie in (0,1]");
  }
  if (kl_total < 0.0) throw ConfigError("KL must be nonnegative");
  const double md = static_cast<double>(m);
  const double b = (kl_total + std::log(2.0 * std::sqrt(md) / delta)) / md;
  const double pinsker = risk_q + std::sqrt(b / 2.0);
  const double refined = risk_q + b + std::sqrt(b * (b + 2.0 * risk_q));
  return std::min(refined, pinsker);
}

void BoundOptConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (train_samples < 1) throw ConfigError("train_samples must be >= 1");
  if (report_samples < 2) throw ConfigError("report_samples must be >= 2");
  if (!(sigma_init_scale > 0.0 && sigma_init_scale <= 1.0)) {
    throw ConfigError("sigma_init_scale must lie in (0,1]");
  }
  if (!(sigma_min > 0.0)) throw ConfigError("sigma_min must be > 0");
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw ConfigError("delta must lie in (0,1]");
  }
}

namespace {

// Shared core of both bound optimizations: gradient descent on log sigma
// over the active coordinates against CE risk + sqrt(B/2).
struct OptProblem {
  const MlpSpec& spec;
  const ParamVector& mean;
  const ParamVector* prior_mean;  // nullptr = zero vector
  const std::vector<double>& prior_sigma;
  std::vector<std::uint8_t> active;
  double kl_const = 0.0;  // mask-count part, constant in sigma
  std::size_t m = 0;
};

double problem_kl(const OptProblem& p, const std::vector<double>& sigma) {
  double kl = p.kl_const;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!p.active[i]) continue;
    const double pm = p.prior_mean ? p.prior_mean->values[i] : 0.0;
    kl += gauss_kl_1d(p.mean.values[i], sigma[i], pm, p.prior_sigma[i]);
  }
  return kl;
}

double complexity(const OptProblem& p, double kl, double delta) {
  const double md = static_cast<double>(p.m);
  return (kl + std::log(2.0 * std::sqrt(md) / delta)) / md;
}

// Candidate comparisons reuse one fixed noise sequence (common random
// numbers), so "best iterate" is a deterministic, consistent choice.
double surrogate(const OptProblem& p, const std::vector<double>& sigma,
                 const Batch& data, const BoundOptConfig& cfg) {
  RngStream rng(derive_seed(cfg.seed, {tag("bound_eval")}));
  ParamVector theta = p.mean;
  double ce = 0.0;
  for (std::size_t j = 0; j < cfg.train_samples; ++j) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta.values[i] = p.active[i]
                            ? p.mean.values[i] + sigma[i] * rng.normal()
                            : p.mean.values[i];
    }
    ce += cross_entropy_dense(p.spec, theta, data);
  }
  ce /= static_cast<double>(cfg.train_samples);
  const double b = complexity(p, problem_kl(p, sigma), cfg.delta);
  return ce + std::sqrt(b / 2.0);
}

struct OptOutcome {
  std::vector<double> sigma;
  std::size_t clip_low = 0;
  std::size_t clip_high = 0;
  bool diverged = false;
};

OptOutcome run_bound_opt(const OptProblem& p, const Batch& data,
                         const BoundOptConfig& cfg) {
  const std::size_t n = p.mean.size();
  OptOutcome out;
  out.sigma.assign(n, 0.0);
  std::vector<double> log_sigma(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!p.active[i]) continue;
    const double s0 = std::max(cfg.sigma_min,
                               cfg.sigma_init_scale * p.prior_sigma[i]);
    out.sigma[i] = s0;
    log_sigma[i] = std::log(s0);
  }

  std::vector<double> sigma = out.sigma;
  double best_val = surrogate(p, sigma, data, cfg);
  if (!std::isfinite(best_val)) {
    out.diverged = true;
    return out;
  }

  RngStream step_rng(derive_seed(cfg.seed, {tag("bound_train")}));
  ParamVector theta = p.mean;
  std::vector<double> z(n, 0.0);
  std::vector<double> acc(n, 0.0);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::fill(acc.begin(), acc.end(), 0.0);
    bool bad = false;
    for (std::size_t j = 0; j < cfg.train_samples && !bad; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        z[i] = p.active[i] ? step_rng.normal() : 0.0;
        theta.values[i] = p.mean.values[i] + sigma[i] * z[i];
      }
      const ParamVector g = grad_dense(p.spec, theta, data);
      for (std::size_t i = 0; i < n; ++i) {
        if (!p.active[i]) continue;
        acc[i] += g.values[i] * z[i];
        if (!std::isfinite(acc[i])) bad = true;
      }
    }
    if (bad) {
      out.diverged = true;
      break;
    }
    const double b = complexity(p, problem_kl(p, sigma), cfg.delta);
    const double dpen_dkl =
        1.0 / (2.0 * static_cast<double>(p.m) * std::sqrt(2.0 * b));
    for (std::size_t i = 0; i < n; ++i) {
      if (!p.active[i]) continue;
      const double dce = sigma[i] * acc[i] /
                         static_cast<double>(cfg.train_samples);
      const double dkl_dsigma =
          sigma[i] / (p.prior_sigma[i] * p.prior_sigma[i]) - 1.0 / sigma[i];
      const double g = dce + dpen_dkl * sigma[i] * dkl_dsigma;
      log_sigma[i] -= cfg.learning_rate * g;
      double s = std::exp(log_sigma[i]);
      if (s < cfg.sigma_min) {
        s = cfg.sigma_min;
        ++out.clip_low;
      } else if (s > p.prior_sigma[i]) {
        s = p.prior_sigma[i];
        ++out.clip_high;
      }
      sigma[i] = s;
      log_sigma[i] = std::log(s);
    }
    const double val = surrogate(p, sigma, data, cfg);
    if (!std::isfinite(val)) {
      out.diverged = true;
      break;
    }
    if (val < best_val) {
      best_val = val;
      out.sigma = sigma;
    }
  }
  return out;
}

BoundReport finish_report(const OptProblem& p, const OptOutcome& opt,
                          const Batch& train, const BoundOptConfig& cfg,
                          const std::string& family, double sigma_p,
                          double keep_prob) {
  BoundReport rep;
  rep.family = family;
  rep.delta = cfg.delta;
  rep.m = p.m;
  rep.sigma_p = sigma_p;
  rep.keep_prob = keep_prob;
  rep.seed = cfg.seed;
  rep.opt_steps = cfg.steps;
  rep.train_samples = cfg.train_samples;
  rep.clip_low_hits = opt.clip_low;
  rep.clip_high_hits = opt.clip_high;
  rep.diverged = opt.diverged;
  rep.note = "single prior; no union bound over a sigma_p grid";

  RngStream rng(derive_seed(cfg.seed, {tag("bound_report")}));
  const RiskEstimate risk =
      risk_from_sampler(p.spec, p.mean, train, cfg.report_samples,
                        RiskLoss::zero_one, rng, opt.sigma, p.active);
  rep.risk_q = risk.noisy;
  rep.risk_std_error = risk.std_error;
  rep.risk_samples = risk.samples;
  rep.point_risk = risk.point;
  rep.sharpness = risk.sharpness;
  rep.point_cross_entropy = cross_entropy_dense(p.spec, p.mean, train);

  const double kl = problem_kl(p, opt.sigma);
  rep.kl_bern = p.kl_const;
  rep.kl_gauss = kl - p.kl_const;
  rep.kl_total = kl;
  rep.bound = variational_kl_bound(rep.risk_q, kl, p.m, cfg.delta);
  return rep;
}

}  // namespace

BoundOptResult optimize_posterior_sigma(const MlpSpec& spec,
                                        const TicketArtifact& ticket,
                                        const SpikeSlabPrior& prior,
                                        const Dataset& data,
                                        const BoundOptConfig& cfg) {
  cfg.validate();
  prior.validate();
  if (data.train.size() == 0) throw DataError("empty training set");

  ParamVector mean = ticket.trained;
  apply_mask(mean, ticket.mask);
  if (prior.mean.size() != mean.size()) {
    throw ShapeError("prior does not align with the ticket parameters");
  }

  OptProblem p{spec,
               mean,
               &prior.mean,
               prior.sigma,
               spike_slab_active(ticket.mask),
               0.0,
               data.train.size()};
  const double keep_cost = -std::log(prior.keep_prob);
  const double drop_cost = -std::log(1.0 - prior.keep_prob);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (ticket.mask.prunable[i] == 0) continue;
    p.kl_const += ticket.mask.bits[i] ? keep_cost : drop_cost;
  }

  const OptOutcome opt = run_bound_opt(p, data.train, cfg);

  BoundOptResult res;
  res.posterior.mean = mean;
  res.posterior.sigma = opt.sigma;
  res.posterior.mask = ticket.mask;
  res.report = finish_report(p, opt, data.train, cfg, "spike_slab",
                             prior.sigma.empty() ? 0.0 : prior.sigma.front(),
                             prior.keep_prob);
  return res;
}

GaussianBoundOptResult optimize_posterior_sigma_gaussian(
    const MlpSpec& spec, const TicketArtifact& ticket, double prior_sigma,
    const Dataset& data, const BoundOptConfig& cfg) {
  cfg.validate();
  if (!(prior_sigma > 0.0)) throw ConfigError("prior sigma must be positive");
  if (data.train.size() == 0) throw DataError("empty training set");

  ParamVector mean = ticket.trained;
  apply_mask(mean, ticket.mask);

  const std::vector<double> prior_sigmas(mean.size(), prior_sigma);
  OptProblem p{spec,
               mean,
               nullptr,
               prior_sigmas,
               std::vector<std::uint8_t>(mean.size(), 1),
               0.0,
               data.train.size()};
  const OptOutcome opt = run_bound_opt(p, data.train, cfg);

  GaussianBoundOptResult res;
  res.posterior.mean = mean;
  res.posterior.sigma = opt.sigma;
  res.posterior.prior_sigma = prior_sigma;
  res.report =
      finish_report(p, opt, data.train, cfg, "gaussian", prior_sigma, 0.0);
  return res;
}

std::vector<ScatterRow> kl_risk_scatter(
    const std::vector<TicketArtifact>& tickets, const Dataset& data,
    double sigma_p, const BoundOptConfig& cfg) {
  if (tickets.size() < 2) {
    throw ConfigError("scatter needs at least 2 tickets");
  }
  std::vector<ScatterRow> rows;
  for (std::size_t t = 0; t < tickets.size(); ++t) {
    const TicketArtifact& ticket = tickets[t];
    const double keep =
        std::min(1.0 - 1e-6,
                 std::max(1e-6, 1.0 - ticket.mask.sparsity()));

    BoundOptConfig ss_cfg = cfg;
    ss_cfg.seed = derive_seed(cfg.seed, {tag("scatter"), t, 0});
    const SpikeSlabPrior prior =
        SpikeSlabPrior::uniform(ticket.init, sigma_p, keep);
    const BoundOptResult ss =
        optimize_posterior_sigma(ticket.spec, ticket, prior, data, ss_cfg);

    BoundOptConfig g_cfg = cfg;
    g_cfg.seed = derive_seed(cfg.seed, {tag("scatter"), t, 1});
    const GaussianBoundOptResult ga = optimize_posterior_sigma_gaussian(
        ticket.spec, ticket, sigma_p, data, g_cfg);

    const double test_error = zero_one_error(ticket.spec, ticket.trained,
                                             ticket.mask, data.test);
    for (const BoundReport* rep : {&ss.report, &ga.report}) {
      ScatterRow row;
      row.family = rep->family;
      row.seed = ticket.seed;
      row.learning_rate = ticket.learning_rate;
      row.kl_total = rep->kl_total;
      row.risk_q = rep->risk_q;
      row.point_cross_entropy = rep->point_cross_entropy;
      row.sharpness = rep->sharpness;
      row.test_error = test_error;
      row.bound = rep->bound;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bound_report_json(const BoundReport& rep) {
  nlohmann::ordered_json j;
  j["family"] = rep.family;
  j["risk_q"] = rep.risk_q;
  j["risk_std_error"] = rep.risk_std_error;
  j["risk_samples"] = rep.risk_samples;
  j["point_risk"] = rep.point_risk;
  j["point_cross_entropy"] = rep.point_cross_entropy;
  j["sharpness"] = rep.sharpness;
  j["kl_gauss"] = rep.kl_gauss;
  j["kl_bern"] = rep.kl_bern;
  j["kl_total"] = rep.kl_total;
  j["bound"] = rep.bound;
  j["delta"] = rep.delta;
  j["m"] = rep.m;
  j["sigma_p"] = rep.sigma_p;
  j["keep_prob"] = rep.keep_prob;
  j["seed"] = rep.seed;
  j["opt_steps"] = rep.opt_steps;
  j["train_samples"] = rep.train_samples;
  j["clip_low_hits"] = rep.clip_low_hits;
  j["clip_high_hits"] = rep.clip_high_hits;
  j["diverged"] = rep.diverged;
  j["note"] = rep.note;
  return j.dump(2);
}

void write_bound_report(const std::string& path, const BoundReport& rep) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << bound_report_json(rep) << "\n";
  if (!f) throw DataError("write failed for '" + path + "'");
}

void write_scatter_csv(const std::string& path,
                       const std::vector<ScatterRow>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << "family,seed,learning_rate,kl_total,risk_q,point_cross_entropy,"
       "sharpness,test_error,bound\n";
  for (const ScatterRow& r : rows) {
    f << r.family << "," << r.seed << ","
      << detail::format_double(r.learning_rate) << ","
      << detail::format_double(r.kl_total) << ","
      << detail::format_double(r.risk_q) << ","
      << detail::format_double(r.point_cross_entropy) << ","
      << detail::format_double(r.sharpness) << ","
      << detail::format_double(r.test_error) << ","
      << detail::format_double(r.bound) << "\n";
  }
  if (!f) throw DataError("write failed for '" + path + "'");
}

}  // namespace ticketlab
