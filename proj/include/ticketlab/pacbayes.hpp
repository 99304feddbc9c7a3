#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ticketlab/data.hpp"
#include "ticketlab/imp.hpp"
#include "ticketlab/mask.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/param_vector.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

// The stochastic model covers prunable coordinates only: each gets a
// keep-probability and a slab Gaussian. Non-prunable coordinates (biases)
// are deterministic point masses shared by prior and posterior, so they
// add nothing to the KL and never receive noise.

struct SpikeSlabPrior {
  ParamVector mean;           // slab center, the initialization
  std::vector<double> sigma;  // slab std per coordinate
  double keep_prob = 0.1;     // shared slab probability, fixed a priori

  static SpikeSlabPrior uniform(ParamVector mean, double sigma_p,
                                double keep_prob);
  void validate() const;
};

struct SpikeSlabPosterior {
  ParamVector mean;           // trained weights, zero at masked coordinates
  std::vector<double> sigma;  // used at unmasked prunable coordinates
  PruningMask mask;           // keep-probabilities collapsed to the mask

  void validate() const;
};

// Baseline family: every coordinate Gaussian, prior centered at zero with
// one scalar std. No mask structure, so masked coordinates are perturbed
// and penalized like any other.
struct GaussianPosterior {
  ParamVector mean;
  std::vector<double> sigma;  // > 0 everywhere
  double prior_sigma = 0.1;

  void validate() const;
};

struct KlTerms {
  double gauss = 0.0;
  double bern = 0.0;
  double total() const { return gauss + bern; }
};

// Closed form over the aligned coordinates; bern depends only on the mask
// counts and the prior keep-probability.
KlTerms kl_spike_slab(const SpikeSlabPosterior& post,
                      const SpikeSlabPrior& prior);

double kl_gaussian(const GaussianPosterior& post);

// One-dimensional spike-and-slab KL with free mixture weights, the closed
// form whose degenerate cases (lambda_q 0 or 1) are the terms above.
double kl_spike_slab_1d(double lambda_q, double mean_q, double sigma_q,
                        double lambda_p, double mean_p, double sigma_p);

enum class RiskLoss { zero_one, cross_entropy };

// One posterior perturbation: nonzero only at unmasked prunable
// coordinates, each drawn from N(0, sigma_i^2).
ParamVector sample_posterior_noise(const SpikeSlabPosterior& post,
                                   RngStream& rng);

struct RiskEstimate {
  double point = 0.0;      // loss at the posterior mean
  double noisy = 0.0;      // MC mean of loss at mean + noise
  double sharpness = 0.0;  // noisy - point, same samples
  double std_error = 0.0;  // of the noisy mean
  std::size_t samples = 0;
};

RiskEstimate posterior_risk(const MlpSpec& spec,
                            const SpikeSlabPosterior& post, const Batch& data,
                            std::size_t samples, RiskLoss loss,
                            RngStream& rng);

RiskEstimate posterior_risk_gaussian(const MlpSpec& spec,
                                     const GaussianPosterior& post,
                                     const Batch& data, std::size_t samples,
                                     RiskLoss loss, RngStream& rng);

struct SharpnessEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

// E[L(mean + noise)] - L(mean); zero-one loss by default (the bound needs
// a [0,1] loss), cross-entropy available for landscape-style analysis.
SharpnessEstimate expected_sharpness(const MlpSpec& spec,
                                     const SpikeSlabPosterior& post,
                                     const Batch& data, std::size_t samples,
                                     RngStream& rng,
                                     RiskLoss loss = RiskLoss::zero_one);

// Certificate on the true risk: with B = (kl + log(2*sqrt(m)/delta))/m,
// returns min{risk + B + sqrt(B*(B + 2*risk)), risk + sqrt(B/2)}.
double variational_kl_bound(double risk_q, double kl_total, std::size_t m,
                            double delta);

struct BoundReport {
  std::string family;  // "spike_slab" or "gaussian"
  double risk_q = 0.0;
  double risk_std_error = 0.0;
  std::size_t risk_samples = 0;
  double point_risk = 0.0;           // zero-one at the mean
  double point_cross_entropy = 0.0;  // the risk axis has two readings
  double sharpness = 0.0;            // risk_q - point_risk
  double kl_gauss = 0.0;
  double kl_bern = 0.0;
  double kl_total = 0.0;
  double bound = 0.0;
  double delta = 0.05;
  std::size_t m = 0;
  double sigma_p = 0.0;
  double keep_prob = 0.0;  // 0 for the gaussian family
  std::uint64_t seed = 0;
  std::size_t opt_steps = 0;
  std::size_t train_samples = 0;
  std::size_t clip_low_hits = 0;   // sigma clamped at the floor
  std::size_t clip_high_hits = 0;  // sigma clamped at the prior std
  bool diverged = false;
  std::string note;
};

std::string bound_report_json(const BoundReport& rep);
void write_bound_report(const std::string& path, const BoundReport& rep);

struct BoundOptConfig {
  std::size_t steps = 200;
  double learning_rate = 0.05;     // on log sigma
  std::size_t train_samples = 8;   // MC draws per optimization step
  std::size_t report_samples = 256;
  double sigma_init_scale = 0.5;   // initial sigma = scale * sigma_p
  double sigma_min = 1e-6;
  double delta = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

// Gradient descent on log sigma against a differentiable surrogate of the
// certificate (cross-entropy risk plus sqrt(B/2)); sigma clipped to
// [sigma_min, sigma_p], best iterate kept under common random numbers, and
// the final report re-measured with the zero-one loss at report_samples.
struct BoundOptResult {
  SpikeSlabPosterior posterior;
  BoundReport report;
};

BoundOptResult optimize_posterior_sigma(const MlpSpec& spec,
                                        const TicketArtifact& ticket,
                                        const SpikeSlabPrior& prior,
                                        const Dataset& data,
                                        const BoundOptConfig& cfg);

struct GaussianBoundOptResult {
  GaussianPosterior posterior;
  BoundReport report;
};

GaussianBoundOptResult optimize_posterior_sigma_gaussian(
    const MlpSpec& spec, const TicketArtifact& ticket, double prior_sigma,
    const Dataset& data, const BoundOptConfig& cfg);

struct ScatterRow {
  std::string family;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  double kl_total = 0.0;
  double risk_q = 0.0;
  double point_cross_entropy = 0.0;
  double sharpness = 0.0;
  double test_error = 0.0;
  double bound = 0.0;
};

// Optimizes both families on every ticket. The spike-and-slab prior keeps
// probability 1 - achieved sparsity and is centered on the ticket's own
// initialization; the Gaussian prior is zero-mean with the same sigma_p.
std::vector<ScatterRow> kl_risk_scatter(
    const std::vector<TicketArtifact>& tickets, const Dataset& data,
    double sigma_p, const BoundOptConfig& cfg);

void write_scatter_csv(const std::string& path,
                       const std::vector<ScatterRow>& rows);

}  // namespace ticketlab
