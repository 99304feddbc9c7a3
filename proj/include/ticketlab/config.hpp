#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ticketlab/contsparse.hpp"
#include "ticketlab/data.hpp"
#include "ticketlab/imp.hpp"
#include "ticketlab/mlp_spec.hpp"
#include "ticketlab/optim.hpp"
#include "ticketlab/pacbayes.hpp"

namespace ticketlab {

struct DataConfig {
  std::string kind = "blobs";  // blobs | idx
  // blobs
  std::size_t classes = 4;
  std::size_t per_class = 128;
  std::size_t dim = 8;
  double separation = 2.5;
  std::uint64_t seed = 7;
  std::size_t test_per_class = 128;
  // idx
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  void validate() const;
};

// Fully-resolved experiment description. Parsing materializes every
// default, so dumping the parsed config back out records the whole run.
struct ExperimentConfig {
  std::string recipe = "lr_sweep";
  std::string output_dir = "runs";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  double label_noise = 0.0;
  std::uint64_t label_noise_seed = 11;
  std::size_t jobs = 1;

  DataConfig data;
  MlpSpec model{{8, 64, 32, 4}, Activation::relu};
  OptimizerConfig optimizer;
  RegularizerConfig regularizer;  // anchor filled per run, never from JSON

  // IMP knobs; the nested train/reg configs are wired in at run time.
  double imp_target_sparsity = 0.8;
  double imp_prune_rate = 0.2;
  PruneCriterion imp_criterion = PruneCriterion::large_final;
  std::size_t imp_rewind_step = 0;
  bool prune_biases = false;

  // Continuous-sparsification knobs.
  double cs_penalty = 1e-3;
  double cs_beta_start = 1.0;
  double cs_beta_end = 100.0;
  double cs_s_init = 0.05;
  double cs_threshold = 0.5;

  double sigma_p = 0.1;
  BoundOptConfig bound;

  std::vector<double> lr_grid = {0.003, 0.01, 0.03, 0.1, 0.3};
  std::vector<double> lambda_grid = {0.0, 1e-5, 1e-4, 1e-3, 1e-2};
  std::vector<double> penalty_grid = {1e-4, 1e-3, 1e-2};
  std::vector<double> sparsities = {0.8};

  // CLI verb parameters with config-file defaults.
  std::size_t hessian_power_iters = 100;
  double hessian_power_tol = 1e-4;
  std::size_t hessian_trace_samples = 200;
  double slice_radius = 0.5;
  std::size_t slice_points = 41;

  void validate() const;

  ImpConfig imp_config(std::uint64_t run_seed) const;
  CsConfig cs_config(std::uint64_t run_seed) const;
};

// Strict parse: unknown keys anywhere are ConfigErrors, naming the key and
// the object it appeared in.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// The config with all defaults materialized, for the run directory.
nlohmann::ordered_json resolved_config_json(const ExperimentConfig& cfg);

Dataset load_dataset(const DataConfig& cfg);

// Dataset plus optional label noise on the training split.
Dataset prepare_dataset(const ExperimentConfig& cfg, bool with_noise);

}  // namespace ticketlab
