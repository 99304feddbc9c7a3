#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>

#include "ticketlab/config.hpp"
#include "ticketlab/imp.hpp"

namespace ticketlab {

// Directory a recipe writes into: <output_dir>/<recipe name>. Contains the
// resolved config, one job_<n>/ directory per grid point with its own
// JSONL log and artifacts, and an aggregated summary.csv.
std::string recipe_dir(const ExperimentConfig& cfg);

void recipe_lr_sweep(const ExperimentConfig& cfg);
void recipe_regularizer_sweep(const ExperimentConfig& cfg);
void recipe_flatness(const ExperimentConfig& cfg);
void recipe_param_dist(const ExperimentConfig& cfg);

// Dispatch by cfg.recipe.
void run_recipe(const ExperimentConfig& cfg);

// Magnitude quantiles (20/40/60/80%) over the unmasked coordinates of the
// trained weights and of their distance from the initialization.
struct QuantileTable {
  std::array<double, 4> weight = {};
  std::array<double, 4> delta = {};
};

QuantileTable param_dist_quantiles(const TicketArtifact& ticket);

// Re-aggregates the job JSONL logs of a recipe directory into a CSV of
// their summary rows.
void write_report(const std::string& recipe_output_dir,
                  const std::string& out_csv);

// manifest.json with an FNV-1a digest per file under dir, so two runs can
// be compared without diffing every artifact.
void write_run_manifest(const std::string& dir);

// Runs fn(0..count-1), fanning out over worker threads when jobs > 1.
// Jobs must not share mutable state; the first exception wins.
void run_jobs(std::size_t count, std::size_t jobs,
              const std::function<void(std::size_t)>& fn);

}  // namespace ticketlab
