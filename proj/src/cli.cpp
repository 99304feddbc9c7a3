#include "ticketlab/cli.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ticketlab/artifact_io.hpp"
#include "ticketlab/config.hpp"
#include "ticketlab/contsparse.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/hessian.hpp"
#include "ticketlab/recipes.hpp"
#include "ticketlab/runlog.hpp"

namespace fs = std::filesystem;

namespace ticketlab {
namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw DataError("write to " + path + " failed");
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
}

std::string make_run_dir(const ExperimentConfig& cfg, const std::string& out,
                         const std::string& verb) {
  const std::string dir = out.empty() ? cfg.output_dir + "/" + verb : out;
  fs::create_directories(dir);
  write_text(dir + "/config.json", resolved_config_json(cfg).dump(2) + "\n");
  return dir;
}

std::uint64_t pick_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                        bool seed_set) {
  if (seed_set) return seed;
  if (cfg.seeds.empty()) throw ConfigError("config has no seeds");
  return cfg.seeds.front();
}

// l2_init anchors to the run's own initialization; configs cannot carry a
// parameter vector, so it is attached here.
void attach_anchor(RegularizerConfig& reg, const MlpSpec& spec,
                   std::uint64_t seed) {
  if (reg.kind == RegularizerKind::l2_init && reg.lambda > 0.0 &&
      !reg.anchor) {
    reg.anchor = init_params(spec, seed);
  }
}

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

void cmd_train(const std::string& config_path, std::uint64_t seed_arg,
               bool seed_set, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const std::uint64_t seed = pick_seed(cfg, seed_arg, seed_set);
  const std::string dir = make_run_dir(cfg, out, "train");
  const Dataset ds = prepare_dataset(cfg, true);

  RunLog log(dir + "/run.jsonl");
  log.record("config", {{"verb", "train"},
                        {"seed", seed},
                        {"data", ds.provenance},
                        {"learning_rate", cfg.optimizer.learning_rate}});

  const PruningMask mask =
      PruningMask::all_ones(make_registry(cfg.model), cfg.prune_biases);
  const ParamVector init = init_params(cfg.model, seed);
  OptimizerConfig oc = cfg.optimizer;
  oc.seed = imp_round_seed(seed, 0);  // matches round 0 of the imp verb
  RegularizerConfig reg = cfg.regularizer;
  attach_anchor(reg, cfg.model, seed);

  const TrainResult tr = train(cfg.model, ds.train, mask, init, oc, reg);
  for (const EpochStats& e : tr.epochs) {
    log.record("epoch", {{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"train_error", e.train_error}});
  }
  save_params(init, dir + "/init.tlpv");
  save_params(tr.params, dir + "/params.tlpv");

  const double train_loss = forward(cfg.model, tr.params, mask, ds.train).loss;
  nlohmann::ordered_json summary = {
      {"verb", "train"},
      {"seed", seed},
      {"train_loss", train_loss},
      {"train_error", zero_one_error(cfg.model, tr.params, mask, ds.train)},
      {"test_error", zero_one_error(cfg.model, tr.params, mask, ds.test)},
      {"dist_from_init", masked_distance(tr.params, init, mask)}};
  log.record("summary", summary);
  write_run_manifest(dir);
  std::cout << "wrote " << dir << "\n";
}

void cmd_imp(const std::string& config_path, std::uint64_t seed_arg,
             bool seed_set, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const std::uint64_t seed = pick_seed(cfg, seed_arg, seed_set);
  const std::string dir = make_run_dir(cfg, out, "imp");
  const Dataset ds = prepare_dataset(cfg, true);

  RunLog log(dir + "/run.jsonl");
  log.record("config",
             {{"verb", "imp"}, {"seed", seed}, {"data", ds.provenance}});

  ImpConfig ic = cfg.imp_config(seed);
  attach_anchor(ic.reg, cfg.model, seed);
  const TicketArtifact art = run_imp(cfg.model, ic, ds);
  for (const RoundLog& r : art.rounds) {
    log.record("round", {{"round", r.round},
                         {"sparsity", r.sparsity},
                         {"train_loss", r.train_loss},
                         {"train_error", r.train_error},
                         {"test_error", r.test_error},
                         {"dist_from_init", r.dist_from_init}});
  }
  save_ticket(art, dir + "/ticket");

  const RoundLog& last = art.rounds.back();
  nlohmann::ordered_json summary = {{"verb", "imp"},
                                    {"seed", seed},
                                    {"rounds", art.rounds.size()},
                                    {"sparsity", art.mask.sparsity()},
                                    {"train_error", last.train_error},
                                    {"test_error", last.test_error},
                                    {"dist_from_init", last.dist_from_init}};
  log.record("summary", summary);
  write_run_manifest(dir);
  std::cout << "wrote " << dir << "\n";
}

void cmd_cs(const std::string& config_path, std::uint64_t seed_arg,
            bool seed_set, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const std::uint64_t seed = pick_seed(cfg, seed_arg, seed_set);
  const std::string dir = make_run_dir(cfg, out, "cs");
  const Dataset ds = prepare_dataset(cfg, true);

  RunLog log(dir + "/run.jsonl");
  log.record("config",
             {{"verb", "cs"}, {"seed", seed}, {"data", ds.provenance}});

  const CsConfig cc = cfg.cs_config(seed);
  const ParamVector init = init_params(cfg.model, seed);
  const CsResult res = run_cs(cfg.model, cc, ds, init);
  for (const CsEpochLog& e : res.epochs) {
    log.record("cs_epoch", {{"epoch", e.epoch},
                            {"beta", e.beta},
                            {"density", e.density},
                            {"train_loss", e.train_loss},
                            {"sign_changes", e.sign_changes}});
  }
  save_ticket(res.ticket, dir + "/ticket");
  write_bound_report(dir + "/bound.json", res.bound);

  nlohmann::ordered_json summary = {{"verb", "cs"},
                                    {"seed", seed},
                                    {"density", res.final_density},
                                    {"sparsity", res.ticket.mask.sparsity()},
                                    {"train_error", res.train_error},
                                    {"test_error", res.test_error},
                                    {"kl_total", res.bound.kl_total},
                                    {"risk_q", res.bound.risk_q},
                                    {"bound", res.bound.bound}};
  log.record("summary", summary);
  write_run_manifest(dir);
  std::cout << "wrote " << dir << "\n";
}

void cmd_bound(const std::string& config_path, const std::string& ticket_dir,
               const std::string& family, const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const TicketArtifact t = load_ticket(ticket_dir);
  const Dataset ds = prepare_dataset(cfg, true);
  BoundOptConfig bc = cfg.bound;
  bc.seed = derive_seed(bc.seed, {tag("bound_cli"), t.seed});

  BoundReport rep;
  if (family == "spike_slab") {
    const double keep =
        std::min(std::max(1.0 - t.mask.sparsity(), 1e-6), 1.0 - 1e-6);
    const SpikeSlabPrior prior =
        SpikeSlabPrior::uniform(t.init, cfg.sigma_p, keep);
    rep = optimize_posterior_sigma(t.spec, t, prior, ds, bc).report;
  } else if (family == "gaussian") {
    rep = optimize_posterior_sigma_gaussian(t.spec, t, cfg.sigma_p, ds, bc)
              .report;
  } else {
    throw ConfigError("unknown posterior family '" + family +
                      "' (expected spike_slab or gaussian)");
  }
  emit(out, bound_report_json(rep) + "\n");
}

void cmd_hessian(const std::string& config_path, const std::string& ticket_dir,
                 const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const TicketArtifact t = load_ticket(ticket_dir);
  const Dataset ds = prepare_dataset(cfg, true);
  const MlpBatchObjective obj(t.spec, ds.train);
  RngStream rng(derive_seed(t.seed, {tag("hessian_cli")}));
  const CurvatureReport rep = curvature_report(
      obj, t.trained, t.mask, cfg.hessian_power_iters, cfg.hessian_power_tol,
      cfg.hessian_trace_samples, rng);
  nlohmann::ordered_json j = {{"top_eigenvalue", rep.top.value},
                              {"eigen_residual", rep.top.residual},
                              {"eigen_iterations", rep.top.iterations},
                              {"eigen_converged", rep.top.converged},
                              {"trace", rep.trace.value},
                              {"trace_std_error", rep.trace.std_error},
                              {"trace_samples", rep.trace.samples}};
  emit(out, j.dump(2) + "\n");
}

void cmd_slice(const std::string& config_path, const std::string& ticket_dir,
               const std::string& out) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  const TicketArtifact t = load_ticket(ticket_dir);
  const Dataset ds = prepare_dataset(cfg, true);
  const MlpBatchObjective obj(t.spec, ds.train);
  RngStream rng(derive_seed(t.seed, {tag("slice_cli")}));
  const EigenResult top =
      top_eigenpair(obj, t.trained, t.mask, cfg.hessian_power_iters,
                    cfg.hessian_power_tol, rng);
  const auto rows = landscape_slice(obj, t.trained, t.mask, top.vector,
                                    cfg.slice_radius, cfg.slice_points);
  write_slice_csv(out, rows);
  std::cout << "wrote " << out << "\n";
}

void cmd_recipe(const std::string& config_path, const std::string& name,
                std::size_t jobs, bool jobs_set) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (!name.empty()) cfg.recipe = name;
  if (jobs_set) cfg.jobs = jobs;
  run_recipe(cfg);
  std::cout << "wrote " << recipe_dir(cfg) << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"lottery ticket laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::string ticket_dir;
  std::string family = "spike_slab";
  std::string report_dir;
  std::string recipe_name;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 1;
  bool jobs_set = false;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config JSON")
        ->required();
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "run seed (default: first in config)")
        ->each([&](const std::string&) { seed_set = true; });
  };

  CLI::App* train = app.add_subcommand("train", "one dense training run");
  add_config(train);
  add_seed(train);
  train->add_option("--out", out, "output directory");
  train->callback([&] { cmd_train(config_path, seed, seed_set, out); });

  CLI::App* imp = app.add_subcommand("imp", "iterative magnitude pruning");
  add_config(imp);
  add_seed(imp);
  imp->add_option("--out", out, "output directory");
  imp->callback([&] { cmd_imp(config_path, seed, seed_set, out); });

  CLI::App* cs = app.add_subcommand("cs", "continuous sparsification");
  add_config(cs);
  add_seed(cs);
  cs->add_option("--out", out, "output directory");
  cs->callback([&] { cmd_cs(config_path, seed, seed_set, out); });

  CLI::App* bound =
      app.add_subcommand("bound", "optimize a PAC-Bayes bound on a ticket");
  add_config(bound);
  bound->add_option("--ticket", ticket_dir, "ticket directory")->required();
  bound->add_option("--family", family, "spike_slab or gaussian");
  bound->add_option("--out", out, "report path (default: stdout)");
  bound->callback([&] { cmd_bound(config_path, ticket_dir, family, out); });

  CLI::App* hessian =
      app.add_subcommand("hessian", "curvature report for a ticket");
  add_config(hessian);
  hessian->add_option("--ticket", ticket_dir, "ticket directory")->required();
  hessian->add_option("--out", out, "report path (default: stdout)");
  hessian->callback([&] { cmd_hessian(config_path, ticket_dir, out); });

  CLI::App* slice =
      app.add_subcommand("slice", "loss slice along the top eigenvector");
  add_config(slice);
  slice->add_option("--ticket", ticket_dir, "ticket directory")->required();
  slice->add_option("--out", out, "CSV path")->default_str("slice.csv");
  slice->callback([&] {
    cmd_slice(config_path, ticket_dir, out.empty() ? "slice.csv" : out);
  });

  CLI::App* recipe = app.add_subcommand("recipe", "run an experiment recipe");
  recipe->add_option("name", recipe_name,
                     "lr_sweep, regularizer_sweep, flatness or param_dist");
  add_config(recipe);
  recipe->add_option("--jobs", jobs, "parallel jobs")
      ->each([&](const std::string&) { jobs_set = true; });
  recipe->callback([&] { cmd_recipe(config_path, recipe_name, jobs, jobs_set); });

  CLI::App* report =
      app.add_subcommand("report", "aggregate recipe logs into a CSV");
  report->add_option("--dir", report_dir, "recipe output directory")
      ->required();
  report->add_option("--out", out, "CSV path (default: <dir>/report.csv)");
  report->callback([&] {
    const std::string path = out.empty() ? report_dir + "/report.csv" : out;
    write_report(report_dir, path);
    std::cout << "wrote " << path << "\n";
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("tlab");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ticketlab
