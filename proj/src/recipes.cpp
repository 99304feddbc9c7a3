#include "ticketlab/recipes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ticketlab/artifact_io.hpp"
#include "ticketlab/detail/format.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/hessian.hpp"
#include "ticketlab/pacbayes.hpp"
#include "ticketlab/runlog.hpp"

namespace fs = std::filesystem;

namespace ticketlab {
namespace {

std::string job_name(std::size_t index) {
  std::string n = std::to_string(index);
  while (n.size() < 3) n.insert(n.begin(), '0');
  return "job_" + n;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw DataError("write to " + path + " failed");
}

void write_resolved_config(const ExperimentConfig& cfg,
                           const std::string& dir) {
  write_text_file(dir + "/config.json", resolved_config_json(cfg).dump(2) + "\n");
}

std::string csv_value(const nlohmann::ordered_json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return detail::format_double(v.get<double>());
  return v.dump();
}

void write_summary_csv(const std::string& path,
                       const std::vector<nlohmann::ordered_json>& rows) {
  // Header is the union of keys in first-appearance order; a recipe's rows
  // all share one shape, so in practice this is just the first row's keys.
  std::vector<std::string> columns;
  for (const auto& row : rows) {
    for (const auto& item : row.items()) {
      if (std::find(columns.begin(), columns.end(), item.key()) ==
          columns.end()) {
        columns.push_back(item.key());
      }
    }
  }
  std::string text;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (c) text += ',';
    text += columns[c];
  }
  text += '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) text += ',';
      const auto it = row.find(columns[c]);
      if (it != row.end()) text += csv_value(*it);
    }
    text += '\n';
  }
  write_text_file(path, text);
}

void log_rounds(RunLog& log, const TicketArtifact& art) {
  for (const RoundLog& r : art.rounds) {
    log.record("round", {{"round", r.round},
                         {"sparsity", r.sparsity},
                         {"train_loss", r.train_loss},
                         {"train_error", r.train_error},
                         {"test_error", r.test_error},
                         {"dist_from_init", r.dist_from_init}});
  }
}

nlohmann::ordered_json bound_fields(const BoundReport& rep) {
  return nlohmann::ordered_json::parse(bound_report_json(rep));
}

double clamp_keep(double sparsity) {
  return std::min(std::max(1.0 - sparsity, 1e-6), 1.0 - 1e-6);
}

struct RecipeDir {
  std::string root;

  explicit RecipeDir(const ExperimentConfig& cfg) : root(recipe_dir(cfg)) {
    fs::create_directories(root);
    write_resolved_config(cfg, root);
  }

  std::string job(std::size_t index) const {
    std::string d = root + "/" + job_name(index);
    fs::create_directories(d);
    return d;
  }

  void finish(const std::vector<nlohmann::ordered_json>& summaries) const {
    write_summary_csv(root + "/summary.csv", summaries);
    write_run_manifest(root);
  }
};

}  // namespace

std::string recipe_dir(const ExperimentConfig& cfg) {
  return cfg.output_dir + "/" + cfg.recipe;
}

void write_run_manifest(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    paths.push_back(std::move(rel));
  }
  std::sort(paths.begin(), paths.end());
  nlohmann::ordered_json files = nlohmann::ordered_json::array();
  for (const auto& rel : paths) {
    files.push_back({{"path", rel},
                     {"fnv1a64", digest_hex(file_digest(dir + "/" + rel))}});
  }
  nlohmann::ordered_json manifest;
  manifest["files"] = std::move(files);
  write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

void run_jobs(std::size_t count, std::size_t jobs,
              const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(jobs, count);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void recipe_lr_sweep(const ExperimentConfig& cfg) {
  const RecipeDir dir(cfg);
  const Dataset clean = prepare_dataset(cfg, false);
  const Dataset noisy =
      cfg.label_noise > 0.0 ? prepare_dataset(cfg, true) : clean;

  struct Item {
    std::size_t lr_index;
    bool noisy;
    std::uint64_t seed;
  };
  std::vector<Item> grid;
  for (std::size_t li = 0; li < cfg.lr_grid.size(); ++li) {
    grid.push_back({li, false, 0});
    if (cfg.label_noise > 0.0) grid.push_back({li, true, 0});
  }
  std::vector<Item> expanded;
  for (const Item& it : grid) {
    for (std::uint64_t seed : cfg.seeds) {
      Item e = it;
      e.seed = seed;
      expanded.push_back(e);
    }
  }

  std::vector<nlohmann::ordered_json> summaries(expanded.size());
  run_jobs(expanded.size(), cfg.jobs, [&](std::size_t j) {
    const Item& item = expanded[j];
    const double lr = cfg.lr_grid[item.lr_index];
    const Dataset& ds = item.noisy ? noisy : clean;
    const std::string jd = dir.job(j);
    RunLog log(jd + "/run.jsonl");
    log.record("config", {{"recipe", "lr_sweep"},
                          {"job", j},
                          {"learning_rate", lr},
                          {"noisy", item.noisy},
                          {"seed", item.seed},
                          {"data", ds.provenance}});

    ImpConfig ic = cfg.imp_config(item.seed);
    ic.train.learning_rate = lr;
    const TicketArtifact art = run_imp(cfg.model, ic, ds);
    log_rounds(log, art);
    save_ticket(art, jd + "/ticket");

    const SpikeSlabPrior prior = SpikeSlabPrior::uniform(
        art.init, cfg.sigma_p, clamp_keep(cfg.imp_target_sparsity));
    BoundOptConfig bc = cfg.bound;
    bc.seed = derive_seed(item.seed, {tag("lr_bound"), item.lr_index,
                                      item.noisy ? 1ull : 0ull});
    const BoundOptResult bres =
        optimize_posterior_sigma(cfg.model, art, prior, ds, bc);
    write_bound_report(jd + "/bound.json", bres.report);
    log.record("bound", bound_fields(bres.report));

    const RoundLog& last = art.rounds.back();
    nlohmann::ordered_json summary = {
        {"recipe", "lr_sweep"},
        {"job", j},
        {"learning_rate", lr},
        {"noisy", item.noisy},
        {"seed", item.seed},
        {"rounds", art.rounds.size()},
        {"sparsity", art.mask.sparsity()},
        {"train_error", last.train_error},
        {"test_error", last.test_error},
        {"test_accuracy", 1.0 - last.test_error},
        {"dist_from_init", last.dist_from_init},
        {"kl_total", bres.report.kl_total},
        {"risk_q", bres.report.risk_q},
        {"bound", bres.report.bound}};
    log.record("summary", summary);
    summaries[j] = std::move(summary);
  });
  dir.finish(summaries);
}

void recipe_regularizer_sweep(const ExperimentConfig& cfg) {
  const RecipeDir dir(cfg);
  const Dataset ds = prepare_dataset(cfg, true);

  struct Item {
    RegularizerKind kind;
    double lambda;
    double sparsity;
    std::uint64_t seed;
  };
  std::vector<Item> grid;
  for (RegularizerKind kind :
       {RegularizerKind::l2_init, RegularizerKind::l2_norm}) {
    for (double lambda : cfg.lambda_grid) {
      for (double sp : cfg.sparsities) {
        for (std::uint64_t seed : cfg.seeds) {
          grid.push_back({kind, lambda, sp, seed});
        }
      }
    }
  }

  std::vector<nlohmann::ordered_json> summaries(grid.size());
  run_jobs(grid.size(), cfg.jobs, [&](std::size_t j) {
    const Item& item = grid[j];
    const std::string jd = dir.job(j);
    RunLog log(jd + "/run.jsonl");
    log.record("config", {{"recipe", "regularizer_sweep"},
                          {"job", j},
                          {"regularizer", to_string(item.kind)},
                          {"lambda", item.lambda},
                          {"target_sparsity", item.sparsity},
                          {"seed", item.seed},
                          {"learning_rate", cfg.optimizer.learning_rate},
                          {"data", ds.provenance}});

    ImpConfig ic = cfg.imp_config(item.seed);
    ic.target_sparsity = item.sparsity;
    ic.reg.kind = item.kind;
    ic.reg.lambda = item.lambda;
    if (item.kind == RegularizerKind::l2_init) {
      ic.reg.anchor = init_params(cfg.model, item.seed);
    }
    const TicketArtifact art = run_imp(cfg.model, ic, ds);
    log_rounds(log, art);
    save_ticket(art, jd + "/ticket");

    const RoundLog& last = art.rounds.back();
    nlohmann::ordered_json summary = {
        {"recipe", "regularizer_sweep"},
        {"job", j},
        {"regularizer", to_string(item.kind)},
        {"lambda", item.lambda},
        {"target_sparsity", item.sparsity},
        {"seed", item.seed},
        {"sparsity", art.mask.sparsity()},
        {"train_error", last.train_error},
        {"test_error", last.test_error},
        {"test_accuracy", 1.0 - last.test_error},
        {"dist_from_init", last.dist_from_init}};
    log.record("summary", summary);
    summaries[j] = std::move(summary);
  });
  dir.finish(summaries);
}

void recipe_flatness(const ExperimentConfig& cfg) {
  const RecipeDir dir(cfg);
  const Dataset ds = prepare_dataset(cfg, true);

  const std::vector<OptimizerKind> variants = {
      OptimizerKind::sgd, OptimizerKind::sam, OptimizerKind::nvrm};

  struct Item {
    std::size_t variant;
    std::uint64_t seed;
  };
  std::vector<Item> grid;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::uint64_t seed : cfg.seeds) grid.push_back({v, seed});
  }

  std::vector<nlohmann::ordered_json> summaries(grid.size());
  run_jobs(grid.size(), cfg.jobs, [&](std::size_t j) {
    const Item& item = grid[j];
    const OptimizerKind kind = variants[item.variant];
    const std::string jd = dir.job(j);
    RunLog log(jd + "/run.jsonl");

    OptimizerConfig oc = cfg.optimizer;
    oc.kind = kind;
    oc.sam_rho = 0.0;
    oc.nvrm_b = 0.0;
    if (kind == OptimizerKind::sam) {
      oc.sam_rho = cfg.optimizer.kind == OptimizerKind::sam &&
                           cfg.optimizer.sam_rho > 0.0
                       ? cfg.optimizer.sam_rho
                       : 0.05;
    } else if (kind == OptimizerKind::nvrm) {
      oc.nvrm_b = cfg.optimizer.kind == OptimizerKind::nvrm &&
                          cfg.optimizer.nvrm_b > 0.0
                      ? cfg.optimizer.nvrm_b
                      : 0.018;
    }
    log.record("config", {{"recipe", "flatness"},
                          {"job", j},
                          {"optimizer", to_string(kind)},
                          {"sam_rho", oc.sam_rho},
                          {"nvrm_b", oc.nvrm_b},
                          {"seed", item.seed},
                          {"learning_rate", oc.learning_rate},
                          {"data", ds.provenance}});

    ImpConfig ic = cfg.imp_config(item.seed);
    ic.train = oc;
    const TicketArtifact art = run_imp(cfg.model, ic, ds);
    log_rounds(log, art);
    save_ticket(art, jd + "/ticket");

    const MlpBatchObjective obj(cfg.model, ds.train);
    RngStream rng(derive_seed(
        item.seed, {tag("flatness"), static_cast<std::uint64_t>(item.variant)}));
    const CurvatureReport rep = curvature_report(
        obj, art.trained, art.mask, cfg.hessian_power_iters,
        cfg.hessian_power_tol, cfg.hessian_trace_samples, rng);
    const auto slice =
        landscape_slice(obj, art.trained, art.mask, rep.top.vector,
                        cfg.slice_radius, cfg.slice_points);
    write_slice_csv(jd + "/slice.csv", slice);
    log.record("curvature", {{"top_eigenvalue", rep.top.value},
                             {"eigen_residual", rep.top.residual},
                             {"eigen_iterations", rep.top.iterations},
                             {"eigen_converged", rep.top.converged},
                             {"trace", rep.trace.value},
                             {"trace_std_error", rep.trace.std_error},
                             {"trace_samples", rep.trace.samples}});

    const RoundLog& last = art.rounds.back();
    nlohmann::ordered_json summary = {
        {"recipe", "flatness"},
        {"job", j},
        {"optimizer", to_string(kind)},
        {"seed", item.seed},
        {"sparsity", art.mask.sparsity()},
        {"train_error", last.train_error},
        {"test_error", last.test_error},
        {"top_eigenvalue", rep.top.value},
        {"eigen_converged", rep.top.converged},
        {"trace", rep.trace.value},
        {"trace_std_error", rep.trace.std_error}};
    log.record("summary", summary);
    summaries[j] = std::move(summary);
  });
  dir.finish(summaries);
}

QuantileTable param_dist_quantiles(const TicketArtifact& ticket) {
  ticket.mask.require_aligned(ticket.trained);
  ticket.trained.require_aligned(ticket.init);
  std::vector<double> weight;
  std::vector<double> delta;
  for (std::size_t i = 0; i < ticket.trained.size(); ++i) {
    if (ticket.mask.bits[i] == 0 || ticket.mask.prunable[i] == 0) continue;
    weight.push_back(std::fabs(ticket.trained.values[i]));
    delta.push_back(
        std::fabs(ticket.trained.values[i] - ticket.init.values[i]));
  }
  if (weight.empty()) {
    throw NumericError("quantile table needs at least one unpruned weight");
  }
  std::sort(weight.begin(), weight.end());
  std::sort(delta.begin(), delta.end());
  const std::array<double, 4> fracs = {0.2, 0.4, 0.6, 0.8};
  QuantileTable out;
  for (std::size_t q = 0; q < fracs.size(); ++q) {
    const auto idx = static_cast<std::size_t>(
        std::floor(fracs[q] * static_cast<double>(weight.size() - 1)));
    out.weight[q] = weight[idx];
    out.delta[q] = delta[idx];
  }
  return out;
}

void recipe_param_dist(const ExperimentConfig& cfg) {
  const RecipeDir dir(cfg);
  const Dataset ds = prepare_dataset(cfg, true);

  struct Item {
    std::size_t lr_index;
    std::uint64_t seed;
  };
  std::vector<Item> grid;
  for (std::size_t li = 0; li < cfg.lr_grid.size(); ++li) {
    for (std::uint64_t seed : cfg.seeds) grid.push_back({li, seed});
  }

  std::vector<nlohmann::ordered_json> summaries(grid.size());
  run_jobs(grid.size(), cfg.jobs, [&](std::size_t j) {
    const Item& item = grid[j];
    const double lr = cfg.lr_grid[item.lr_index];
    const std::string jd = dir.job(j);
    RunLog log(jd + "/run.jsonl");
    log.record("config", {{"recipe", "param_dist"},
                          {"job", j},
                          {"learning_rate", lr},
                          {"seed", item.seed},
                          {"data", ds.provenance}});

    ImpConfig ic = cfg.imp_config(item.seed);
    ic.train.learning_rate = lr;
    const TicketArtifact art = run_imp(cfg.model, ic, ds);
    log_rounds(log, art);
    save_ticket(art, jd + "/ticket");

    const QuantileTable qt = param_dist_quantiles(art);
    log.record("quantiles", {{"weight_q20", qt.weight[0]},
                             {"weight_q40", qt.weight[1]},
                             {"weight_q60", qt.weight[2]},
                             {"weight_q80", qt.weight[3]},
                             {"delta_q20", qt.delta[0]},
                             {"delta_q40", qt.delta[1]},
                             {"delta_q60", qt.delta[2]},
                             {"delta_q80", qt.delta[3]}});

    const RoundLog& last = art.rounds.back();
    nlohmann::ordered_json summary = {{"recipe", "param_dist"},
                                      {"job", j},
                                      {"learning_rate", lr},
                                      {"seed", item.seed},
                                      {"sparsity", art.mask.sparsity()},
                                      {"train_error", last.train_error},
                                      {"test_error", last.test_error},
                                      {"weight_q20", qt.weight[0]},
                                      {"weight_q40", qt.weight[1]},
                                      {"weight_q60", qt.weight[2]},
                                      {"weight_q80", qt.weight[3]},
                                      {"delta_q20", qt.delta[0]},
                                      {"delta_q40", qt.delta[1]},
                                      {"delta_q60", qt.delta[2]},
                                      {"delta_q80", qt.delta[3]}};
    log.record("summary", summary);
    summaries[j] = std::move(summary);
  });
  dir.finish(summaries);
}

void run_recipe(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.recipe == "lr_sweep") {
    recipe_lr_sweep(cfg);
  } else if (cfg.recipe == "regularizer_sweep") {
    recipe_regularizer_sweep(cfg);
  } else if (cfg.recipe == "flatness") {
    recipe_flatness(cfg);
  } else if (cfg.recipe == "param_dist") {
    recipe_param_dist(cfg);
  } else {
    throw ConfigError("unknown recipe '" + cfg.recipe + "'");
  }
}

void write_report(const std::string& recipe_output_dir,
                  const std::string& out_csv) {
  if (!fs::is_directory(recipe_output_dir)) {
    throw DataError("not a directory: " + recipe_output_dir);
  }
  std::vector<std::string> job_dirs;
  for (const auto& entry : fs::directory_iterator(recipe_output_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("job_", 0) == 0) job_dirs.push_back(name);
  }
  std::sort(job_dirs.begin(), job_dirs.end());

  std::vector<nlohmann::ordered_json> rows;
  for (const auto& name : job_dirs) {
    const std::string log_path = recipe_output_dir + "/" + name + "/run.jsonl";
    std::ifstream in(log_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + log_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::ordered_json rec;
      try {
        rec = nlohmann::ordered_json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(log_path + ":" + std::to_string(line_no) +
                        ": bad JSONL record: " + e.what());
      }
      if (rec.value("event", std::string()) != "summary") continue;
      rec.erase("schema_version");
      rec.erase("event");
      rows.push_back(std::move(rec));
    }
  }
  if (rows.empty()) {
    throw DataError("no summary events under " + recipe_output_dir);
  }
  write_summary_csv(out_csv, rows);
}

}  // namespace ticketlab
