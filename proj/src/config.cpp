#include "ticketlab/config.hpp"

#include <fstream>
#include <initializer_list>

#include "ticketlab/artifact_io.hpp"
#include "ticketlab/errors.hpp"

namespace ticketlab {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const char* where,
                         std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) {
    throw ConfigError(std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (key == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void read_field(const json& obj, const char* where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for ") + where + "." + key);
  }
}

void read_enum(const json& obj, const char* where, const char* key,
               OptimizerKind& out) {
  std::string s;
  read_field(obj, where, key, s);
  if (!s.empty()) out = optimizer_kind_from_string(s);
}

void read_enum(const json& obj, const char* where, const char* key,
               RegularizerKind& out) {
  std::string s;
  read_field(obj, where, key, s);
  if (!s.empty()) out = regularizer_kind_from_string(s);
}

void read_enum(const json& obj, const char* where, const char* key,
               PruneCriterion& out) {
  std::string s;
  read_field(obj, where, key, s);
  if (!s.empty()) out = prune_criterion_from_string(s);
}

void read_enum(const json& obj, const char* where, const char* key,
               Activation& out) {
  std::string s;
  read_field(obj, where, key, s);
  if (!s.empty()) out = activation_from_string(s);
}

void parse_data(const json& j, DataConfig& out) {
  reject_unknown_keys(j, "data",
                      {"kind", "classes", "per_class", "dim", "separation",
                       "seed", "test_per_class", "train_images",
                       "train_labels", "test_images", "test_labels"});
  read_field(j, "data", "kind", out.kind);
  read_field(j, "data", "classes", out.classes);
  read_field(j, "data", "per_class", out.per_class);
  read_field(j, "data", "dim", out.dim);
  read_field(j, "data", "separation", out.separation);
  read_field(j, "data", "seed", out.seed);
  read_field(j, "data", "test_per_class", out.test_per_class);
  read_field(j, "data", "train_images", out.train_images);
  read_field(j, "data", "train_labels", out.train_labels);
  read_field(j, "data", "test_images", out.test_images);
  read_field(j, "data", "test_labels", out.test_labels);
}

void parse_model(const json& j, MlpSpec& out) {
  reject_unknown_keys(j, "model", {"widths", "activation"});
  read_field(j, "model", "widths", out.widths);
  read_enum(j, "model", "activation", out.activation);
}

void parse_optimizer(const json& j, OptimizerConfig& out) {
  reject_unknown_keys(j, "optimizer",
                      {"kind", "learning_rate", "momentum", "sam_rho",
                       "nvrm_b", "nvrm_samples", "epochs", "batch_size",
                       "lr_decay_factor", "lr_decay_every"});
  read_enum(j, "optimizer", "kind", out.kind);
  read_field(j, "optimizer", "learning_rate", out.learning_rate);
  read_field(j, "optimizer", "momentum", out.momentum);
  read_field(j, "optimizer", "sam_rho", out.sam_rho);
  read_field(j, "optimizer", "nvrm_b", out.nvrm_b);
  read_field(j, "optimizer", "nvrm_samples", out.nvrm_samples);
  read_field(j, "optimizer", "epochs", out.epochs);
  read_field(j, "optimizer", "batch_size", out.batch_size);
  read_field(j, "optimizer", "lr_decay_factor", out.lr_decay_factor);
  read_field(j, "optimizer", "lr_decay_every", out.lr_decay_every);
}

void parse_regularizer(const json& j, RegularizerConfig& out) {
  reject_unknown_keys(j, "regularizer", {"kind", "lambda"});
  read_enum(j, "regularizer", "kind", out.kind);
  read_field(j, "regularizer", "lambda", out.lambda);
}

void parse_imp(const json& j, ExperimentConfig& out) {
  reject_unknown_keys(j, "imp",
                      {"target_sparsity", "prune_rate", "criterion",
                       "rewind_step", "prune_biases"});
  read_field(j, "imp", "target_sparsity", out.imp_target_sparsity);
  read_field(j, "imp", "prune_rate", out.imp_prune_rate);
  read_enum(j, "imp", "criterion", out.imp_criterion);
  read_field(j, "imp", "rewind_step", out.imp_rewind_step);
  read_field(j, "imp", "prune_biases", out.prune_biases);
}

void parse_cs(const json& j, ExperimentConfig& out) {
  reject_unknown_keys(
      j, "cs", {"penalty", "beta_start", "beta_end", "s_init", "threshold"});
  read_field(j, "cs", "penalty", out.cs_penalty);
  read_field(j, "cs", "beta_start", out.cs_beta_start);
  read_field(j, "cs", "beta_end", out.cs_beta_end);
  read_field(j, "cs", "s_init", out.cs_s_init);
  read_field(j, "cs", "threshold", out.cs_threshold);
}

void parse_bound(const json& j, ExperimentConfig& out) {
  reject_unknown_keys(j, "bound",
                      {"sigma_p", "delta", "steps", "learning_rate",
                       "train_samples", "report_samples", "sigma_init_scale",
                       "sigma_min"});
  read_field(j, "bound", "sigma_p", out.sigma_p);
  read_field(j, "bound", "delta", out.bound.delta);
  read_field(j, "bound", "steps", out.bound.steps);
  read_field(j, "bound", "learning_rate", out.bound.learning_rate);
  read_field(j, "bound", "train_samples", out.bound.train_samples);
  read_field(j, "bound", "report_samples", out.bound.report_samples);
  read_field(j, "bound", "sigma_init_scale", out.bound.sigma_init_scale);
  read_field(j, "bound", "sigma_min", out.bound.sigma_min);
}

void parse_diagnostics(const json& j, ExperimentConfig& out) {
  reject_unknown_keys(j, "diagnostics",
                      {"power_iters", "power_tol", "trace_samples",
                       "slice_radius", "slice_points"});
  read_field(j, "diagnostics", "power_iters", out.hessian_power_iters);
  read_field(j, "diagnostics", "power_tol", out.hessian_power_tol);
  read_field(j, "diagnostics", "trace_samples", out.hessian_trace_samples);
  read_field(j, "diagnostics", "slice_radius", out.slice_radius);
  read_field(j, "diagnostics", "slice_points", out.slice_points);
}

}  // namespace

void DataConfig::validate() const {
  if (kind == "blobs") {
    if (classes < 2 || per_class == 0 || dim == 0 || test_per_class == 0) {
      throw ConfigError("blobs need classes >= 2 and positive sizes");
    }
    if (!(separation > 0.0)) {
      throw ConfigError("blob separation must be positive");
    }
  } else if (kind == "idx") {
    if (train_images.empty() || train_labels.empty() || test_images.empty() ||
        test_labels.empty()) {
      throw ConfigError("idx data needs all four file paths");
    }
    if (classes < 2) throw ConfigError("idx data needs classes >= 2");
  } else {
    throw ConfigError("unknown data kind '" + kind + "' (want blobs|idx)");
  }
}

void ExperimentConfig::validate() const {
  data.validate();
  model.validate();
  optimizer.validate();
  regularizer.validate();
  bound.validate();
  if (seeds.empty()) throw ConfigError("seeds list must not be empty");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) {
    throw ConfigError("label noise fraction must lie in [0,1)");
  }
  if (jobs == 0) throw ConfigError("jobs must be >= 1");
  if (!(sigma_p > 0.0)) throw ConfigError("sigma_p must be positive");
  if (model.input_dim() !=
      (data.kind == "blobs" ? data.dim : model.input_dim())) {
    throw ConfigError("model input width does not match data dimension");
  }
  if (data.kind == "blobs" && model.classes() != data.classes) {
    throw ConfigError("model output width does not match class count");
  }
  imp_config(0).validate();
  cs_config(0).validate();
  if (slice_points < 3 || slice_points % 2 == 0) {
    throw ConfigError("slice_points must be odd and >= 3");
  }
}

ImpConfig ExperimentConfig::imp_config(std::uint64_t run_seed) const {
  ImpConfig cfg;
  cfg.target_sparsity = imp_target_sparsity;
  cfg.prune_rate = imp_prune_rate;
  cfg.criterion = imp_criterion;
  cfg.rewind_step = imp_rewind_step;
  cfg.prune_biases = prune_biases;
  cfg.train = optimizer;
  cfg.reg = regularizer;
  cfg.seed = run_seed;
  return cfg;
}

CsConfig ExperimentConfig::cs_config(std::uint64_t run_seed) const {
  CsConfig cfg;
  cfg.penalty = cs_penalty;
  cfg.beta_start = cs_beta_start;
  cfg.beta_end = cs_beta_end;
  cfg.s_init = cs_s_init;
  cfg.threshold = cs_threshold;
  cfg.prune_biases = prune_biases;
  cfg.train = optimizer;
  cfg.seed = run_seed;
  cfg.prior_sigma = sigma_p;
  cfg.bound = bound;
  return cfg;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  reject_unknown_keys(j, "config",
                      {"recipe", "output_dir", "seeds", "label_noise",
                       "label_noise_seed", "jobs", "data", "model",
                       "optimizer", "regularizer", "imp", "cs", "bound",
                       "diagnostics", "lr_grid", "lambda_grid", "penalty_grid",
                       "sparsities"});
  ExperimentConfig out;
  read_field(j, "config", "recipe", out.recipe);
  read_field(j, "config", "output_dir", out.output_dir);
  read_field(j, "config", "seeds", out.seeds);
  read_field(j, "config", "label_noise", out.label_noise);
  read_field(j, "config", "label_noise_seed", out.label_noise_seed);
  read_field(j, "config", "jobs", out.jobs);
  if (j.contains("data")) parse_data(j.at("data"), out.data);
  if (j.contains("model")) parse_model(j.at("model"), out.model);
  if (j.contains("optimizer")) parse_optimizer(j.at("optimizer"), out.optimizer);
  if (j.contains("regularizer")) {
    parse_regularizer(j.at("regularizer"), out.regularizer);
  }
  if (j.contains("imp")) parse_imp(j.at("imp"), out);
  if (j.contains("cs")) parse_cs(j.at("cs"), out);
  if (j.contains("bound")) parse_bound(j.at("bound"), out);
  if (j.contains("diagnostics")) parse_diagnostics(j.at("diagnostics"), out);
  read_field(j, "config", "lr_grid", out.lr_grid);
  read_field(j, "config", "lambda_grid", out.lambda_grid);
  read_field(j, "config", "penalty_grid", out.penalty_grid);
  read_field(j, "config", "sparsities", out.sparsities);
  out.validate();
  return out;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
  return parse_experiment_config(j);
}

nlohmann::ordered_json resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["recipe"] = cfg.recipe;
  j["output_dir"] = cfg.output_dir;
  j["seeds"] = cfg.seeds;
  j["label_noise"] = cfg.label_noise;
  j["label_noise_seed"] = cfg.label_noise_seed;
  j["jobs"] = cfg.jobs;

  nlohmann::ordered_json& d = j["data"];
  d["kind"] = cfg.data.kind;
  if (cfg.data.kind == "blobs") {
    d["classes"] = cfg.data.classes;
    d["per_class"] = cfg.data.per_class;
    d["dim"] = cfg.data.dim;
    d["separation"] = cfg.data.separation;
    d["seed"] = cfg.data.seed;
    d["test_per_class"] = cfg.data.test_per_class;
  } else {
    d["classes"] = cfg.data.classes;
    d["train_images"] = cfg.data.train_images;
    d["train_labels"] = cfg.data.train_labels;
    d["test_images"] = cfg.data.test_images;
    d["test_labels"] = cfg.data.test_labels;
  }

  j["model"]["widths"] = cfg.model.widths;
  j["model"]["activation"] = to_string(cfg.model.activation);

  nlohmann::ordered_json& o = j["optimizer"];
  o["kind"] = to_string(cfg.optimizer.kind);
  o["learning_rate"] = cfg.optimizer.learning_rate;
  o["momentum"] = cfg.optimizer.momentum;
  o["sam_rho"] = cfg.optimizer.sam_rho;
  o["nvrm_b"] = cfg.optimizer.nvrm_b;
  o["nvrm_samples"] = cfg.optimizer.nvrm_samples;
  o["epochs"] = cfg.optimizer.epochs;
  o["batch_size"] = cfg.optimizer.batch_size;
  o["lr_decay_factor"] = cfg.optimizer.lr_decay_factor;
  o["lr_decay_every"] = cfg.optimizer.lr_decay_every;

  j["regularizer"]["kind"] = to_string(cfg.regularizer.kind);
  j["regularizer"]["lambda"] = cfg.regularizer.lambda;

  nlohmann::ordered_json& imp = j["imp"];
  imp["target_sparsity"] = cfg.imp_target_sparsity;
  imp["prune_rate"] = cfg.imp_prune_rate;
  imp["criterion"] = to_string(cfg.imp_criterion);
  imp["rewind_step"] = cfg.imp_rewind_step;
  imp["prune_biases"] = cfg.prune_biases;

  nlohmann::ordered_json& cs = j["cs"];
  cs["penalty"] = cfg.cs_penalty;
  cs["beta_start"] = cfg.cs_beta_start;
  cs["beta_end"] = cfg.cs_beta_end;
  cs["s_init"] = cfg.cs_s_init;
  cs["threshold"] = cfg.cs_threshold;

  nlohmann::ordered_json& b = j["bound"];
  b["sigma_p"] = cfg.sigma_p;
  b["delta"] = cfg.bound.delta;
  b["steps"] = cfg.bound.steps;
  b["learning_rate"] = cfg.bound.learning_rate;
  b["train_samples"] = cfg.bound.train_samples;
  b["report_samples"] = cfg.bound.report_samples;
  b["sigma_init_scale"] = cfg.bound.sigma_init_scale;
  b["sigma_min"] = cfg.bound.sigma_min;

  nlohmann::ordered_json& diag = j["diagnostics"];
  diag["power_iters"] = cfg.hessian_power_iters;
  diag["power_tol"] = cfg.hessian_power_tol;
  diag["trace_samples"] = cfg.hessian_trace_samples;
  diag["slice_radius"] = cfg.slice_radius;
  diag["slice_points"] = cfg.slice_points;

  j["lr_grid"] = cfg.lr_grid;
  j["lambda_grid"] = cfg.lambda_grid;
  j["penalty_grid"] = cfg.penalty_grid;
  j["sparsities"] = cfg.sparsities;
  return j;
}

Dataset load_dataset(const DataConfig& cfg) {
  cfg.validate();
  if (cfg.kind == "blobs") {
    return make_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.separation,
                      cfg.seed, cfg.test_per_class);
  }
  Dataset ds;
  ds.classes = cfg.classes;
  ds.train = load_idx(cfg.train_images, cfg.train_labels, cfg.classes);
  ds.train.role = DataRole::train;
  ds.test = load_idx(cfg.test_images, cfg.test_labels, cfg.classes);
  ds.test.role = DataRole::test;
  ds.provenance = "idx(train=" + digest_hex(file_digest(cfg.train_images)) +
                  ",labels=" + digest_hex(file_digest(cfg.train_labels)) +
                  ",test=" + digest_hex(file_digest(cfg.test_images)) +
                  ",tlabels=" + digest_hex(file_digest(cfg.test_labels)) + ")";
  return ds;
}

Dataset prepare_dataset(const ExperimentConfig& cfg, bool with_noise) {
  Dataset ds = load_dataset(cfg.data);
  if (with_noise && cfg.label_noise > 0.0) {
    ds = inject_label_noise(ds, cfg.label_noise, cfg.label_noise_seed).dataset;
  }
  return ds;
}

}  // namespace ticketlab
