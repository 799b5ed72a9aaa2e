// Experiment runner: data generation, episodic training, paired target-task
// evaluation, axis sweeps, ablations, and grid-field export. Everything a run
// needs is one key=value config file plus override flags; every run writes a
// JSON manifest (resolved config, hashes, seed) so it can be reproduced
// bitwise. Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "metagp/checkpoint.hpp"
#include "metagp/errors.hpp"
#include "metagp/experiment.hpp"
#include "metagp/trainer.hpp"

namespace data = metagp::data;
namespace gp = metagp::gp;
namespace train = metagp::train;
namespace expt = metagp::expt;
namespace ckpt = metagp::ckpt;
using metagp::ConfigError;
using nlohmann::json;

namespace {

constexpr const char* kCodeVersion = "1.0.0";

// ---- config file: `key = value` lines, '#' comments ----

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: " +
                        line);
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got: " + s);
    }
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
}

// ---- typed value parsing ----

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long out = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

gp::Objective objective_from(const std::string& v) {
  if (v == "err") return gp::Objective::kErr;
  if (v == "like") return gp::Objective::kLike;
  if (v == "marlike") return gp::Objective::kMarLike;
  throw ConfigError("train.objective must be err, like, or marlike, got '" + v + "'");
}

std::string objective_name(gp::Objective o) {
  switch (o) {
    case gp::Objective::kErr: return "err";
    case gp::Objective::kLike: return "like";
    default: return "marlike";
  }
}

gp::AblationMode mode_from(const std::string& v) {
  if (v == "full") return gp::AblationMode::kFull;
  if (v == "no_spt_mean") return gp::AblationMode::kNoSptMean;
  if (v == "zero_mean") return gp::AblationMode::kZeroMean;
  throw ConfigError("model.mode must be full, no_spt_mean, or zero_mean, got '" + v + "'");
}

std::string mode_name(gp::AblationMode m) {
  switch (m) {
    case gp::AblationMode::kFull: return "full";
    case gp::AblationMode::kNoSptMean: return "no_spt_mean";
    default: return "zero_mean";
  }
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (const std::string& i : items) {
    if (!out.empty()) out += ",";
    out += i;
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Builds the experiment config from the merged key=value map, rejecting keys
// the schema doesn't know (typos should fail loudly, not silently default).
expt::ExperimentConfig build_config(const std::map<std::string, std::string>& kv) {
  expt::ExperimentConfig cfg;
  for (const auto& [key, v] : kv) {
    if (key == "data.regions") cfg.synthetic.regions = static_cast<int>(to_long(key, v));
    else if (key == "data.attributes") cfg.synthetic.attributes = static_cast<int>(to_long(key, v));
    else if (key == "data.grid") cfg.synthetic.grid = static_cast<int>(to_long(key, v));
    else if (key == "data.grid_cap") cfg.synthetic.grid_cap = static_cast<int>(to_long(key, v));
    else if (key == "data.len_lo") cfg.synthetic.len_lo = to_double(key, v);
    else if (key == "data.len_hi") cfg.synthetic.len_hi = to_double(key, v);
    else if (key == "data.amp_lo") cfg.synthetic.amp_lo = to_double(key, v);
    else if (key == "data.amp_hi") cfg.synthetic.amp_hi = to_double(key, v);
    else if (key == "data.lin_lo") cfg.synthetic.lin_lo = to_double(key, v);
    else if (key == "data.lin_hi") cfg.synthetic.lin_hi = to_double(key, v);
    else if (key == "data.sin_amp_lo") cfg.synthetic.sin_amp_lo = to_double(key, v);
    else if (key == "data.sin_amp_hi") cfg.synthetic.sin_amp_hi = to_double(key, v);
    else if (key == "data.sin_freq_lo") cfg.synthetic.sin_freq_lo = to_double(key, v);
    else if (key == "data.sin_freq_hi") cfg.synthetic.sin_freq_hi = to_double(key, v);
    else if (key == "data.noise_lo") cfg.synthetic.noise_lo = to_double(key, v);
    else if (key == "data.noise_hi") cfg.synthetic.noise_hi = to_double(key, v);
    else if (key == "split.region_train") cfg.region_split.train = to_double(key, v);
    else if (key == "split.region_validation") cfg.region_split.validation = to_double(key, v);
    else if (key == "split.region_target") cfg.region_split.target = to_double(key, v);
    else if (key == "split.attribute_train") cfg.attribute_split.train = to_double(key, v);
    else if (key == "split.attribute_validation")
      cfg.attribute_split.validation = to_double(key, v);
    else if (key == "split.attribute_target") cfg.attribute_split.target = to_double(key, v);
    else if (key == "model.latent_k") cfg.hyper.latent_k = static_cast<int>(to_long(key, v));
    else if (key == "model.width") cfg.hyper.width = static_cast<int>(to_long(key, v));
    else if (key == "model.dropout") cfg.hyper.dropout = to_double(key, v);
    else if (key == "model.mode") cfg.hyper.mode = mode_from(v);
    else if (key == "model.delta_in_cross") cfg.hyper.delta_in_cross = to_bool(key, v);
    else if (key == "train.objective") cfg.trainer.objective = objective_from(v);
    else if (key == "train.n_support") cfg.trainer.n_support = to_long(key, v);
    else if (key == "train.n_query") cfg.trainer.n_query = to_long(key, v);
    else if (key == "train.max_episodes") cfg.trainer.max_episodes = to_long(key, v);
    else if (key == "train.val_interval") cfg.trainer.val_interval = to_long(key, v);
    else if (key == "train.patience") cfg.trainer.patience = to_long(key, v);
    else if (key == "train.val_episodes") cfg.trainer.val_episodes = to_long(key, v);
    else if (key == "train.batch") cfg.trainer.batch = to_long(key, v);
    else if (key == "train.learning_rate") cfg.trainer.learning_rate = to_double(key, v);
    else if (key == "eval.n_support") cfg.eval.n_support = to_long(key, v);
    else if (key == "eval.n_repeats") cfg.eval.n_repeats = static_cast<int>(to_long(key, v));
    else if (key == "methods") cfg.methods = split_list(v);
    else if (key == "ft.epochs") cfg.ft_epochs = static_cast<int>(to_long(key, v));
    else if (key == "ft.lr") cfg.ft_lr = to_double(key, v);
    else throw ConfigError("unknown config key: " + key);
  }
  return cfg;
}

// Every effective setting, defaults included, in canonical form. This is what
// gets hashed and stored in the manifest: reproducing a run needs the values
// that were actually used, not only the ones the user happened to set.
std::map<std::string, std::string> resolved_config(const expt::ExperimentConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["data.regions"] = std::to_string(cfg.synthetic.regions);
  kv["data.attributes"] = std::to_string(cfg.synthetic.attributes);
  kv["data.grid"] = std::to_string(cfg.synthetic.grid);
  kv["data.grid_cap"] = std::to_string(cfg.synthetic.grid_cap);
  kv["data.len_lo"] = format_double(cfg.synthetic.len_lo);
  kv["data.len_hi"] = format_double(cfg.synthetic.len_hi);
  kv["data.amp_lo"] = format_double(cfg.synthetic.amp_lo);
  kv["data.amp_hi"] = format_double(cfg.synthetic.amp_hi);
  kv["data.lin_lo"] = format_double(cfg.synthetic.lin_lo);
  kv["data.lin_hi"] = format_double(cfg.synthetic.lin_hi);
  kv["data.sin_amp_lo"] = format_double(cfg.synthetic.sin_amp_lo);
  kv["data.sin_amp_hi"] = format_double(cfg.synthetic.sin_amp_hi);
  kv["data.sin_freq_lo"] = format_double(cfg.synthetic.sin_freq_lo);
  kv["data.sin_freq_hi"] = format_double(cfg.synthetic.sin_freq_hi);
  kv["data.noise_lo"] = format_double(cfg.synthetic.noise_lo);
  kv["data.noise_hi"] = format_double(cfg.synthetic.noise_hi);
  kv["split.region_train"] = format_double(cfg.region_split.train);
  kv["split.region_validation"] = format_double(cfg.region_split.validation);
  kv["split.region_target"] = format_double(cfg.region_split.target);
  kv["split.attribute_train"] = format_double(cfg.attribute_split.train);
  kv["split.attribute_validation"] = format_double(cfg.attribute_split.validation);
  kv["split.attribute_target"] = format_double(cfg.attribute_split.target);
  kv["model.latent_k"] = std::to_string(cfg.hyper.latent_k);
  kv["model.width"] = std::to_string(cfg.hyper.width);
  kv["model.dropout"] = format_double(cfg.hyper.dropout);
  kv["model.mode"] = mode_name(cfg.hyper.mode);
  kv["model.delta_in_cross"] = cfg.hyper.delta_in_cross ? "true" : "false";
  kv["train.objective"] = objective_name(cfg.trainer.objective);
  kv["train.n_support"] = std::to_string(cfg.trainer.n_support);
  kv["train.n_query"] = std::to_string(cfg.trainer.n_query);
  kv["train.max_episodes"] = std::to_string(cfg.trainer.max_episodes);
  kv["train.val_interval"] = std::to_string(cfg.trainer.val_interval);
  kv["train.patience"] = std::to_string(cfg.trainer.patience);
  kv["train.val_episodes"] = std::to_string(cfg.trainer.val_episodes);
  kv["train.batch"] = std::to_string(cfg.trainer.batch);
  kv["train.learning_rate"] = format_double(cfg.trainer.learning_rate);
  kv["eval.n_support"] = std::to_string(cfg.eval.n_support);
  kv["eval.n_repeats"] = std::to_string(cfg.eval.n_repeats);
  kv["methods"] = join_list(cfg.methods);
  kv["ft.epochs"] = std::to_string(cfg.ft_epochs);
  kv["ft.lr"] = format_double(cfg.ft_lr);
  return kv;
}

std::uint64_t config_hash(const std::map<std::string, std::string>& resolved) {
  std::string text;
  for (const auto& [k, v] : resolved) text += k + "=" + v + "\n";
  return expt::fnv1a(text);
}

// ---- manifest: one JSON file per run, everything needed to re-run it ----

struct RunContext {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> resolved;
  json dataset;  // {"path":..., "fnv1a":...} or {"source":"synthetic"}
  std::vector<std::string> outputs;
};

void write_manifest(const RunContext& ctx, const std::string& out_prefix) {
  json j;
  j["format"] = "metagp-manifest";
  j["version"] = 1;
  j["code_version"] = kCodeVersion;
  j["command"] = ctx.command;
  j["seed"] = ctx.seed;
  j["config"] = ctx.resolved;
  j["config_fnv1a"] = config_hash(ctx.resolved);
  j["dataset"] = ctx.dataset;
  j["outputs"] = ctx.outputs;
  const std::string path = out_prefix + ".manifest.json";
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
  std::cout << "manifest " << path << "\n";
}

// ---- shared data plumbing ----

struct PreparedData {
  data::DatasetCollection train;       // offline-normalized
  data::DatasetCollection validation;  // offline-normalized
  data::DatasetCollection target_raw;
  json dataset_note;
};

data::DatasetCollection load_or_generate(const expt::ExperimentConfig& cfg,
                                         const std::string& data_path, std::uint64_t seed,
                                         json* note) {
  if (data_path.empty()) {
    data::SyntheticConfig sc = cfg.synthetic;
    sc.seed = seed;
    if (note) *note = {{"source", "synthetic"}, {"seed", seed}};
    return data::generate_synthetic(sc);
  }
  if (note) *note = {{"path", data_path}, {"fnv1a", expt::file_fnv1a(data_path)}};
  return data::load_csv(data_path);
}

PreparedData prepare(const expt::ExperimentConfig& cfg, const std::string& data_path,
                     std::uint64_t seed) {
  PreparedData p;
  const data::DatasetCollection raw = load_or_generate(cfg, data_path, seed, &p.dataset_note);
  data::SplitResult sr = data::split(raw, cfg.region_split, cfg.attribute_split, seed);
  p.train = data::normalize(sr.train, data::NormPolicy::kOffline);
  p.validation = data::normalize(sr.validation, data::NormPolicy::kOffline);
  p.target_raw = std::move(sr.target);
  return p;
}

// ---- subcommands ----

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string out;
  std::string data_path;  // empty: synthetic per config
};

void add_common(CLI::App* sub, Common& c, bool with_data = true) {
  sub->add_option("--config", c.config_path, "key = value config file");
  sub->add_option("--set", c.sets, "override one config key, e.g. --set train.batch=4");
  sub->add_option("--seed", c.seed, "run seed (data split, episodes, evaluation draws)");
  sub->add_option("--out", c.out, "output path prefix")->required();
  if (with_data) {
    sub->add_option("--data", c.data_path,
                    "dataset CSV; omitted: generate the synthetic benchmark");
  }
}

expt::ExperimentConfig config_of(const Common& c) {
  std::map<std::string, std::string> kv;
  if (!c.config_path.empty()) kv = parse_config_file(c.config_path);
  apply_overrides(kv, c.sets);
  return build_config(kv);
}

void cmd_generate(const Common& c) {
  const expt::ExperimentConfig cfg = config_of(c);
  data::SyntheticConfig sc = cfg.synthetic;
  sc.seed = c.seed;
  const data::DatasetCollection collection = data::generate_synthetic(sc);
  data::save_csv(collection, c.out);
  std::cout << "wrote " << collection.tasks.size() << " tasks ("
            << collection.region_ids().size() << " regions x "
            << collection.attribute_ids().size() << " attributes) to " << c.out << "\n";

  RunContext ctx{"generate-data", c.seed, resolved_config(cfg),
                 json{{"path", c.out}, {"fnv1a", expt::file_fnv1a(c.out)}},
                 {c.out}};
  write_manifest(ctx, c.out);
}

void cmd_train(const Common& c) {
  expt::ExperimentConfig cfg = config_of(c);
  PreparedData p = prepare(cfg, c.data_path, c.seed);
  cfg.hyper.aux_dims = p.train.aux_dims;

  // Target-task normalization records ride along in every checkpoint so
  // downstream prediction can de-normalize without the original data files.
  const data::DatasetCollection target_n =
      data::normalize(p.target_raw, data::NormPolicy::kSupportOnly);
  std::vector<ckpt::NormEntry> entries;
  for (const data::TaskDataset& t : target_n.tasks) {
    entries.push_back({t.region_id, t.attribute_id, t.norm});
  }

  train::TrainConfig tc = cfg.trainer;
  tc.seed = c.seed;

  RunContext ctx{"train", c.seed, resolved_config(cfg), p.dataset_note, {}};
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    const std::string& name = cfg.methods[i];
    std::unique_ptr<metagp::EpisodicModel> model =
        expt::make_method(cfg, name, c.seed * 131 + i + 1);
    const train::TrainResult result = train::train(*model, tc, p.train, p.validation);

    const std::string log_path = c.out + "." + name + ".train.csv";
    train::save_train_log(result, log_path);
    ckpt::Checkpoint ck = ckpt::snapshot(*model);
    ck.norm_records = entries;
    const std::string ck_path = c.out + "." + name + ".ckpt.json";
    ckpt::save_checkpoint(ck, ck_path);

    std::cout << name << ": best val loss " << result.best_val_loss << " at episode "
              << result.best_episode << " (" << result.episodes_run << " episodes"
              << (result.early_stopped ? ", early stop" : "") << ") -> " << ck_path << "\n";
    ctx.outputs.push_back(ck_path);
    ctx.outputs.push_back(log_path);
  }
  write_manifest(ctx, c.out);
}

void cmd_evaluate(const Common& c, const std::vector<std::string>& checkpoint_paths) {
  const expt::ExperimentConfig cfg = config_of(c);
  PreparedData p = prepare(cfg, c.data_path, c.seed);

  std::vector<std::unique_ptr<metagp::EpisodicModel>> owned;
  std::vector<std::pair<std::string, metagp::EpisodicModel*>> models;
  for (const std::string& path : checkpoint_paths) {
    const ckpt::Checkpoint ck = ckpt::load_checkpoint(path);
    owned.push_back(ckpt::make_model(ck));
    std::string name = ck.kind;
    for (const auto& [existing, ptr] : models) {
      if (existing == name) name += "+";  // two checkpoints of the same kind
    }
    models.emplace_back(name, owned.back().get());
  }

  expt::EvalConfig ec = cfg.eval;
  ec.seed = c.seed;
  const expt::EvalReport report = expt::evaluate(models, p.target_raw, ec);

  const std::string table_path = c.out + ".eval.csv";
  expt::save_eval_report(report, table_path);
  for (const expt::MethodSummary& s : report.summary) {
    std::cout << s.method << ": mse " << s.mean_mse << " +/- " << s.se_mse << ", log lik "
              << s.mean_log_lik << " +/- " << s.se_log_lik
              << (s.method == report.best_method
                      ? "  (best)"
                      : (s.significant_5pct ? "  (worse, p<0.05)" : ""))
              << "\n";
  }

  RunContext ctx{"evaluate", c.seed, resolved_config(cfg), p.dataset_note,
                 {table_path, table_path + ".raw.csv"}};
  write_manifest(ctx, c.out);
}

void cmd_sweep(const Common& c, const std::string& axis, const std::vector<double>& values,
               std::vector<std::uint64_t> seeds) {
  const expt::ExperimentConfig cfg = config_of(c);
  if (!c.data_path.empty()) {
    throw ConfigError("sweep runs on the synthetic benchmark; --data is not supported");
  }
  if (seeds.empty()) seeds = {c.seed};
  const std::vector<expt::SweepRow> rows = expt::sweep(cfg, axis, values, seeds);
  const std::string table_path = c.out + ".sweep.csv";
  expt::save_sweep(rows, table_path);
  for (const expt::SweepRow& r : rows) {
    std::cout << r.axis << "=" << r.value << " " << r.method << ": mse " << r.mean_mse
              << " +/- " << r.se_mse << "\n";
  }

  RunContext ctx{"sweep", c.seed, resolved_config(cfg),
                 json{{"source", "synthetic"}, {"seeds", seeds}}, {table_path}};
  ctx.resolved["sweep.axis"] = axis;
  write_manifest(ctx, c.out);
}

void cmd_ablate(const Common& c, std::vector<std::string> variants,
                std::vector<std::uint64_t> seeds) {
  const expt::ExperimentConfig cfg = config_of(c);
  if (!c.data_path.empty()) {
    throw ConfigError("ablate runs on the synthetic benchmark; --data is not supported");
  }
  if (variants.empty()) {
    variants = {"ErrObj", "LikeObj", "MarLikeObj", "NoSptMean", "ZeroMean"};
  }
  if (seeds.empty()) seeds = {c.seed};
  const std::vector<expt::AblationRow> rows = expt::ablate(cfg, variants, seeds);
  const std::string table_path = c.out + ".ablation.csv";
  expt::save_ablation(rows, table_path);
  for (const expt::AblationRow& r : rows) {
    std::cout << r.variant << ": mse " << r.mean_mse << " +/- " << r.se_mse << ", log lik "
              << r.mean_log_lik << " +/- " << r.se_log_lik << "\n";
  }

  RunContext ctx{"ablate", c.seed, resolved_config(cfg),
                 json{{"source", "synthetic"}, {"seeds", seeds}}, {table_path}};
  write_manifest(ctx, c.out);
}

void cmd_predict_grid(const Common& c, const std::string& checkpoint_path,
                      const std::string& region, const std::string& attribute, int nx, int ny,
                      const std::vector<double>& box, const std::vector<double>& aux,
                      long n_support) {
  const expt::ExperimentConfig cfg = config_of(c);
  const ckpt::Checkpoint ck = ckpt::load_checkpoint(checkpoint_path);
  const std::unique_ptr<metagp::EpisodicModel> model = ckpt::make_model(ck);
  const data::NormRecord& record = ckpt::find_record(ck, region, attribute);

  json note;
  const data::DatasetCollection raw = load_or_generate(cfg, c.data_path, c.seed, &note);
  const data::TaskDataset* task = raw.find(region, attribute);
  if (task == nullptr) {
    throw ConfigError("task (" + region + ", " + attribute + ") not present in the dataset");
  }
  if (n_support < 1 || n_support > task->size()) {
    throw ConfigError("--n-support must be in [1, " + std::to_string(task->size()) + "]");
  }

  // Draw the observed support like an evaluation episode would.
  std::mt19937_64 rng(c.seed);
  std::vector<Eigen::Index> idx(task->size());
  for (Eigen::Index i = 0; i < task->size(); ++i) idx[i] = i;
  for (long i = 0; i < n_support; ++i) {
    // modulo keeps the draw identical across standard libraries
    std::swap(idx[i], idx[i + static_cast<Eigen::Index>(
                              rng() % static_cast<std::uint64_t>(task->size() - i))]);
  }
  gp::SupportSet support;
  support.locations = data::Matrix(n_support, task->locations.cols());
  support.values = data::Matrix(n_support, 1);
  for (long i = 0; i < n_support; ++i) {
    support.locations.row(i) = task->locations.row(idx[i]);
    support.values(i, 0) = task->values(idx[i], 0);
  }

  expt::GridSpec spec;
  spec.region_id = region;
  spec.nx = nx;
  spec.ny = ny;
  if (!box.empty()) {
    if (box.size() != 4) throw ConfigError("--box expects x1_lo x1_hi x2_lo x2_hi");
    spec.x1_lo = box[0];
    spec.x1_hi = box[1];
    spec.x2_lo = box[2];
    spec.x2_hi = box[3];
  }
  spec.aux = aux;

  const std::vector<expt::GridRow> rows = expt::predict_grid(*model, support, record, spec);
  const std::string table_path = c.out + ".grid.csv";
  expt::save_grid(rows, table_path);
  std::cout << "wrote " << rows.size() << " grid cells (" << nx << "x" << ny << ") for ("
            << region << ", " << attribute << ") to " << table_path << "\n";

  RunContext ctx{"predict-grid", c.seed, resolved_config(cfg), note, {table_path}};
  ctx.resolved["grid.checkpoint_fnv1a"] = std::to_string(expt::file_fnv1a(checkpoint_path));
  write_manifest(ctx, c.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot spatial regression experiments"};
  app.set_version_flag("--version", kCodeVersion);
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, sweep_c, grid_c, ablate_c;

  CLI::App* gen = app.add_subcommand("generate-data", "write a synthetic benchmark CSV");
  add_common(gen, gen_c, /*with_data=*/false);

  CLI::App* trn = app.add_subcommand("train", "episodic training; writes checkpoints + logs");
  add_common(trn, train_c);

  CLI::App* evl = app.add_subcommand("evaluate", "paired few-shot evaluation on target tasks");
  add_common(evl, eval_c);
  std::vector<std::string> eval_checkpoints;
  evl->add_option("--checkpoint", eval_checkpoints, "model checkpoint (repeatable)")
      ->required();

  CLI::App* swp = app.add_subcommand("sweep", "train/evaluate along one axis");
  add_common(swp, sweep_c, /*with_data=*/false);
  std::string sweep_axis;
  std::vector<double> sweep_values;
  std::vector<std::uint64_t> sweep_seeds;
  swp->add_option("--axis", sweep_axis,
                  "support_size | n_train_attributes | n_train_regions")
      ->required();
  swp->add_option("--values", sweep_values, "ascending axis values")->required();
  swp->add_option("--seeds", sweep_seeds, "seeds to average over (default: --seed)");

  CLI::App* abl = app.add_subcommand("ablate", "model-variant comparison table");
  add_common(abl, ablate_c, /*with_data=*/false);
  std::vector<std::string> ablate_variants;
  std::vector<std::uint64_t> ablate_seeds;
  abl->add_option("--variants", ablate_variants,
                  "subset of ErrObj LikeObj MarLikeObj NoSptMean ZeroMean (default: all)");
  abl->add_option("--seeds", ablate_seeds, "seeds to average over (default: --seed)");

  CLI::App* grd = app.add_subcommand("predict-grid", "export a predicted field as CSV");
  add_common(grd, grid_c);
  std::string grid_checkpoint, grid_region, grid_attribute;
  int grid_nx = 16, grid_ny = 16;
  std::vector<double> grid_box, grid_aux;
  long grid_n_support = 5;
  grd->add_option("--checkpoint", grid_checkpoint, "model checkpoint")->required();
  grd->add_option("--region", grid_region, "target region id")->required();
  grd->add_option("--attribute", grid_attribute, "target attribute id")->required();
  grd->add_option("--nx", grid_nx, "lattice resolution, x1 axis");
  grd->add_option("--ny", grid_ny, "lattice resolution, x2 axis");
  grd->add_option("--box", grid_box, "x1_lo x1_hi x2_lo x2_hi in normalized coordinates");
  grd->add_option("--aux", grid_aux, "constant auxiliary features (normalized units)");
  grd->add_option("--n-support", grid_n_support, "observed points to condition on");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) cmd_generate(gen_c);
    if (trn->parsed()) cmd_train(train_c);
    if (evl->parsed()) cmd_evaluate(eval_c, eval_checkpoints);
    if (swp->parsed()) cmd_sweep(sweep_c, sweep_axis, sweep_values, sweep_seeds);
    if (abl->parsed()) cmd_ablate(ablate_c, ablate_variants, ablate_seeds);
    if (grd->parsed()) {
      cmd_predict_grid(grid_c, grid_checkpoint, grid_region, grid_attribute, grid_nx, grid_ny,
                       grid_box, grid_aux, grid_n_support);
    }
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const metagp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
