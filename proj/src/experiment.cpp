#include "metagp/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "metagp/baselines.hpp"
#include "metagp/errors.hpp"

namespace metagp::expt {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
  constexpr double eps = 1e-14;
  constexpr double fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

// I_x(a, b), the regularized incomplete beta function.
double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

std::pair<double, double> mean_se(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

// Population mean/std of a column vector; zero spread falls back to std 1, the
// same convention the dataset normalizer uses.
std::pair<double, double> value_stats(const ad::Matrix& values) {
  const double mean = values.col(0).mean();
  double var = 0.0;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    var += (values(i, 0) - mean) * (values(i, 0) - mean);
  }
  var /= static_cast<double>(values.rows());
  const double std = std::sqrt(var);
  return {mean, std > 0.0 ? std : 1.0};
}

std::vector<Eigen::Index> draw_support_rows(Eigen::Index n, Eigen::Index n_support,
                                            std::mt19937_64& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_support); ++i) {
    std::swap(idx[i], idx[i + rng() % (idx.size() - i)]);
  }
  idx.resize(static_cast<std::size_t>(n_support));
  return idx;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct TrainedMethods {
  std::vector<std::unique_ptr<EpisodicModel>> owned;
  std::vector<std::pair<std::string, EpisodicModel*>> models;
  std::vector<double> train_ms;
};

TrainedMethods train_methods(const ExperimentConfig& config,
                             const std::vector<std::string>& methods, const SeedData& data,
                             std::uint64_t seed) {
  TrainedMethods out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    std::unique_ptr<EpisodicModel> model =
        make_method(config, methods[i], seed * 131 + i + 1);
    train::TrainConfig tc = config.trainer;
    tc.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    train::train(*model, tc, data.train, data.validation);
    out.train_ms.push_back(elapsed_ms(t0));
    out.models.emplace_back(methods[i], model.get());
    out.owned.push_back(std::move(model));
  }
  return out;
}

void attach_train_times(EvalReport& report, const TrainedMethods& trained) {
  for (MethodSummary& s : report.summary) {
    for (std::size_t i = 0; i < trained.models.size(); ++i) {
      if (trained.models[i].first == s.method) s.train_ms = trained.train_ms[i];
    }
  }
}

// Keeps the first k ids along one axis (first-appearance order) and drops the
// other tasks.
data::DatasetCollection restrict_train(const data::DatasetCollection& collection,
                                       const std::string& axis, long k) {
  const bool by_attribute = axis == "n_train_attributes";
  std::vector<std::string> ids =
      by_attribute ? collection.attribute_ids() : collection.region_ids();
  if (k < 1 || static_cast<std::size_t>(k) > ids.size()) {
    throw ConfigError(axis + "=" + std::to_string(k) + " is infeasible: training split has " +
                      std::to_string(ids.size()));
  }
  ids.resize(static_cast<std::size_t>(k));
  const std::set<std::string> keep(ids.begin(), ids.end());
  data::DatasetCollection out;
  out.aux_dims = collection.aux_dims;
  for (const data::TaskDataset& task : collection.tasks) {
    if (keep.count(by_attribute ? task.attribute_id : task.region_id)) {
      out.tasks.push_back(task);
    }
  }
  return out;
}

long axis_count(const std::string& axis, double value) {
  if (!(value >= 1.0) || value != std::floor(value)) {
    throw ConfigError(axis + " values must be positive integers, got " +
                      format_double(value));
  }
  return static_cast<long>(value);
}

struct VariantSpec {
  gp::Objective objective;
  gp::AblationMode mode;
};

const std::map<std::string, VariantSpec>& variant_table() {
  static const std::map<std::string, VariantSpec> table = {
      {"ErrObj", {gp::Objective::kErr, gp::AblationMode::kFull}},
      {"LikeObj", {gp::Objective::kLike, gp::AblationMode::kFull}},
      {"MarLikeObj", {gp::Objective::kMarLike, gp::AblationMode::kFull}},
      {"NoSptMean", {gp::Objective::kErr, gp::AblationMode::kNoSptMean}},
      {"ZeroMean", {gp::Objective::kErr, gp::AblationMode::kZeroMean}},
  };
  return table;
}

}  // namespace

double student_t_two_sided_p(double t, long dof) {
  if (dof < 1) throw ConfigError("t-test needs at least 1 degree of freedom");
  if (!std::isfinite(t)) return 0.0;
  const double nu = static_cast<double>(dof);
  return reg_inc_beta(0.5 * nu, 0.5, nu / (nu + t * t));
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ConfigError("paired t-test needs matched samples, got " + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw ConfigError("paired t-test needs at least 2 pairs");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  const auto [mean, se] = mean_se(diff);

  PairedTest result;
  result.n = static_cast<long>(a.size());
  if (se == 0.0) {
    result.t = 0.0;
    result.p = mean == 0.0 ? 1.0 : 0.0;
  } else {
    result.t = mean / se;
    result.p = student_t_two_sided_p(result.t, result.n - 1);
  }
  result.significant_5pct = result.p < 0.05;
  return result;
}

EvalReport evaluate(const std::vector<std::pair<std::string, EpisodicModel*>>& models,
                    const data::DatasetCollection& target_raw, const EvalConfig& config) {
  if (models.empty()) throw ConfigError("evaluate needs at least one model");
  if (target_raw.tasks.empty()) throw ConfigError("target collection is empty");
  if (config.n_repeats < 1) throw ConfigError("n_repeats must be >= 1");
  for (const data::TaskDataset& task : target_raw.tasks) {
    if (task.normalized) {
      throw ConfigError("evaluate expects raw target tasks; (" + task.region_id + ", " +
                        task.attribute_id + ") is already normalized");
    }
    if (task.size() <= config.n_support) {
      throw ConfigError("target task (" + task.region_id + ", " + task.attribute_id +
                        ") has " + std::to_string(task.size()) +
                        " points; evaluation needs more than N_S=" +
                        std::to_string(config.n_support));
    }
  }

  // Models see support-only units; metrics use per-task offline statistics.
  const data::DatasetCollection normed =
      data::normalize(target_raw, data::NormPolicy::kSupportOnly);
  std::vector<std::pair<double, double>> offline_stats;
  for (const data::TaskDataset& task : target_raw.tasks) {
    offline_stats.push_back(value_stats(task.values));
  }

  std::mt19937_64 rng(config.seed);
  EvalReport report;
  std::vector<std::vector<double>> mse_by_method(models.size());
  std::vector<std::vector<double>> loglik_by_method(models.size());
  std::vector<double> predict_ms(models.size(), 0.0);

  for (std::size_t ti = 0; ti < normed.tasks.size(); ++ti) {
    const data::TaskDataset& task = normed.tasks[ti];
    const data::TaskDataset& raw = target_raw.tasks[ti];
    // offsets cancel in the error, so only the offline scale matters
    const double sigma_t = offline_stats[ti].second;

    for (int repeat = 0; repeat < config.n_repeats; ++repeat) {
      const std::vector<Eigen::Index> support_rows =
          draw_support_rows(task.size(), config.n_support, rng);
      std::vector<bool> is_support(static_cast<std::size_t>(task.size()), false);
      for (Eigen::Index r : support_rows) is_support[static_cast<std::size_t>(r)] = true;

      ad::Matrix support_raw_y(config.n_support, 1);
      gp::SupportSet view;
      view.locations = ad::Matrix(config.n_support, task.locations.cols());
      for (Eigen::Index i = 0; i < config.n_support; ++i) {
        view.locations.row(i) = task.locations.row(support_rows[static_cast<std::size_t>(i)]);
        support_raw_y(i, 0) = raw.values(support_rows[static_cast<std::size_t>(i)], 0);
      }
      const data::NormRecord rec = data::with_support_value_stats(task.norm, support_raw_y);
      view.values = ad::Matrix(config.n_support, 1);
      for (Eigen::Index i = 0; i < config.n_support; ++i) {
        view.values(i, 0) = data::normalize_value(support_raw_y(i, 0), rec);
      }

      const Eigen::Index n_query = task.size() - config.n_support;
      ad::Matrix query_x(n_query, task.locations.cols());
      ad::Matrix query_raw_y(n_query, 1);
      Eigen::Index q = 0;
      for (Eigen::Index r = 0; r < task.size(); ++r) {
        if (is_support[static_cast<std::size_t>(r)]) continue;
        query_x.row(q) = task.locations.row(r);
        query_raw_y(q, 0) = raw.values(r, 0);
        ++q;
      }

      for (std::size_t mi = 0; mi < models.size(); ++mi) {
        const auto t0 = std::chrono::steady_clock::now();
        ad::Matrix mean_n, var_n;
        models[mi].second->predict(view, query_x, &mean_n, &var_n);
        predict_ms[mi] += elapsed_ms(t0);

        double mse = 0.0, log_lik = 0.0;
        for (Eigen::Index i = 0; i < n_query; ++i) {
          const double mean_raw = data::denormalize_value(mean_n(i, 0), rec);
          const double var_raw = data::denormalize_variance(var_n(i, 0), rec);
          const double err = (mean_raw - query_raw_y(i, 0)) / sigma_t;
          const double var_off = std::max(var_raw / (sigma_t * sigma_t), 1e-12);
          mse += err * err;
          log_lik +=
              -0.5 * std::log(2.0 * std::numbers::pi * var_off) - err * err / (2.0 * var_off);
        }
        mse /= static_cast<double>(n_query);
        log_lik /= static_cast<double>(n_query);

        EvalCell cell;
        cell.method = models[mi].first;
        cell.region_id = task.region_id;
        cell.attribute_id = task.attribute_id;
        cell.repeat = repeat;
        cell.mse = mse;
        cell.log_lik = log_lik;
        report.raw.push_back(cell);
        mse_by_method[mi].push_back(mse);
        loglik_by_method[mi].push_back(log_lik);
      }
    }
  }

  std::size_t best = 0;
  std::vector<std::pair<double, double>> mse_agg(models.size());
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    mse_agg[mi] = mean_se(mse_by_method[mi]);
    if (mse_agg[mi].first < mse_agg[best].first) best = mi;
  }
  report.best_method = models[best].first;

  const double n_regions = static_cast<double>(target_raw.region_ids().size());
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    MethodSummary s;
    s.method = models[mi].first;
    std::tie(s.mean_mse, s.se_mse) = mse_agg[mi];
    std::tie(s.mean_log_lik, s.se_log_lik) = mean_se(loglik_by_method[mi]);
    if (mi != best && mse_by_method[mi].size() >= 2) {
      const PairedTest test = paired_t_test(mse_by_method[mi], mse_by_method[best]);
      s.t_vs_best = test.t;
      s.p_vs_best = test.p;
      s.significant_5pct = test.significant_5pct;
    }
    s.test_ms_per_region = predict_ms[mi] / n_regions;
    report.summary.push_back(s);
  }
  return report;
}

void save_eval_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write evaluation report: " + path);
  out << "method,mean_mse,se_mse,mean_log_lik,se_log_lik,t_vs_best,p_vs_best,"
         "significant_5pct,best\n";
  for (const MethodSummary& s : report.summary) {
    out << s.method << ',' << format_double(s.mean_mse) << ',' << format_double(s.se_mse)
        << ',' << format_double(s.mean_log_lik) << ',' << format_double(s.se_log_lik) << ','
        << format_double(s.t_vs_best) << ',' << format_double(s.p_vs_best) << ','
        << (s.significant_5pct ? 1 : 0) << ',' << (s.method == report.best_method ? 1 : 0)
        << '\n';
  }

  std::ofstream raw(path + ".raw.csv");
  if (!raw) throw ConfigError("cannot write raw evaluation values: " + path + ".raw.csv");
  raw << "method,region_id,attribute_id,repeat,mse,log_lik\n";
  for (const EvalCell& c : report.raw) {
    raw << c.method << ',' << c.region_id << ',' << c.attribute_id << ',' << c.repeat << ','
        << format_double(c.mse) << ',' << format_double(c.log_lik) << '\n';
  }

  std::ofstream timing(path + ".timing.csv");
  if (!timing) throw ConfigError("cannot write timing sidecar: " + path + ".timing.csv");
  timing << "method,train_ms,test_ms_per_region\n";
  for (const MethodSummary& s : report.summary) {
    timing << s.method << ',' << format_double(s.train_ms) << ','
           << format_double(s.test_ms_per_region) << '\n';
  }
}

std::unique_ptr<EpisodicModel> make_method(const ExperimentConfig& config,
                                           const std::string& name, std::uint64_t seed) {
  const gp::ModelHyper& h = config.hyper;
  if (name == "ours") return std::make_unique<OursModel>(h, seed);
  if (name == "gpr") return std::make_unique<bl::GprModel>();
  if (name == "np") {
    const bool head = config.trainer.objective == gp::Objective::kLike;
    return std::make_unique<bl::NpModel>(
        bl::init_np(h.aux_dims, h.latent_k, h.width, h.dropout, head, seed));
  }
  if (name == "nn") {
    return std::make_unique<bl::NnModel>(bl::init_nn(h.aux_dims, h.width, h.dropout, seed));
  }
  if (name == "ft") {
    return std::make_unique<bl::FtModel>(bl::init_nn(h.aux_dims, h.width, h.dropout, seed),
                                         config.ft_epochs, config.ft_lr);
  }
  throw ConfigError("unknown method: " + name);
}

SeedData make_seed_data(const ExperimentConfig& config, std::uint64_t seed) {
  data::SyntheticConfig sc = config.synthetic;
  sc.seed = seed;
  const data::SplitResult split = data::split(data::generate_synthetic(sc),
                                              config.region_split, config.attribute_split,
                                              seed);
  SeedData d;
  d.train = data::normalize(split.train, data::NormPolicy::kOffline);
  d.validation = data::normalize(split.validation, data::NormPolicy::kOffline);
  d.target_raw = split.target;
  return d;
}

EvalReport run_cell(const ExperimentConfig& config, const std::vector<std::string>& methods,
                    std::uint64_t seed) {
  const SeedData data = make_seed_data(config, seed);
  TrainedMethods trained = train_methods(config, methods, data, seed);
  EvalConfig ec = config.eval;
  ec.seed = seed;
  EvalReport report = evaluate(trained.models, data.target_raw, ec);
  attach_train_times(report, trained);
  return report;
}

std::vector<SweepRow> sweep(const ExperimentConfig& config, const std::string& axis,
                            const std::vector<double>& values,
                            const std::vector<std::uint64_t>& seeds) {
  if (axis != "support_size" && axis != "n_train_attributes" && axis != "n_train_regions") {
    throw ConfigError("unknown sweep axis: " + axis);
  }
  if (values.empty() || seeds.empty()) throw ConfigError("sweep needs values and seeds");
  if (!std::is_sorted(values.begin(), values.end()) ||
      std::adjacent_find(values.begin(), values.end()) != values.end()) {
    throw ConfigError("sweep values must be strictly ascending");
  }

  const std::vector<std::string>& methods = config.methods;
  // per (value, method): one mean MSE per seed
  std::vector<std::vector<std::vector<double>>> cells(
      values.size(), std::vector<std::vector<double>>(methods.size()));

  for (std::uint64_t seed : seeds) {
    if (axis == "support_size") {
      const SeedData data = make_seed_data(config, seed);
      const TrainedMethods trained = train_methods(config, methods, data, seed);
      for (std::size_t vi = 0; vi < values.size(); ++vi) {
        EvalConfig ec = config.eval;
        ec.n_support = axis_count(axis, values[vi]);
        ec.seed = seed;
        const EvalReport report = evaluate(trained.models, data.target_raw, ec);
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
          cells[vi][mi].push_back(report.summary[mi].mean_mse);
        }
      }
    } else {
      for (std::size_t vi = 0; vi < values.size(); ++vi) {
        SeedData data = make_seed_data(config, seed);
        data.train = restrict_train(data.train, axis, axis_count(axis, values[vi]));
        const TrainedMethods trained = train_methods(config, methods, data, seed);
        EvalConfig ec = config.eval;
        ec.seed = seed;
        const EvalReport report = evaluate(trained.models, data.target_raw, ec);
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
          cells[vi][mi].push_back(report.summary[mi].mean_mse);
        }
      }
    }
  }

  std::vector<SweepRow> rows;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      SweepRow row;
      row.axis = axis;
      row.value = values[vi];
      row.method = methods[mi];
      std::tie(row.mean_mse, row.se_mse) = mean_se(cells[vi][mi]);
      row.n_seeds = static_cast<int>(seeds.size());
      rows.push_back(row);
    }
  }
  return rows;
}

void save_sweep(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write sweep table: " + path);
  out << "axis,value,method,mean_mse,se_mse,n_seeds\n";
  for (const SweepRow& r : rows) {
    out << r.axis << ',' << format_double(r.value) << ',' << r.method << ','
        << format_double(r.mean_mse) << ',' << format_double(r.se_mse) << ',' << r.n_seeds
        << '\n';
  }
}

std::vector<AblationRow> ablate(const ExperimentConfig& config,
                                const std::vector<std::string>& variants,
                                const std::vector<std::uint64_t>& seeds) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablate needs variants and seeds");
  for (const std::string& v : variants) {
    if (!variant_table().count(v)) throw ConfigError("unknown ablation variant: " + v);
  }

  std::vector<std::vector<double>> mse(variants.size()), log_lik(variants.size());
  for (std::uint64_t seed : seeds) {
    const SeedData data = make_seed_data(config, seed);
    std::vector<std::unique_ptr<EpisodicModel>> owned;
    std::vector<std::pair<std::string, EpisodicModel*>> models;
    for (std::size_t i = 0; i < variants.size(); ++i) {
      const VariantSpec& spec = variant_table().at(variants[i]);
      gp::ModelHyper h = config.hyper;
      h.mode = spec.mode;
      auto model = std::make_unique<OursModel>(h, seed * 131 + i + 1);
      train::TrainConfig tc = config.trainer;
      tc.objective = spec.objective;
      tc.seed = seed;
      train::train(*model, tc, data.train, data.validation);
      models.emplace_back(variants[i], model.get());
      owned.push_back(std::move(model));
    }
    EvalConfig ec = config.eval;
    ec.seed = seed;
    const EvalReport report = evaluate(models, data.target_raw, ec);
    for (std::size_t i = 0; i < variants.size(); ++i) {
      mse[i].push_back(report.summary[i].mean_mse);
      log_lik[i].push_back(report.summary[i].mean_log_lik);
    }
  }

  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    AblationRow row;
    row.variant = variants[i];
    std::tie(row.mean_mse, row.se_mse) = mean_se(mse[i]);
    std::tie(row.mean_log_lik, row.se_log_lik) = mean_se(log_lik[i]);
    row.n_seeds = static_cast<int>(seeds.size());
    rows.push_back(row);
  }
  return rows;
}

void save_ablation(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write ablation table: " + path);
  out << "variant,mean_mse,se_mse,mean_log_lik,se_log_lik,n_seeds\n";
  for (const AblationRow& r : rows) {
    out << r.variant << ',' << format_double(r.mean_mse) << ',' << format_double(r.se_mse)
        << ',' << format_double(r.mean_log_lik) << ',' << format_double(r.se_log_lik) << ','
        << r.n_seeds << '\n';
  }
}

void GridSpec::validate(int aux_dims) const {
  if (nx < 2 || ny < 2) {
    throw ConfigError("grid resolution must be >= 2 per axis, got " + std::to_string(nx) +
                      "x" + std::to_string(ny));
  }
  if (!(x1_lo < x1_hi) || !(x2_lo < x2_hi)) {
    throw ConfigError("grid bounding box is degenerate");
  }
  if (static_cast<int>(aux.size()) != aux_dims) {
    throw ConfigError("grid auxiliary plane has " + std::to_string(aux.size()) +
                      " features, dataset has " + std::to_string(aux_dims));
  }
}

std::vector<GridRow> predict_grid(EpisodicModel& model, const gp::SupportSet& support_raw,
                                  const data::NormRecord& record, const GridSpec& spec) {
  support_raw.validate();
  spec.validate(static_cast<int>(record.loc_mean.size()) - 2);

  const data::NormRecord rec =
      record.y_normalized ? record
                          : data::with_support_value_stats(record, support_raw.values);
  gp::SupportSet view;
  view.locations = data::normalize_locations(support_raw.locations, rec);
  view.values = ad::Matrix(support_raw.size(), 1);
  for (Eigen::Index i = 0; i < support_raw.size(); ++i) {
    view.values(i, 0) = data::normalize_value(support_raw.values(i, 0), rec);
  }

  const Eigen::Index cells = static_cast<Eigen::Index>(spec.nx) * spec.ny;
  ad::Matrix lattice(cells, 2 + static_cast<Eigen::Index>(spec.aux.size()));
  for (int iy = 0; iy < spec.ny; ++iy) {
    for (int ix = 0; ix < spec.nx; ++ix) {
      const Eigen::Index row = static_cast<Eigen::Index>(iy) * spec.nx + ix;
      lattice(row, 0) = spec.x1_lo + (spec.x1_hi - spec.x1_lo) * ix / (spec.nx - 1);
      lattice(row, 1) = spec.x2_lo + (spec.x2_hi - spec.x2_lo) * iy / (spec.ny - 1);
      for (std::size_t a = 0; a < spec.aux.size(); ++a) {
        lattice(row, 2 + static_cast<Eigen::Index>(a)) = spec.aux[a];
      }
    }
  }

  ad::Matrix mean_n, var_n;
  model.predict(view, lattice, &mean_n, &var_n);

  std::vector<GridRow> rows(static_cast<std::size_t>(cells));
  for (Eigen::Index i = 0; i < cells; ++i) {
    GridRow& r = rows[static_cast<std::size_t>(i)];
    r.x1 = lattice(i, 0) * rec.loc_std[0] + rec.loc_mean[0];
    r.x2 = lattice(i, 1) * rec.loc_std[1] + rec.loc_mean[1];
    r.mean = data::denormalize_value(mean_n(i, 0), rec);
    r.variance = data::denormalize_variance(var_n(i, 0), rec);
    for (Eigen::Index s = 0; s < view.locations.rows(); ++s) {
      if (view.locations(s, 0) == lattice(i, 0) && view.locations(s, 1) == lattice(i, 1)) {
        r.support = true;
      }
    }
  }
  return rows;
}

void save_grid(const std::vector<GridRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write grid predictions: " + path);
  out << "x1,x2,predicted_mean,predicted_variance,support\n";
  for (const GridRow& r : rows) {
    out << format_double(r.x1) << ',' << format_double(r.x2) << ',' << format_double(r.mean)
        << ',' << format_double(r.variance) << ',' << (r.support ? 1 : 0) << '\n';
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t hash = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= 1099511628211ull;
  }
  return hash;
}

std::uint64_t file_fnv1a(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot hash file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}

}  // namespace metagp::expt
