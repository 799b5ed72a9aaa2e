#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metagp/dataset.hpp"
#include "metagp/episodic.hpp"
#include "metagp/trainer.hpp"

namespace metagp::expt {

// ---- paired statistics ----

// Two-sided p-value of a Student-t statistic with dof degrees of freedom,
// via the regularized incomplete beta function.
double student_t_two_sided_p(double t, long dof);

struct PairedTest {
  double t = 0.0;
  double p = 1.0;
  long n = 0;
  bool significant_5pct = false;
};

// Paired t-test on matched samples (n-1 degrees of freedom). Identical
// samples give t=0, p=1; a zero-variance nonzero difference gives p=0.
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// ---- target-task evaluation ----

struct EvalConfig {
  Eigen::Index n_support = 5;
  int n_repeats = 10;
  std::uint64_t seed = 0;
};

// One (method, task, repeat) measurement, in the task's offline-normalized
// units so values are comparable across tasks and methods.
struct EvalCell {
  std::string method;
  std::string region_id;
  std::string attribute_id;
  int repeat = 0;
  double mse = 0.0;
  double log_lik = 0.0;  // mean per-query Gaussian log density
};

struct MethodSummary {
  std::string method;
  double mean_mse = 0.0;
  double se_mse = 0.0;
  double mean_log_lik = 0.0;
  double se_log_lik = 0.0;
  // Paired t-test of this method's per-cell MSE against the best method's.
  double t_vs_best = 0.0;
  double p_vs_best = 1.0;
  bool significant_5pct = false;
  double train_ms = 0.0;            // filled by whoever trained the model
  double test_ms_per_region = 0.0;  // diagnostics, never in the result table
};

struct EvalReport {
  std::vector<EvalCell> raw;  // every aggregate is recomputable from these
  std::vector<MethodSummary> summary;
  std::string best_method;  // lowest mean MSE
};

// Few-shot evaluation over raw (unnormalized) target tasks. Per task and
// repeat, one support set of n_support points is drawn and shared by all
// methods (the t-tests are paired); the queries are all remaining points.
// Models see support-normalized values — locations scaled by the region's
// pooled statistics, values by the support sample's — while the reported
// metrics use the task's offline statistics, so a zero predictor scores an
// MSE near 1. Variances are floored at 1e-12 in the log density.
EvalReport evaluate(const std::vector<std::pair<std::string, EpisodicModel*>>& models,
                    const data::DatasetCollection& target_raw, const EvalConfig& config);

// Summary CSV at `path`, raw per-cell values at `<path>.raw.csv`, wall-clock
// diagnostics at `<path>.timing.csv` (kept apart: the first two are
// reproducible, timings are not).
void save_eval_report(const EvalReport& report, const std::string& path);

// ---- experiment orchestration (synthetic benchmark) ----

struct ExperimentConfig {
  data::SyntheticConfig synthetic;
  // Default 60 regions -> 40/8/12 and 9 attributes -> 6/2/1.
  data::SplitFractions region_split{0.666, 0.134, 0.2};
  data::SplitFractions attribute_split{0.665, 0.223, 0.112};
  gp::ModelHyper hyper;
  train::TrainConfig trainer;
  EvalConfig eval;
  std::vector<std::string> methods{"ours", "gpr", "np", "nn", "ft"};
  int ft_epochs = 100;
  double ft_lr = 1e-3;
};

// Fresh untrained model for a method name; ConfigError on unknown names.
std::unique_ptr<EpisodicModel> make_method(const ExperimentConfig& config,
                                           const std::string& name, std::uint64_t seed);

// Generate -> split -> normalize for one seed. Training and validation tasks
// are offline-normalized; the target collection stays raw for evaluate().
struct SeedData {
  data::DatasetCollection train;
  data::DatasetCollection validation;
  data::DatasetCollection target_raw;
};
SeedData make_seed_data(const ExperimentConfig& config, std::uint64_t seed);

// Trains every configured method on one seed's data and evaluates them
// paired. Model and episode seeds derive from `seed`.
EvalReport run_cell(const ExperimentConfig& config, const std::vector<std::string>& methods,
                    std::uint64_t seed);

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::string method;
  double mean_mse = 0.0;  // mean over seeds of per-seed mean MSE
  double se_mse = 0.0;    // standard error over seeds
  int n_seeds = 0;
};

// axis is one of support_size, n_train_attributes, n_train_regions; values
// must be ascending. support_size varies only the evaluation, so each seed
// trains once; the training-set axes retrain per value on a restricted
// collection (validation tasks are left untouched). Emits one row per
// (value, method).
std::vector<SweepRow> sweep(const ExperimentConfig& config, const std::string& axis,
                            const std::vector<double>& values,
                            const std::vector<std::uint64_t>& seeds);
void save_sweep(const std::vector<SweepRow>& rows, const std::string& path);

struct AblationRow {
  std::string variant;
  double mean_mse = 0.0;
  double se_mse = 0.0;
  double mean_log_lik = 0.0;
  double se_log_lik = 0.0;
  int n_seeds = 0;
};

// Variants: ErrObj, LikeObj, MarLikeObj (full model under each objective),
// NoSptMean, ZeroMean (mean-function ablations under the error objective).
// Each seed trains every requested variant and evaluates them paired.
std::vector<AblationRow> ablate(const ExperimentConfig& config,
                                const std::vector<std::string>& variants,
                                const std::vector<std::uint64_t>& seeds);
void save_ablation(const std::vector<AblationRow>& rows, const std::string& path);

// ---- grid prediction (field export) ----

struct GridSpec {
  std::string region_id;
  int nx = 2;  // resolution per axis
  int ny = 2;
  double x1_lo = -1.0, x1_hi = 1.0;  // bounding box, normalized coordinates
  double x2_lo = -1.0, x2_hi = 1.0;
  std::vector<double> aux;  // constant auxiliary plane (normalized units)

  void validate(int aux_dims) const;  // resolution >= 2, box non-degenerate
};

struct GridRow {
  double x1 = 0.0;  // raw units
  double x2 = 0.0;
  double mean = 0.0;      // raw attribute units
  double variance = 0.0;  // raw units squared
  bool support = false;   // lattice point coincides with a support location
};

// Predicts over the lattice and de-normalizes everything with `record`
// (value statistics completed from the support when the record has none).
// Support observations arrive in raw units. Rows run x1-fastest.
std::vector<GridRow> predict_grid(EpisodicModel& model, const gp::SupportSet& support_raw,
                                  const data::NormRecord& record, const GridSpec& spec);
void save_grid(const std::vector<GridRow>& rows, const std::string& path);

// ---- run manifests ----

std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t file_fnv1a(const std::string& path);  // ConfigError when unreadable

}  // namespace metagp::expt
