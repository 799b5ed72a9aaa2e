#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metagp/tape.hpp"

namespace metagp::data {

using ad::Matrix;

// Per-column statistics used to normalize a task and to invert that
// normalization on predictions. Under the support-only policy the value
// statistics are filled in per episode (y_normalized stays false until then).
struct NormRecord {
  std::vector<double> loc_mean;  // size M+2
  std::vector<double> loc_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  bool y_normalized = false;
  bool degenerate = false;  // a zero-variance column had its std forced to 1
};

// Observations of one attribute in one region.
struct TaskDataset {
  std::string region_id;
  std::string attribute_id;
  Matrix locations;  // N x (M+2): x1, x2, aux...
  Matrix values;     // N x 1
  bool normalized = false;
  NormRecord norm;

  Eigen::Index size() const { return locations.rows(); }
};

struct DatasetCollection {
  int aux_dims = 0;  // M
  std::vector<TaskDataset> tasks;

  // Unique ids in first-appearance order (stable across loads of the same file).
  std::vector<std::string> region_ids() const;
  std::vector<std::string> attribute_ids() const;
  std::vector<const TaskDataset*> tasks_in_region(const std::string& region_id) const;
  const TaskDataset* find(const std::string& region_id,
                          const std::string& attribute_id) const;  // null if absent
  Eigen::Index min_task_size() const;                              // 0 when empty
};

// CSV schema: header `region_id,attribute_id,x1,x2,aux_1..aux_M,y`, one
// observation per row. Errors carry the 1-based file line.
DatasetCollection load_csv(const std::string& path);
void save_csv(const DatasetCollection& collection, const std::string& path);

// Offline: per-task statistics over all points (training/validation tasks).
// Support-only: location statistics pooled over the region's observed grid,
// value statistics deferred to the episode's support set (meta-test).
enum class NormPolicy { kOffline, kSupportOnly };

DatasetCollection normalize(const DatasetCollection& collection, NormPolicy policy);

// Fills the value statistics of `base` from a support sample (population std,
// forced to 1 when degenerate). Used with the support-only policy.
NormRecord with_support_value_stats(NormRecord base, const Matrix& support_values);

double normalize_value(double raw, const NormRecord& record);
double denormalize_value(double normalized, const NormRecord& record);
// Variance transforms with the square of the value scale.
double denormalize_variance(double normalized_var, const NormRecord& record);
Matrix normalize_locations(const Matrix& raw, const NormRecord& record);

// Normalization-record sidecar: JSON mapping (region, attribute) -> stats.
void save_norm_records(const DatasetCollection& collection, const std::string& path);
void load_norm_records(DatasetCollection& collection, const std::string& path);

struct SplitFractions {
  double train = 0.0;
  double validation = 0.0;
  double target = 0.0;
};

struct SplitResult {
  DatasetCollection train;
  DatasetCollection validation;
  DatasetCollection target;
};

// Shuffles regions and attributes by seed and partitions both axes: counts are
// floor(n * fraction) for validation and target, remainder to training. The
// target collection holds only (target region, target attribute) tasks, so the
// disjointness requirement holds by construction.
SplitResult split(const DatasetCollection& collection, const SplitFractions& regions,
                  const SplitFractions& attributes, std::uint64_t seed);

// Synthetic benchmark: per (region, attribute) task, a Gaussian random field on
// a G x G grid over [-1, 1]^2 with covariance a^2 exp(-|u-u'|^2 / (2 l^2)),
// plus a linear + sinusoidal mean trend and i.i.d. observation noise. All
// parameters are re-drawn per task from the configured ranges. Default ranges
// keep the trend term dominant over the stationary field so that knowing the
// task (not just the geometry) is what pays off at small support sizes.
struct SyntheticConfig {
  int regions = 60;     // 40 / 8 / 12 after the default split
  int attributes = 9;   // 6 / 2 / 1 after the default split
  int grid = 16;        // G: points per axis
  int grid_cap = 16;    // dense G^2 x G^2 Cholesky cap
  double len_lo = 0.1, len_hi = 0.6;          // length scale, log-uniform
  double amp_lo = 0.3, amp_hi = 0.8;          // field amplitude a
  double lin_lo = -1.5, lin_hi = 1.5;         // linear trend coefficients
  double sin_amp_lo = 0.5, sin_amp_hi = 1.5;  // sinusoid amplitude
  double sin_freq_lo = 0.5, sin_freq_hi = 2.0;  // sinusoid frequency
  double noise_lo = 0.01, noise_hi = 0.1;     // observation noise std
  std::uint64_t seed = 0;

  void validate() const;  // positive counts, ordered ranges, grid <= cap
};

DatasetCollection generate_synthetic(const SyntheticConfig& config);

}  // namespace metagp::data
