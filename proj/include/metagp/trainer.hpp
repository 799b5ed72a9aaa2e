#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "metagp/dataset.hpp"
#include "metagp/episodic.hpp"

namespace metagp::train {

struct TrainConfig {
  Eigen::Index n_support = 5;
  Eigen::Index n_query = 64;
  gp::Objective objective = gp::Objective::kLike;
  long max_episodes = 5000;
  long val_interval = 50;   // episodes between validation checks
  long patience = 10;       // checks without improvement before stopping
  long val_episodes = 50;   // episodes averaged per check
  long batch = 1;           // episodes per gradient step (mean of gradients)
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  // n_support + n_query must fit in every training and validation task.
  void validate(const data::DatasetCollection& train_data,
                const data::DatasetCollection& validation_data) const;
};

// One row per validation check. train_loss is the mean episode loss since the
// previous check; val_loss is the training objective on fresh validation
// episodes and val_mse is the squared error on those same episodes (the early
// stopping decision uses val_loss, the MSE is recorded alongside).
struct TrainLogRow {
  long episode = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  // Per log row, wall time since training started. Measurement diagnostics:
  // saved to a sidecar, never part of the reproducible log.
  std::vector<double> wall_clock_ms;
  long best_episode = 0;
  double best_val_loss = 0.0;
  long episodes_run = 0;
  bool early_stopped = false;
};

// Uniformly picks a region, then an attribute observed in it, then a support
// set of n_support points without replacement and a query set of n_query from
// the remainder. Tasks with fewer than n_support + n_query points are skipped
// and redrawn; 100 consecutive skips raise ConfigError.
gp::Episode sample_episode(const data::DatasetCollection& datasets, std::mt19937_64& rng,
                           Eigen::Index n_support, Eigen::Index n_query);

// Mean loss over n_episodes fresh episodes, inference mode (no recording, no
// dropout).
double validate(EpisodicModel& model, const data::DatasetCollection& validation,
                long n_episodes, Eigen::Index n_support, Eigen::Index n_query,
                gp::Objective objective, std::mt19937_64& rng);

// Episodic loop: sample episode(s), backpropagate the configured objective,
// Adam-update the model parameters; every val_interval episodes run a
// validation check and snapshot the parameters when the loss improves. The
// model is left holding the best snapshot. Non-finite losses and factorization
// failures abort with the episode's region/attribute identifiers.
TrainResult train(EpisodicModel& model, const TrainConfig& config,
                  const data::DatasetCollection& train_data,
                  const data::DatasetCollection& validation_data);

// CSV `episode,train_loss,val_loss,val_mse` plus a `<path>.timing.csv` sidecar
// holding the wall-clock column, kept apart so the log itself is reproducible.
void save_train_log(const TrainResult& result, const std::string& path);

}  // namespace metagp::train
