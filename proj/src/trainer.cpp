#include "metagp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "metagp/adam.hpp"
#include "metagp/errors.hpp"

namespace metagp::train {

namespace {

// rng() % n is exact for the power-of-two counts here and off by < 2^-50
// otherwise; spelled out (rather than uniform_int_distribution) so the episode
// stream is pinned by this code alone, not by the standard library build.
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return rng() % n; }

// First n_take entries of a partial Fisher-Yates pass over [begin, idx.size()).
void draw_without_replacement(std::vector<Eigen::Index>& idx, std::size_t begin,
                              std::size_t n_take, std::mt19937_64& rng) {
  for (std::size_t i = begin; i < begin + n_take; ++i) {
    std::swap(idx[i], idx[i + pick(rng, idx.size() - i)]);
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double episode_loss_value(EpisodicModel& model, const gp::Episode& episode,
                          gp::Objective objective) {
  ad::Tape tape(false);
  return model.taped_loss(tape, episode, objective, false, nullptr).loss.scalar();
}

}  // namespace

void TrainConfig::validate(const data::DatasetCollection& train_data,
                           const data::DatasetCollection& validation_data) const {
  if (n_support < 1 || n_query < 1) {
    throw ConfigError("episode sizes must be positive (N_S=" + std::to_string(n_support) +
                      ", N_Q=" + std::to_string(n_query) + ")");
  }
  const Eigen::Index need = n_support + n_query;
  for (const data::DatasetCollection* c : {&train_data, &validation_data}) {
    if (c->tasks.empty()) throw ConfigError("training requires non-empty task collections");
    if (c->min_task_size() < need) {
      throw ConfigError("smallest task has " + std::to_string(c->min_task_size()) +
                        " points, episodes need N_S+N_Q=" + std::to_string(need));
    }
  }
  if (max_episodes < 1 || val_interval < 1 || val_episodes < 1 || batch < 1) {
    throw ConfigError("max_episodes, val_interval, val_episodes and batch must be >= 1");
  }
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

gp::Episode sample_episode(const data::DatasetCollection& datasets, std::mt19937_64& rng,
                           Eigen::Index n_support, Eigen::Index n_query) {
  if (datasets.tasks.empty()) throw ConfigError("cannot sample episodes: no tasks");
  const std::vector<std::string> regions = datasets.region_ids();
  const Eigen::Index need = n_support + n_query;

  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::string& region = regions[pick(rng, regions.size())];
    const std::vector<const data::TaskDataset*> in_region = datasets.tasks_in_region(region);
    const data::TaskDataset& task = *in_region[pick(rng, in_region.size())];
    if (task.size() < need) continue;  // too small; redraw the task

    std::vector<Eigen::Index> idx(static_cast<std::size_t>(task.size()));
    std::iota(idx.begin(), idx.end(), 0);
    draw_without_replacement(idx, 0, static_cast<std::size_t>(n_support), rng);
    draw_without_replacement(idx, static_cast<std::size_t>(n_support),
                             static_cast<std::size_t>(n_query), rng);

    gp::Episode ep;
    ep.region_id = task.region_id;
    ep.attribute_id = task.attribute_id;
    ep.support.locations = ad::Matrix(n_support, task.locations.cols());
    ep.support.values = ad::Matrix(n_support, 1);
    for (Eigen::Index i = 0; i < n_support; ++i) {
      ep.support.locations.row(i) = task.locations.row(idx[static_cast<std::size_t>(i)]);
      ep.support.values(i, 0) = task.values(idx[static_cast<std::size_t>(i)], 0);
    }
    ep.query_x = ad::Matrix(n_query, task.locations.cols());
    ep.query_y = ad::Matrix(n_query, 1);
    for (Eigen::Index i = 0; i < n_query; ++i) {
      const Eigen::Index row = idx[static_cast<std::size_t>(n_support + i)];
      ep.query_x.row(i) = task.locations.row(row);
      ep.query_y(i, 0) = task.values(row, 0);
    }
    return ep;
  }
  throw ConfigError("episode sampling failed 100 times in a row: no task with " +
                    std::to_string(need) + " points was drawn");
}

double validate(EpisodicModel& model, const data::DatasetCollection& validation,
                long n_episodes, Eigen::Index n_support, Eigen::Index n_query,
                gp::Objective objective, std::mt19937_64& rng) {
  double total = 0.0;
  for (long i = 0; i < n_episodes; ++i) {
    const gp::Episode ep = sample_episode(validation, rng, n_support, n_query);
    total += episode_loss_value(model, ep, objective);
  }
  return total / static_cast<double>(n_episodes);
}

TrainResult train(EpisodicModel& model, const TrainConfig& config,
                  const data::DatasetCollection& train_data,
                  const data::DatasetCollection& validation_data) {
  config.validate(train_data, validation_data);

  // Independent streams so e.g. turning dropout off cannot shift the episode
  // sequence.
  std::mt19937_64 seeder(config.seed);
  std::mt19937_64 episode_rng(seeder());
  std::mt19937_64 dropout_rng(seeder());
  const std::uint64_t val_seed = seeder();

  const std::vector<ad::Matrix*> params = model.parameters();
  nn::Adam optimizer({config.learning_rate});

  TrainResult result;
  std::vector<ad::Matrix> best;
  for (const ad::Matrix* p : params) best.push_back(*p);
  result.best_val_loss = std::numeric_limits<double>::infinity();

  const auto t0 = std::chrono::steady_clock::now();
  long checks_without_improvement = 0;
  long episodes_since_check = 0;
  double train_loss_sum = 0.0;
  long train_loss_count = 0;
  // Fresh validation episodes every check, all drawn from one dedicated stream.
  std::mt19937_64 val_rng(val_seed);

  long episode_count = 0;
  while (episode_count < config.max_episodes) {
    // One batched step: mean gradient over `batch` episodes at frozen params.
    std::vector<ad::Matrix> grad_sum;
    const long in_batch = std::min<long>(config.batch, config.max_episodes - episode_count);
    for (long b = 0; b < in_batch; ++b) {
      const gp::Episode ep =
          sample_episode(train_data, episode_rng, config.n_support, config.n_query);
      double loss_value = 0.0;
      try {
        ad::Tape tape;
        TapedLoss taped =
            model.taped_loss(tape, ep, config.objective, true, &dropout_rng);
        loss_value = taped.loss.scalar();
        if (!std::isfinite(loss_value)) {
          throw NumericalError("non-finite training loss " + format_double(loss_value));
        }
        ad::Gradients grads = ad::backward(taped.loss);
        if (grad_sum.empty()) {
          for (const ad::Var& leaf : taped.leaves) grad_sum.push_back(grads(leaf));
        } else {
          for (std::size_t i = 0; i < taped.leaves.size(); ++i) {
            grad_sum[i] += grads(taped.leaves[i]);
          }
        }
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at episode " +
                             std::to_string(episode_count + 1) + " (region " + ep.region_id +
                             ", attribute " + ep.attribute_id + ")");
      }
      train_loss_sum += loss_value;
      ++train_loss_count;
      ++episode_count;
    }
    if (in_batch > 1) {
      for (ad::Matrix& g : grad_sum) g /= static_cast<double>(in_batch);
    }
    optimizer.step(params, grad_sum);

    episodes_since_check += in_batch;
    if (episodes_since_check < config.val_interval && episode_count < config.max_episodes) {
      continue;
    }
    episodes_since_check = 0;

    // Validation check. The same fresh episodes are scored under the training
    // objective (the early-stop signal) and under squared error (recorded).
    const std::mt19937_64 val_state = val_rng;
    const double val_loss = validate(model, validation_data, config.val_episodes,
                                     config.n_support, config.n_query, config.objective,
                                     val_rng);
    double val_mse = val_loss;
    if (config.objective != gp::Objective::kErr) {
      std::mt19937_64 replay = val_state;
      val_mse = validate(model, validation_data, config.val_episodes, config.n_support,
                         config.n_query, gp::Objective::kErr, replay);
    }

    TrainLogRow row;
    row.episode = episode_count;
    row.train_loss = train_loss_sum / static_cast<double>(train_loss_count);
    row.val_loss = val_loss;
    row.val_mse = val_mse;
    result.log.push_back(row);
    result.wall_clock_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count());
    train_loss_sum = 0.0;
    train_loss_count = 0;

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_episode = episode_count;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = *params[i];
      checks_without_improvement = 0;
    } else {
      ++checks_without_improvement;
      if (checks_without_improvement > config.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
  result.episodes_run = episode_count;
  return result;
}

void save_train_log(const TrainResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write training log: " + path);
  out << "episode,train_loss,val_loss,val_mse\n";
  for (const TrainLogRow& row : result.log) {
    out << row.episode << ',' << format_double(row.train_loss) << ','
        << format_double(row.val_loss) << ',' << format_double(row.val_mse) << '\n';
  }
  std::ofstream timing(path + ".timing.csv");
  if (!timing) throw ConfigError("cannot write timing sidecar: " + path + ".timing.csv");
  timing << "episode,wall_clock_ms\n";
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    timing << result.log[i].episode << ',' << format_double(result.wall_clock_ms[i])
           << '\n';
  }
}

}  // namespace metagp::train
