#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "metagp/baselines.hpp"
#include "metagp/errors.hpp"
#include "metagp/trainer.hpp"
#include "oracles.hpp"

using metagp::ConfigError;
using metagp::ad::Matrix;
namespace data = metagp::data;
namespace gp = metagp::gp;
namespace train = metagp::train;

namespace {

// A small synthetic collection: `regions` x `attributes` tasks on a g x g grid.
data::DatasetCollection make_tasks(int regions, int attributes, int g, std::uint64_t seed) {
  data::SyntheticConfig cfg;
  cfg.regions = regions;
  cfg.attributes = attributes;
  cfg.grid = g;
  cfg.grid_cap = g;
  cfg.seed = seed;
  return data::normalize(data::generate_synthetic(cfg), data::NormPolicy::kOffline);
}

// All values identically zero: a zero-prediction model then has loss exactly 0
// on every episode, which makes the validation curve perfectly flat.
data::DatasetCollection zero_tasks(int regions, int g, std::uint64_t seed) {
  data::SyntheticConfig cfg;
  cfg.regions = regions;
  cfg.attributes = 1;
  cfg.grid = g;
  cfg.grid_cap = g;
  cfg.amp_lo = cfg.amp_hi = 0.0;
  cfg.lin_lo = cfg.lin_hi = 0.0;
  cfg.sin_amp_lo = cfg.sin_amp_hi = 0.0;
  cfg.noise_lo = cfg.noise_hi = 0.0;
  cfg.seed = seed;
  return data::generate_synthetic(cfg);
}

metagp::bl::NnParams zeroed_nn() {
  metagp::bl::NnParams p = metagp::bl::init_nn(0, 8, 0.0, 4);
  for (Matrix& w : p.net.weights) w.setZero();
  for (Matrix& b : p.net.biases) b.setZero();
  return p;
}

gp::ModelHyper tiny_hyper() {
  gp::ModelHyper h;
  h.aux_dims = 0;
  h.latent_k = 4;
  h.width = 8;
  h.dropout = 0.0;
  return h;
}

}  // namespace

TEST_CASE("sample_episode: partition, disjointness, uniformity, determinism") {
  data::DatasetCollection tasks = make_tasks(4, 2, 4, 11);  // 16-point tasks

  SUBCASE("N_S + N_Q = task size forces query to be the complement") {
    std::mt19937_64 rng(1);
    gp::Episode ep = train::sample_episode(tasks, rng, 5, 11);
    const data::TaskDataset* src = tasks.find(ep.region_id, ep.attribute_id);
    REQUIRE(src != nullptr);

    // every task row appears exactly once across support and query
    std::set<std::pair<double, double>> seen;
    auto note = [&](const Matrix& locs) {
      for (Eigen::Index i = 0; i < locs.rows(); ++i) {
        CHECK(seen.insert({locs(i, 0), locs(i, 1)}).second);
      }
    };
    note(ep.support.locations);
    note(ep.query_x);
    CHECK(seen.size() == 16);
  }

  SUBCASE("support and query rows never overlap") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 200; ++rep) {
      gp::Episode ep = train::sample_episode(tasks, rng, 3, 5);
      for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
          CHECK(ep.support.locations.row(i) != ep.query_x.row(j));
        }
      }
    }
  }

  SUBCASE("regions are drawn uniformly") {
    std::mt19937_64 rng(3);
    std::map<std::string, int> counts;
    for (int rep = 0; rep < 10000; ++rep) {
      counts[train::sample_episode(tasks, rng, 2, 2).region_id]++;
    }
    CHECK(counts.size() == 4);
    for (const auto& [region, n] : counts) {
      CAPTURE(region);
      CHECK(std::abs(n / 10000.0 - 0.25) <= 0.02);
    }
  }

  SUBCASE("same seed, same episode stream") {
    std::mt19937_64 a(4), b(4);
    for (int rep = 0; rep < 20; ++rep) {
      gp::Episode x = train::sample_episode(tasks, a, 3, 4);
      gp::Episode y = train::sample_episode(tasks, b, 3, 4);
      CHECK(x.region_id == y.region_id);
      CHECK(x.attribute_id == y.attribute_id);
      CHECK(x.support.locations == y.support.locations);
      CHECK(x.query_y == y.query_y);
    }
  }

  SUBCASE("too-small tasks are redrawn; all-small fails after 100 attempts") {
    std::mt19937_64 rng(5);
    CHECK_THROWS_WITH_AS(train::sample_episode(tasks, rng, 10, 10),
                         doctest::Contains("100 times"), ConfigError);

    // one big task among small ones: sampling succeeds and always lands on it
    data::DatasetCollection mixed = make_tasks(1, 1, 5, 12);  // 25 points
    data::DatasetCollection small = make_tasks(1, 1, 2, 13);  // 4 points
    small.tasks[0].region_id = "tiny";
    mixed.tasks.push_back(small.tasks[0]);
    for (int rep = 0; rep < 50; ++rep) {
      CHECK(train::sample_episode(mixed, rng, 10, 10).region_id != "tiny");
    }
  }
}

TEST_CASE("validate: singleton mean, determinism, independent-sum oracle") {
  data::DatasetCollection tasks = make_tasks(2, 2, 4, 21);
  metagp::OursModel model(tiny_hyper(), 3);

  std::mt19937_64 rng(6);
  const std::mt19937_64 saved = rng;
  const double one = train::validate(model, tasks, 1, 3, 4, gp::Objective::kErr, rng);

  // replaying the rng reproduces the episode, so its loss equals the mean
  std::mt19937_64 replay = saved;
  gp::Episode ep = train::sample_episode(tasks, replay, 3, 4);
  Matrix mean, variance;
  model.predict(ep.support, ep.query_x, &mean, &variance);
  CHECK(one == doctest::Approx((mean - ep.query_y).squaredNorm() / 4.0).epsilon(1e-12));

  std::mt19937_64 r1(7), r2(7);
  const double a = train::validate(model, tasks, 10, 3, 4, gp::Objective::kLike, r1);
  const double b = train::validate(model, tasks, 10, 3, 4, gp::Objective::kLike, r2);
  CHECK(a == b);

  // scalar oracle: mean of per-episode losses accumulated by hand
  std::mt19937_64 r3(7);
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) {
    gp::Episode e = train::sample_episode(tasks, r3, 3, 4);
    metagp::ad::Tape t(false);
    sum += model.taped_loss(t, e, gp::Objective::kLike, false, nullptr).loss.scalar();
  }
  CHECK(a == doctest::Approx(sum / 10.0).epsilon(1e-15));
}

TEST_CASE("train: early stopping semantics on a flat validation curve") {
  data::DatasetCollection tasks = zero_tasks(2, 4, 31);
  train::TrainConfig cfg;
  cfg.n_support = 3;
  cfg.n_query = 8;
  cfg.objective = gp::Objective::kErr;
  cfg.val_interval = 5;
  cfg.val_episodes = 4;

  SUBCASE("patience 0 stops at the second check and keeps the first snapshot") {
    cfg.patience = 0;
    cfg.max_episodes = 1000;
    metagp::bl::NnModel model(zeroed_nn());
    train::TrainResult r = train::train(model, cfg, tasks, tasks);
    CHECK(r.early_stopped);
    CHECK(r.episodes_run == 10);  // improvement at 5 (from +inf), give-up at 10
    CHECK(r.best_episode == 5);
    CHECK(r.best_val_loss == 0.0);
    CHECK(r.log.size() == 2);
    // zero data, zero predictions: the snapshot is the initialization itself
    CHECK(*model.parameters()[0] == Matrix::Zero(2, 8));
    CHECK(*model.parameters()[5] == Matrix::Zero(1, 1));
  }

  SUBCASE("patience 2 tolerates two flat checks and stops at the third") {
    cfg.patience = 2;
    cfg.max_episodes = 1000;
    metagp::bl::NnModel model(zeroed_nn());
    train::TrainResult r = train::train(model, cfg, tasks, tasks);
    CHECK(r.early_stopped);
    CHECK(r.episodes_run == 20);
    CHECK(r.log.size() == 4);
  }

  SUBCASE("max episodes caps the run; an off-interval tail still gets a check") {
    cfg.patience = 100;
    cfg.max_episodes = 12;
    metagp::bl::NnModel model(zeroed_nn());
    train::TrainResult r = train::train(model, cfg, tasks, tasks);
    CHECK_FALSE(r.early_stopped);
    CHECK(r.episodes_run == 12);
    CHECK(r.log.size() == 3);  // checks at 5, 10, 12
    CHECK(r.log.back().episode == 12);
  }
}

TEST_CASE("train: returned parameters carry the best validation loss") {
  data::DatasetCollection tasks = make_tasks(3, 2, 4, 41);
  train::TrainConfig cfg;
  cfg.n_support = 3;
  cfg.n_query = 8;
  cfg.objective = gp::Objective::kErr;
  cfg.max_episodes = 200;
  cfg.val_interval = 20;
  cfg.val_episodes = 8;
  cfg.patience = 3;
  cfg.learning_rate = 3e-3;
  cfg.seed = 5;

  metagp::OursModel model(tiny_hyper(), 5);
  train::TrainResult r = train::train(model, cfg, tasks, tasks);
  REQUIRE(!r.log.empty());

  double best_seen = r.log[0].val_loss;
  for (const train::TrainLogRow& row : r.log) best_seen = std::min(best_seen, row.val_loss);
  CHECK(r.best_val_loss == best_seen);

  // wall-clock diagnostics exist for every row and increase monotonically
  REQUIRE(r.wall_clock_ms.size() == r.log.size());
  CHECK(std::is_sorted(r.wall_clock_ms.begin(), r.wall_clock_ms.end()));
}

TEST_CASE("train: smoke convergence on a single task") {
  data::DatasetCollection tasks = make_tasks(1, 1, 6, 51);  // 36 points
  train::TrainConfig cfg;
  cfg.n_support = 5;
  cfg.n_query = 16;
  cfg.objective = gp::Objective::kErr;
  cfg.max_episodes = 500;
  cfg.val_interval = 50;
  cfg.val_episodes = 10;
  cfg.patience = 100;  // effectively off
  cfg.learning_rate = 1e-2;
  cfg.seed = 6;

  metagp::OursModel model(tiny_hyper(), 6);
  train::TrainResult r = train::train(model, cfg, tasks, tasks);
  REQUIRE(r.log.size() >= 2);
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
  CHECK(r.best_val_loss <= r.log.front().val_loss);
}

TEST_CASE("train: bitwise determinism across reruns") {
  data::DatasetCollection tasks = make_tasks(2, 2, 4, 61);
  train::TrainConfig cfg;
  cfg.n_support = 3;
  cfg.n_query = 6;
  cfg.objective = gp::Objective::kLike;
  cfg.max_episodes = 60;
  cfg.val_interval = 20;
  cfg.val_episodes = 5;
  cfg.patience = 50;
  cfg.seed = 7;

  gp::ModelHyper h = tiny_hyper();
  h.dropout = 0.1;  // exercised: dropout must draw from its own stream

  metagp::OursModel m1(h, 8);
  metagp::OursModel m2(h, 8);
  train::TrainResult r1 = train::train(m1, cfg, tasks, tasks);
  train::TrainResult r2 = train::train(m2, cfg, tasks, tasks);

  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].episode == r2.log[i].episode);
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_loss == r2.log[i].val_loss);
    CHECK(r1.log[i].val_mse == r2.log[i].val_mse);
  }
  for (std::size_t i = 0; i < m1.parameters().size(); ++i) {
    CHECK(*m1.parameters()[i] == *m2.parameters()[i]);
  }
}

TEST_CASE("train: batched steps consume the episode budget and stay finite") {
  data::DatasetCollection tasks = make_tasks(2, 1, 4, 71);
  train::TrainConfig cfg;
  cfg.n_support = 3;
  cfg.n_query = 6;
  cfg.objective = gp::Objective::kErr;
  cfg.max_episodes = 30;
  cfg.val_interval = 10;
  cfg.val_episodes = 4;
  cfg.patience = 50;
  cfg.batch = 4;  // divides neither the interval nor the budget
  cfg.seed = 9;

  metagp::OursModel model(tiny_hyper(), 9);
  train::TrainResult r = train::train(model, cfg, tasks, tasks);
  CHECK(r.episodes_run == 30);
  CHECK(r.log.back().episode == 30);
  for (const Matrix* p : model.parameters()) CHECK(p->allFinite());
}

TEST_CASE("train: marginal likelihood ignores the query set") {
  data::DatasetCollection tasks = make_tasks(2, 1, 4, 81);
  metagp::OursModel model(tiny_hyper(), 10);
  std::mt19937_64 rng(10);
  gp::Episode ep = train::sample_episode(tasks, rng, 4, 6);

  metagp::ad::Tape t(false);
  const double base =
      model.taped_loss(t, ep, gp::Objective::kMarLike, false, nullptr).loss.scalar();

  gp::Episode scrambled = ep;
  scrambled.query_y.setConstant(123.0);
  scrambled.query_x.array() += 7.5;
  metagp::ad::Tape t2(false);
  const double replaced =
      model.taped_loss(t2, scrambled, gp::Objective::kMarLike, false, nullptr).loss.scalar();
  CHECK(base == replaced);
}

TEST_CASE("train: config validation rejects undersized tasks and bad knobs") {
  data::DatasetCollection tasks = make_tasks(2, 1, 3, 91);  // 9-point tasks
  train::TrainConfig cfg;
  cfg.n_support = 5;
  cfg.n_query = 64;
  metagp::OursModel model(tiny_hyper(), 11);
  CHECK_THROWS_AS(train::train(model, cfg, tasks, tasks), ConfigError);

  cfg.n_query = 4;  // fits
  cfg.learning_rate = 0.0;
  cfg.max_episodes = 1;
  CHECK_THROWS_AS(train::train(model, cfg, tasks, tasks), ConfigError);

  cfg.learning_rate = 1e-3;
  cfg.n_support = 0;
  CHECK_THROWS_AS(train::train(model, cfg, tasks, tasks), ConfigError);
}

TEST_CASE("train: the loop drives baselines through the same interface") {
  data::DatasetCollection tasks = make_tasks(2, 1, 4, 95);
  train::TrainConfig cfg;
  cfg.n_support = 3;
  cfg.n_query = 8;
  cfg.objective = gp::Objective::kErr;
  cfg.max_episodes = 100;
  cfg.val_interval = 25;
  cfg.val_episodes = 5;
  cfg.patience = 20;
  cfg.learning_rate = 1e-2;
  cfg.seed = 12;

  metagp::bl::GprModel gpr;
  train::TrainResult rg = train::train(gpr, cfg, tasks, tasks);
  CHECK(std::isfinite(rg.best_val_loss));

  metagp::bl::NnModel net(metagp::bl::init_nn(0, 8, 0.0, 12));
  train::TrainResult rn = train::train(net, cfg, tasks, tasks);
  CHECK(rn.log.back().train_loss < rn.log.front().train_loss);
}

TEST_CASE("save_train_log: reproducible log, timing in the sidecar") {
  train::TrainResult r;
  r.log.push_back({50, 1.5, 2.25, 2.25});
  r.log.push_back({100, 0.75, 0.8125, 0.8125});
  r.wall_clock_ms = {12.5, 30.25};

  const std::string path = "trainer_test_log.csv";
  train::save_train_log(r, path);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "episode,train_loss,val_loss,val_mse");
  std::getline(in, line);
  CHECK(line == "50,1.5,2.25,2.25");
  std::getline(in, line);
  CHECK(line == "100,0.75,0.8125,0.8125");

  std::ifstream timing(path + ".timing.csv");
  std::getline(timing, line);
  CHECK(line == "episode,wall_clock_ms");
  std::getline(timing, line);
  CHECK(line == "50,12.5");

  std::remove(path.c_str());
  std::remove((path + ".timing.csv").c_str());
}
