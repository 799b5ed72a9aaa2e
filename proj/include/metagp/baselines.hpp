#pragma once

#include <cmath>

#include "metagp/episodic.hpp"
#include "metagp/mlp.hpp"

namespace metagp::bl {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---- GPR: zero-mean GP with a Gaussian kernel on raw locations ----
// k(x, x') = sf2 * exp(-|x - x'|^2 / (2 l^2)) + sn2 * delta(x, x'), with the
// same delta convention and Cholesky machinery as gp-core. The three
// parameters are stored as unconstrained logs and trained episodically.

struct GprParams {
  double log_signal = 0.0;               // log sf2
  double log_length = 0.0;               // log l
  double log_noise = std::log(1e-2);     // log sn2

  double signal() const { return std::exp(log_signal); }
  double length() const { return std::exp(log_length); }
  double noise() const { return std::exp(log_noise); }
};

gp::PredictiveDistribution gpr_predict(const gp::SupportSet& support, const Matrix& x_row,
                                       const GprParams& params);
void gpr_predict_batch(const gp::SupportSet& support, const Matrix& query_x,
                       const GprParams& params, Matrix* mean, Matrix* variance);

// ---- NP: conditional neural process with the same set encoder shape ----
// z is the mean-pooled encoder output over [x_n, y_n]; the decoder maps
// [x, z] to the predicted mean, plus a softplus variance head when trained
// with the likelihood objective.

struct NpParams {
  nn::MlpParams encoder;  // (M+2)+1 -> K
  nn::MlpParams decoder;  // (M+2)+K -> 1, or -> 2 with the variance head
  bool variance_head = false;
};

NpParams init_np(int aux_dims, int latent_k, int width, double dropout, bool variance_head,
                 std::uint64_t seed);
// Returns predicted means; fills `variance` when non-null (unit variance
// without a head).
Matrix np_predict(const gp::SupportSet& support, const Matrix& query_x, const NpParams& params,
                  Matrix* variance = nullptr);

// ---- NN: one shared feed-forward network, support-independent ----

struct NnParams {
  nn::MlpParams net;  // (M+2) -> 1
};

NnParams init_nn(int aux_dims, int width, double dropout, std::uint64_t seed);
Matrix nn_predict(const Matrix& query_x, const NnParams& params);

// FT: `epochs` full-support Adam steps on the support MSE, from the shared
// parameters; the original is untouched.
NnParams ft_adapt(const NnParams& params, const gp::SupportSet& support, int epochs, double lr);

// ---- EpisodicModel wrappers ----

class GprModel : public EpisodicModel {
 public:
  explicit GprModel(const GprParams& init = {});
  std::string kind() const override { return "gpr"; }
  std::vector<Matrix*> parameters() override;
  TapedLoss taped_loss(Tape& tape, const gp::Episode& episode, gp::Objective objective,
                       bool train_mode, std::mt19937_64* rng) override;
  void predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
               Matrix* variance) override;
  GprParams params() const;

 private:
  Matrix log_signal_, log_length_, log_noise_;  // 1x1 each, optimizer-addressable
};

class NpModel : public EpisodicModel {
 public:
  explicit NpModel(NpParams params) : params_(std::move(params)) {}
  std::string kind() const override { return "np"; }
  std::vector<Matrix*> parameters() override;
  TapedLoss taped_loss(Tape& tape, const gp::Episode& episode, gp::Objective objective,
                       bool train_mode, std::mt19937_64* rng) override;
  void predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
               Matrix* variance) override;
  const NpParams& params() const { return params_; }

 private:
  NpParams params_;
};

class NnModel : public EpisodicModel {
 public:
  explicit NnModel(NnParams params) : params_(std::move(params)) {}
  std::string kind() const override { return "nn"; }
  std::vector<Matrix*> parameters() override;
  TapedLoss taped_loss(Tape& tape, const gp::Episode& episode, gp::Objective objective,
                       bool train_mode, std::mt19937_64* rng) override;
  void predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
               Matrix* variance) override;
  const NnParams& params() const { return params_; }

 private:
  NnParams params_;
};

// Same training as NN; adapts to the support at prediction time.
class FtModel : public NnModel {
 public:
  FtModel(NnParams params, int epochs = 100, double lr = 1e-3)
      : NnModel(std::move(params)), epochs_(epochs), lr_(lr) {}
  std::string kind() const override { return "ft"; }
  void predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
               Matrix* variance) override;

  int epochs() const { return epochs_; }
  double lr() const { return lr_; }

 private:
  int epochs_;
  double lr_;
};

}  // namespace metagp::bl
