#pragma once

#include <random>
#include <string>
#include <vector>

#include "metagp/model.hpp"

namespace metagp {

// A taped episode loss together with the lifted parameter leaves it reaches,
// in the same order as EpisodicModel::parameters().
struct TapedLoss {
  ad::Var loss;
  std::vector<ad::Var> leaves;
};

// The surface the trainer drives — the main model and every baseline behind
// one interface: encode/fit on the support, predict on the queries, expose
// trainable parameters.
class EpisodicModel {
 public:
  virtual ~EpisodicModel() = default;

  virtual std::string kind() const = 0;

  // Stable order; pointers stay valid for the model's lifetime.
  virtual std::vector<ad::Matrix*> parameters() = 0;

  // Builds the objective on `tape`. Throws ConfigError for objectives the
  // model has no density for (e.g. marginal likelihood on a plain network).
  virtual TapedLoss taped_loss(ad::Tape& tape, const gp::Episode& episode,
                               gp::Objective objective, bool train_mode = false,
                               std::mt19937_64* rng = nullptr) = 0;

  // Inference-mode prediction. Models without a predictive density report
  // unit variance, which is also the density they are scored with.
  virtual void predict(const gp::SupportSet& support, const ad::Matrix& query_x,
                       ad::Matrix* mean, ad::Matrix* variance) = 0;
};

// gp-core behind the interface.
class OursModel : public EpisodicModel {
 public:
  OursModel(const gp::ModelHyper& hyper, std::uint64_t seed)
      : params_(gp::init_model(hyper, seed)) {}
  explicit OursModel(gp::ModelParams params) : params_(std::move(params)) {}

  std::string kind() const override { return "ours"; }
  std::vector<ad::Matrix*> parameters() override { return params_.flat(); }
  TapedLoss taped_loss(ad::Tape& tape, const gp::Episode& episode, gp::Objective objective,
                       bool train_mode, std::mt19937_64* rng) override;
  void predict(const gp::SupportSet& support, const ad::Matrix& query_x, ad::Matrix* mean,
               ad::Matrix* variance) override;

  const gp::ModelParams& params() const { return params_; }

 private:
  gp::ModelParams params_;
};

}  // namespace metagp
