#include "metagp/episodic.hpp"

namespace metagp {

TapedLoss OursModel::taped_loss(ad::Tape& tape, const gp::Episode& episode,
                                gp::Objective objective, bool train_mode,
                                std::mt19937_64* rng) {
  gp::ModelVars model = gp::lift_model(tape, params_);
  ad::Var loss =
      gp::episode_loss(tape, model, params_.hyper, episode, objective, train_mode, rng);
  return {loss, model.leaves()};
}

void OursModel::predict(const gp::SupportSet& support, const ad::Matrix& query_x,
                        ad::Matrix* mean, ad::Matrix* variance) {
  gp::GpPosterior post = gp::fit_posterior(support, params_);
  gp::predict_batch(query_x, post, params_, mean, variance);
}

}  // namespace metagp
