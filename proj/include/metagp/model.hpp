#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "metagp/mlp.hpp"
#include "metagp/tape.hpp"

namespace metagp::gp {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class AblationMode { kFull, kNoSptMean, kZeroMean };
enum class Objective { kErr, kLike, kMarLike };

// The few labeled pairs a task exposes at adaptation time. Locations are rows
// of [x1, x2, aux...], values the (normalized) attribute observations.
struct SupportSet {
  Matrix locations;  // N_S x (M+2)
  Matrix values;     // N_S x 1
  Eigen::Index size() const { return locations.rows(); }
  void validate() const;  // N_S >= 1, finite, matching row counts
};

// One (region, attribute) sample: support plus held-out queries.
struct Episode {
  std::string region_id;
  std::string attribute_id;
  SupportSet support;
  Matrix query_x;  // N_Q x (M+2); may be empty for support-only objectives
  Matrix query_y;  // N_Q x 1
};

struct ModelHyper {
  int aux_dims = 0;    // M: auxiliary feature count; location dim is M+2
  int latent_k = 256;  // K: task-representation width
  int width = 256;     // hidden width of all four networks
  double dropout = 0.1;
  AblationMode mode = AblationMode::kFull;
  // When true, the noise indicator also enters the query/support
  // cross-covariance, giving exact interpolation at support locations. The
  // more common alternative (false) omits it there.
  bool delta_in_cross = true;

  int location_dim() const { return aux_dims + 2; }
};

// Parameters of the four networks f_z, f_m, f_k, f_b. The f_m input width
// depends on the ablation mode (NoSptMean drops z), so the mode is fixed at
// init time.
struct ModelParams {
  ModelHyper hyper;
  nn::MlpParams f_z;  // (M+2)+1 -> K
  nn::MlpParams f_m;  // (M+2)+K -> 1   (NoSptMean: (M+2) -> 1)
  nn::MlpParams f_k;  // (M+2)+K -> K
  nn::MlpParams f_b;  // K -> 1, positive head

  // Canonical flattening (f_z, f_m, f_k, f_b; each network's weights then its
  // biases) shared by the optimizer and checkpoints.
  std::vector<Matrix*> flat();
  std::vector<const Matrix*> flat() const;
};

ModelParams init_model(const ModelHyper& hyper, std::uint64_t seed);

// All four networks lifted onto one tape; leaves() matches ModelParams::flat().
struct ModelVars {
  nn::MlpVars f_z, f_m, f_k, f_b;
  std::vector<Var> leaves() const;
};

ModelVars lift_model(Tape& tape, const ModelParams& params);

// 1.0 where row i of a and row j of b are exactly equal componentwise — the
// delta indicator on raw locations that carries the learned noise term.
Matrix delta_matrix(const Matrix& a, const Matrix& b);

// Episode computation graph: z, support-side posterior pieces, and (when
// query_x is non-empty) query predictions. Everything is on the tape, so the
// same construction serves training (recording) and evaluation (inference).
struct EpisodeGraph {
  Var z;         // 1 x K
  Var noise_b;   // 1 x 1, f_b(z)
  Var emb_s;     // N_S x K support embeddings f_k([x_n, z])
  Var m_vec;     // N_S x 1
  Var k_mat;     // N_S x N_S
  Var residual;  // y - m_vec
  Var alpha;     // K^{-1} residual
  Var pred_mean;  // N_Q x 1 (unset when N_Q = 0)
  Var variance;   // N_Q x 1, clamped >= 0
  Var var_raw;    // N_Q x 1, pre-clamp Schur complement
};

EpisodeGraph build_episode_graph(Tape& tape, const ModelVars& model,
                                 const ModelHyper& hyper, const SupportSet& support,
                                 const Matrix& query_x, bool train_mode = false,
                                 std::mt19937_64* rng = nullptr);

// Training objectives (Var-valued so backward reaches the parameters).
Var loss_mse(Tape& tape, const EpisodeGraph& graph, const Matrix& query_y);
// Negative mean log Gaussian density with the predictive variance floored at
// 1e-8.
Var loss_nll(Tape& tape, const EpisodeGraph& graph, const Matrix& query_y);
// log N(y | m, K) on the support set; negate for minimization.
Var marginal_log_likelihood(Tape& tape, const EpisodeGraph& graph,
                            const SupportSet& support);

// Taped loss for one episode under the given objective (kMarLike ignores the
// query side).
Var episode_loss(Tape& tape, const ModelVars& model, const ModelHyper& hyper,
                 const Episode& episode, Objective objective, bool train_mode = false,
                 std::mt19937_64* rng = nullptr);

// ---- Plain-value surface (inference mode, no gradients) ----

struct GpPosterior {
  Matrix k_mat;       // N_S x N_S
  Matrix chol;        // lower Cholesky factor of k_mat (after any jitter)
  Matrix alpha;       // K^{-1}(y - m)
  Matrix m_vec;       // N_S x 1
  Matrix z;           // 1 x K
  double noise_b = 0.0;
  Matrix support_x;    // raw locations, for the delta indicator at predict time
  Matrix support_emb;  // N_S x K embeddings f_k([x_n, z])
  double jitter_used = 0.0;
};

struct PredictiveDistribution {
  double mean = 0.0;
  double variance = 0.0;  // clamped >= 0
};

Matrix encode_task(const SupportSet& support, const ModelParams& params);
double mean_value(const Matrix& x_row, const Matrix& z_row, const ModelParams& params);
double kernel_value(const Matrix& x_row, const Matrix& x2_row, const Matrix& z_row,
                    const ModelParams& params);

GpPosterior fit_posterior(const SupportSet& support, const ModelParams& params);
PredictiveDistribution predict(const Matrix& x_row, const GpPosterior& posterior,
                               const ModelParams& params);

// Batched means/variances for a query block (same math as predict).
void predict_batch(const Matrix& query_x, const GpPosterior& posterior,
                   const ModelParams& params, Matrix* means, Matrix* variances);

}  // namespace metagp::gp
