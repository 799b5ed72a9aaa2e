#include "metagp/model.hpp"

#include <cmath>
#include <numbers>

#include "metagp/errors.hpp"

namespace metagp::gp {

void SupportSet::validate() const {
  if (locations.rows() < 1) throw ShapeError("SupportSet: needs at least one pair");
  if (values.rows() != locations.rows() || values.cols() != 1) {
    throw ShapeError("SupportSet: values must be " + std::to_string(locations.rows()) +
                     "x1, got " + std::to_string(values.rows()) + "x" +
                     std::to_string(values.cols()));
  }
  if (!locations.allFinite() || !values.allFinite()) {
    throw NumericalError("SupportSet: non-finite entries");
  }
}

std::vector<Matrix*> ModelParams::flat() {
  std::vector<Matrix*> out;
  for (nn::MlpParams* net : {&f_z, &f_m, &f_k, &f_b}) {
    for (Matrix& w : net->weights) out.push_back(&w);
    for (Matrix& b : net->biases) out.push_back(&b);
  }
  return out;
}

std::vector<const Matrix*> ModelParams::flat() const {
  std::vector<const Matrix*> out;
  for (const nn::MlpParams* net : {&f_z, &f_m, &f_k, &f_b}) {
    for (const Matrix& w : net->weights) out.push_back(&w);
    for (const Matrix& b : net->biases) out.push_back(&b);
  }
  return out;
}

ModelParams init_model(const ModelHyper& hyper, std::uint64_t seed) {
  if (hyper.latent_k <= 0 || hyper.width <= 0 || hyper.aux_dims < 0) {
    throw ConfigError("init_model: latent_k and width must be positive, aux_dims >= 0");
  }
  const int d = hyper.location_dim();
  const int k = hyper.latent_k;
  const int w = hyper.width;
  const int m_in = hyper.mode == AblationMode::kNoSptMean ? d : d + k;

  ModelParams p;
  p.hyper = hyper;
  // distinct seeds per network, derived from the model seed
  p.f_z = nn::init_mlp({{d + 1, w, w, k}, nn::OutputTransform::kIdentity, hyper.dropout},
                       seed * 4 + 0);
  p.f_m = nn::init_mlp({{m_in, w, w, 1}, nn::OutputTransform::kIdentity, hyper.dropout},
                       seed * 4 + 1);
  p.f_k = nn::init_mlp({{d + k, w, w, k}, nn::OutputTransform::kIdentity, hyper.dropout},
                       seed * 4 + 2);
  p.f_b = nn::init_mlp({{k, w, w, 1}, nn::OutputTransform::kSoftplusPositive, hyper.dropout},
                       seed * 4 + 3);
  return p;
}

std::vector<Var> ModelVars::leaves() const {
  std::vector<Var> out;
  for (const nn::MlpVars* net : {&f_z, &f_m, &f_k, &f_b}) {
    for (const Var& w : net->weights) out.push_back(w);
    for (const Var& b : net->biases) out.push_back(b);
  }
  return out;
}

ModelVars lift_model(Tape& tape, const ModelParams& params) {
  return ModelVars{nn::lift_params(tape, params.f_z), nn::lift_params(tape, params.f_m),
                   nn::lift_params(tape, params.f_k), nn::lift_params(tape, params.f_b)};
}

Matrix delta_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("delta_matrix: row widths differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  }
  Matrix d = Matrix::Zero(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      if (a.row(i) == b.row(j)) d(i, j) = 1.0;
    }
  }
  return d;
}

namespace {

// z broadcast to one row per input row: ones(n,1) * z.
Var broadcast_rows(Tape& tape, const Var& z, Eigen::Index n) {
  return ad::matmul(tape.constant(Matrix::Ones(n, 1)), z);
}

Var mean_head(Tape& tape, const ModelVars& model, const ModelHyper& hyper, const Var& x,
              const Var& z, bool train_mode, std::mt19937_64* rng) {
  switch (hyper.mode) {
    case AblationMode::kZeroMean:
      return tape.constant(Matrix::Zero(x.rows(), 1));
    case AblationMode::kNoSptMean:
      return nn::forward(tape, model.f_m, x, train_mode, rng);
    case AblationMode::kFull:
      break;
  }
  Var zx = ad::hcat(x, broadcast_rows(tape, z, x.rows()));
  return nn::forward(tape, model.f_m, zx, train_mode, rng);
}

}  // namespace

EpisodeGraph build_episode_graph(Tape& tape, const ModelVars& model, const ModelHyper& hyper,
                                 const SupportSet& support, const Matrix& query_x,
                                 bool train_mode, std::mt19937_64* rng) {
  support.validate();
  const Eigen::Index n_s = support.size();
  EpisodeGraph g;

  Var sx = tape.constant(support.locations);
  Var sy = tape.constant(support.values);

  // z = mean over rows of f_z([x_n, y_n])
  Var enc = nn::forward(tape, model.f_z, ad::hcat(sx, sy), train_mode, rng);
  Var row_sum = ad::matmul(tape.constant(Matrix::Ones(1, n_s)), enc);
  g.z = ad::mul(row_sum, tape.scalar(1.0 / static_cast<double>(n_s)));
  g.noise_b = nn::forward(tape, model.f_b, g.z, train_mode, rng);

  // support-side kernel matrix and GP solve
  Var zs = broadcast_rows(tape, g.z, n_s);
  g.emb_s = nn::forward(tape, model.f_k, ad::hcat(sx, zs), train_mode, rng);
  Var gauss = ad::exp(ad::negate(ad::sqdist(g.emb_s, g.emb_s)));
  Var delta = tape.constant(delta_matrix(support.locations, support.locations));
  g.k_mat = ad::add(gauss, ad::mul(g.noise_b, delta));
  g.m_vec = mean_head(tape, model, hyper, sx, g.z, train_mode, rng);
  g.residual = ad::sub(sy, g.m_vec);
  g.alpha = ad::cholesky_solve(g.k_mat, g.residual, /*jitter=*/true);

  if (query_x.rows() == 0) return g;
  if (query_x.cols() != support.locations.cols()) {
    throw ShapeError("episode graph: query rows have width " + std::to_string(query_x.cols()) +
                     ", support has " + std::to_string(support.locations.cols()));
  }

  Var qx = tape.constant(query_x);
  Var zq = broadcast_rows(tape, g.z, query_x.rows());
  Var emb_q = nn::forward(tape, model.f_k, ad::hcat(qx, zq), train_mode, rng);
  Var cross = ad::exp(ad::negate(ad::sqdist(emb_q, g.emb_s)));
  if (hyper.delta_in_cross) {
    Var delta_q = tape.constant(delta_matrix(query_x, support.locations));
    cross = ad::add(cross, ad::mul(g.noise_b, delta_q));
  }
  Var m_q = mean_head(tape, model, hyper, qx, g.z, train_mode, rng);
  g.pred_mean = ad::add(m_q, ad::matmul(cross, g.alpha));

  // variance: (1 + b) - diag(cross K^{-1} cross^T), via column sums of the
  // elementwise product with the solved block
  Var cross_t = ad::transpose(cross);
  Var solved = ad::cholesky_solve(g.k_mat, cross_t, /*jitter=*/true);
  Var quad = ad::transpose(
      ad::matmul(tape.constant(Matrix::Ones(1, n_s)), ad::mul(cross_t, solved)));
  g.var_raw = ad::sub(ad::add(tape.scalar(1.0), g.noise_b), quad);
  g.variance = ad::relu(g.var_raw);
  return g;
}

Var loss_mse(Tape& tape, const EpisodeGraph& graph, const Matrix& query_y) {
  if (query_y.rows() == 0) throw ShapeError("loss_mse: empty query set");
  Var d = ad::sub(graph.pred_mean, tape.constant(query_y));
  return ad::mean(ad::mul(d, d));
}

Var loss_nll(Tape& tape, const EpisodeGraph& graph, const Matrix& query_y) {
  if (query_y.rows() == 0) throw ShapeError("loss_nll: empty query set");
  // sigma^2 floored at 1e-8: relu(v - floor) + floor
  Var floor = tape.scalar(1e-8);
  Var sigma2 = ad::add(ad::relu(ad::sub(graph.var_raw, floor)), floor);
  Var d = ad::sub(graph.pred_mean, tape.constant(query_y));
  Var log_term = ad::mul(tape.scalar(0.5),
                         ad::log(ad::mul(tape.scalar(2.0 * std::numbers::pi), sigma2)));
  Var inv_sigma2 = ad::exp(ad::negate(ad::log(sigma2)));
  Var quad_term = ad::mul(tape.scalar(0.5), ad::mul(ad::mul(d, d), inv_sigma2));
  return ad::mean(ad::add(log_term, quad_term));
}

Var marginal_log_likelihood(Tape& tape, const EpisodeGraph& graph, const SupportSet& support) {
  const double n = static_cast<double>(support.size());
  Var quad = ad::mul(tape.scalar(-0.5), ad::dot(graph.residual, graph.alpha));
  Var logdet = ad::mul(tape.scalar(-0.5), ad::cholesky_logdet(graph.k_mat, /*jitter=*/true));
  Var constant = tape.scalar(-0.5 * n * std::log(2.0 * std::numbers::pi));
  return ad::add(ad::add(quad, logdet), constant);
}

Var episode_loss(Tape& tape, const ModelVars& model, const ModelHyper& hyper,
                 const Episode& episode, Objective objective, bool train_mode,
                 std::mt19937_64* rng) {
  const bool needs_query = objective != Objective::kMarLike;
  EpisodeGraph g = build_episode_graph(tape, model, hyper, episode.support,
                                       needs_query ? episode.query_x : Matrix(0, 0),
                                       train_mode, rng);
  switch (objective) {
    case Objective::kErr:
      return loss_mse(tape, g, episode.query_y);
    case Objective::kLike:
      return loss_nll(tape, g, episode.query_y);
    case Objective::kMarLike:
      return ad::negate(marginal_log_likelihood(tape, g, episode.support));
  }
  throw ConfigError("episode_loss: unknown objective");
}

Matrix encode_task(const SupportSet& support, const ModelParams& params) {
  Tape tape(false);
  ModelVars model = lift_model(tape, params);
  EpisodeGraph g = build_episode_graph(tape, model, params.hyper, support, Matrix(0, 0));
  return g.z.value();
}

double mean_value(const Matrix& x_row, const Matrix& z_row, const ModelParams& params) {
  switch (params.hyper.mode) {
    case AblationMode::kZeroMean:
      return 0.0;
    case AblationMode::kNoSptMean:
      return nn::forward_inference(params.f_m, x_row)(0, 0);
    case AblationMode::kFull:
      break;
  }
  Matrix in(1, x_row.cols() + z_row.cols());
  in << x_row, z_row;
  return nn::forward_inference(params.f_m, in)(0, 0);
}

double kernel_value(const Matrix& x_row, const Matrix& x2_row, const Matrix& z_row,
                    const ModelParams& params) {
  Matrix in1(1, x_row.cols() + z_row.cols());
  in1 << x_row, z_row;
  Matrix in2(1, x2_row.cols() + z_row.cols());
  in2 << x2_row, z_row;
  const Matrix e1 = nn::forward_inference(params.f_k, in1);
  const Matrix e2 = nn::forward_inference(params.f_k, in2);
  const double b = nn::forward_inference(params.f_b, z_row)(0, 0);
  const double delta = x_row == x2_row ? 1.0 : 0.0;
  return std::exp(-(e1 - e2).squaredNorm()) + b * delta;
}

GpPosterior fit_posterior(const SupportSet& support, const ModelParams& params) {
  Tape tape(false);
  ModelVars model = lift_model(tape, params);
  EpisodeGraph g = build_episode_graph(tape, model, params.hyper, support, Matrix(0, 0));

  GpPosterior post;
  post.k_mat = g.k_mat.value();
  post.alpha = g.alpha.value();
  post.m_vec = g.m_vec.value();
  post.z = g.z.value();
  post.noise_b = g.noise_b.scalar();
  post.support_x = support.locations;
  post.support_emb = g.emb_s.value();
  ad::detail::SpdFactor f =
      ad::detail::factor_spd(post.k_mat, /*jitter=*/true, "fit_posterior");
  post.chol = std::move(f.lower);
  post.jitter_used = f.jitter_used;
  return post;
}

PredictiveDistribution predict(const Matrix& x_row, const GpPosterior& posterior,
                               const ModelParams& params) {
  Matrix means, vars;
  predict_batch(x_row, posterior, params, &means, &vars);
  return {means(0, 0), vars(0, 0)};
}

void predict_batch(const Matrix& query_x, const GpPosterior& posterior,
                   const ModelParams& params, Matrix* means, Matrix* variances) {
  if (query_x.cols() != posterior.support_x.cols()) {
    throw ShapeError("predict: query width " + std::to_string(query_x.cols()) +
                     " does not match support width " +
                     std::to_string(posterior.support_x.cols()));
  }
  const Eigen::Index n_q = query_x.rows();
  Matrix zq = Matrix::Ones(n_q, 1) * posterior.z;
  Matrix in(n_q, query_x.cols() + posterior.z.cols());
  in << query_x, zq;
  const Matrix emb_q = nn::forward_inference(params.f_k, in);

  Matrix cross = -2.0 * (emb_q * posterior.support_emb.transpose());
  cross.colwise() += emb_q.rowwise().squaredNorm();
  cross.rowwise() += posterior.support_emb.rowwise().squaredNorm().transpose();
  cross = (-cross.cwiseMax(0.0)).array().exp().matrix();
  if (params.hyper.delta_in_cross) {
    cross += posterior.noise_b * delta_matrix(query_x, posterior.support_x);
  }

  Matrix m_q(n_q, 1);
  switch (params.hyper.mode) {
    case AblationMode::kZeroMean:
      m_q.setZero();
      break;
    case AblationMode::kNoSptMean:
      m_q = nn::forward_inference(params.f_m, query_x);
      break;
    case AblationMode::kFull:
      m_q = nn::forward_inference(params.f_m, in);
      break;
  }
  *means = m_q + cross * posterior.alpha;

  const Matrix solved = ad::detail::solve_with_factor(posterior.chol, cross.transpose());
  Matrix quad = (cross.transpose().cwiseProduct(solved)).colwise().sum().transpose();
  *variances = ((1.0 + posterior.noise_b) - quad.array()).cwiseMax(0.0).matrix();
}

}  // namespace metagp::gp
