#include "metagp/baselines.hpp"

#include <cmath>

#include "metagp/adam.hpp"
#include "metagp/errors.hpp"

namespace metagp::bl {

namespace {

// Pairwise squared distances between row sets, clamped against round-off.
Matrix plain_sqdist(const Matrix& a, const Matrix& b) {
  Matrix out = -2.0 * a * b.transpose();
  out.colwise() += a.rowwise().squaredNorm();
  out.rowwise() += b.rowwise().squaredNorm().transpose();
  return out.cwiseMax(0.0);
}

Matrix gpr_kernel(const Matrix& xa, const Matrix& xb, const GprParams& p) {
  const double l = p.length();
  Matrix k = (plain_sqdist(xa, xb) * (-0.5 / (l * l))).array().exp().matrix() * p.signal();
  return k + p.noise() * gp::delta_matrix(xa, xb);
}

}  // namespace

void gpr_predict_batch(const gp::SupportSet& support, const Matrix& query_x,
                       const GprParams& params, Matrix* mean, Matrix* variance) {
  support.validate();
  if (query_x.cols() != support.locations.cols()) {
    throw ShapeError("gpr_predict: query width " + std::to_string(query_x.cols()) +
                     " does not match support width " +
                     std::to_string(support.locations.cols()));
  }
  const Matrix k = gpr_kernel(support.locations, support.locations, params);
  const ad::detail::SpdFactor f = ad::detail::factor_spd(k, /*jitter=*/true, "gpr kernel");
  const Matrix alpha = ad::detail::solve_with_factor(f.lower, support.values);
  const Matrix cross = gpr_kernel(query_x, support.locations, params);
  *mean = cross * alpha;  // zero prior mean
  const Matrix solved = ad::detail::solve_with_factor(f.lower, cross.transpose());
  const double prior = params.signal() + params.noise();
  const Matrix quad =
      (cross.transpose().array() * solved.array()).colwise().sum().transpose().matrix();
  *variance = (prior - quad.array()).max(0.0).matrix();
}

gp::PredictiveDistribution gpr_predict(const gp::SupportSet& support, const Matrix& x_row,
                                       const GprParams& params) {
  Matrix mean, variance;
  gpr_predict_batch(support, x_row, params, &mean, &variance);
  return {mean(0, 0), variance(0, 0)};
}

GprModel::GprModel(const GprParams& init)
    : log_signal_(Matrix::Constant(1, 1, init.log_signal)),
      log_length_(Matrix::Constant(1, 1, init.log_length)),
      log_noise_(Matrix::Constant(1, 1, init.log_noise)) {}

std::vector<Matrix*> GprModel::parameters() {
  return {&log_signal_, &log_length_, &log_noise_};
}

GprParams GprModel::params() const {
  return {log_signal_(0, 0), log_length_(0, 0), log_noise_(0, 0)};
}

TapedLoss GprModel::taped_loss(Tape& tape, const gp::Episode& episode, gp::Objective objective,
                               bool /*train_mode*/, std::mt19937_64* /*rng*/) {
  episode.support.validate();
  const Eigen::Index n_s = episode.support.size();
  Var ls = tape.leaf(log_signal_);
  Var ll = tape.leaf(log_length_);
  Var ln = tape.leaf(log_noise_);
  Var sf2 = ad::exp(ls);
  Var sn2 = ad::exp(ln);
  // 1 / (2 l^2) = 0.5 exp(-2 log l)
  Var inv2l2 = ad::mul(tape.scalar(0.5), ad::exp(ad::mul(tape.scalar(-2.0), ll)));

  // Only the three scalars are differentiated; distances are constants.
  const Matrix& sx = episode.support.locations;
  Var d_ss = tape.constant(plain_sqdist(sx, sx));
  Var delta_ss = tape.constant(gp::delta_matrix(sx, sx));

  gp::EpisodeGraph g;
  g.k_mat = ad::add(ad::mul(sf2, ad::exp(ad::negate(ad::mul(d_ss, inv2l2)))),
                    ad::mul(sn2, delta_ss));
  g.residual = tape.constant(episode.support.values);
  g.alpha = ad::cholesky_solve(g.k_mat, g.residual, /*jitter=*/true);

  TapedLoss out{Var{}, {ls, ll, ln}};
  if (objective == gp::Objective::kMarLike) {
    out.loss = ad::negate(gp::marginal_log_likelihood(tape, g, episode.support));
    return out;
  }

  if (episode.query_x.rows() == 0) throw ShapeError("gpr loss: empty query set");
  Var d_qs = tape.constant(plain_sqdist(episode.query_x, sx));
  Var delta_qs = tape.constant(gp::delta_matrix(episode.query_x, sx));
  Var cross = ad::add(ad::mul(sf2, ad::exp(ad::negate(ad::mul(d_qs, inv2l2)))),
                      ad::mul(sn2, delta_qs));
  g.pred_mean = ad::matmul(cross, g.alpha);

  Var cross_t = ad::transpose(cross);
  Var solved = ad::cholesky_solve(g.k_mat, cross_t, /*jitter=*/true);
  Var quad = ad::transpose(
      ad::matmul(tape.constant(Matrix::Ones(1, n_s)), ad::mul(cross_t, solved)));
  g.var_raw = ad::sub(ad::add(sf2, sn2), quad);

  out.loss = objective == gp::Objective::kErr ? gp::loss_mse(tape, g, episode.query_y)
                                              : gp::loss_nll(tape, g, episode.query_y);
  return out;
}

void GprModel::predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
                       Matrix* variance) {
  gpr_predict_batch(support, query_x, params(), mean, variance);
}

// ---- NP ----

NpParams init_np(int aux_dims, int latent_k, int width, double dropout, bool variance_head,
                 std::uint64_t seed) {
  if (latent_k <= 0 || width <= 0 || aux_dims < 0) {
    throw ConfigError("init_np: latent_k and width must be positive, aux_dims >= 0");
  }
  const int d = aux_dims + 2;
  NpParams p;
  p.variance_head = variance_head;
  p.encoder = nn::init_mlp({{d + 1, width, width, latent_k}, nn::OutputTransform::kIdentity,
                            dropout},
                           seed * 2 + 0);
  p.decoder = nn::init_mlp({{d + latent_k, width, width, variance_head ? 2 : 1},
                            nn::OutputTransform::kIdentity, dropout},
                           seed * 2 + 1);
  return p;
}

namespace {

// Taped NP forward: z = mean-pooled encoder rows, decoder([x_q, z]).
struct NpGraph {
  Var out;  // N_Q x 1 or N_Q x 2
  std::vector<Var> leaves;
};

NpGraph np_graph(Tape& tape, const NpParams& params, const gp::SupportSet& support,
                 const Matrix& query_x, bool train_mode, std::mt19937_64* rng) {
  support.validate();
  const Eigen::Index n_s = support.size();
  nn::MlpVars enc = nn::lift_params(tape, params.encoder);
  nn::MlpVars dec = nn::lift_params(tape, params.decoder);

  Var sx = tape.constant(support.locations);
  Var sy = tape.constant(support.values);
  Var codes = nn::forward(tape, enc, ad::hcat(sx, sy), train_mode, rng);
  Var z = ad::mul(ad::matmul(tape.constant(Matrix::Ones(1, n_s)), codes),
                  tape.scalar(1.0 / static_cast<double>(n_s)));

  Var qx = tape.constant(query_x);
  Var zq = ad::matmul(tape.constant(Matrix::Ones(query_x.rows(), 1)), z);
  NpGraph g;
  g.out = nn::forward(tape, dec, ad::hcat(qx, zq), train_mode, rng);
  for (const nn::MlpVars* net : {&enc, &dec}) {
    for (const Var& w : net->weights) g.leaves.push_back(w);
    for (const Var& b : net->biases) g.leaves.push_back(b);
  }
  return g;
}

// Column selectors: out * e_i picks one output column through the op set.
Var pick_column(Tape& tape, const Var& m, Eigen::Index cols, Eigen::Index which) {
  Matrix sel = Matrix::Zero(cols, 1);
  sel(which, 0) = 1.0;
  return ad::matmul(m, tape.constant(sel));
}

}  // namespace

Matrix np_predict(const gp::SupportSet& support, const Matrix& query_x, const NpParams& params,
                  Matrix* variance) {
  Tape tape(false);
  NpGraph g = np_graph(tape, params, support, query_x, false, nullptr);
  const Matrix out = g.out.value();
  if (variance != nullptr) {
    if (params.variance_head) {
      Matrix raw = out.col(1);
      *variance = raw.unaryExpr([](double v) {
        // softplus + 1e-6, overflow-safe for large v
        return (v > 30.0 ? v : std::log1p(std::exp(v))) + 1e-6;
      });
    } else {
      *variance = Matrix::Ones(out.rows(), 1);
    }
  }
  return out.col(0);
}

std::vector<Matrix*> NpModel::parameters() {
  std::vector<Matrix*> out;
  for (nn::MlpParams* net : {&params_.encoder, &params_.decoder}) {
    for (Matrix& w : net->weights) out.push_back(&w);
    for (Matrix& b : net->biases) out.push_back(&b);
  }
  return out;
}

TapedLoss NpModel::taped_loss(Tape& tape, const gp::Episode& episode, gp::Objective objective,
                              bool train_mode, std::mt19937_64* rng) {
  if (objective == gp::Objective::kMarLike) {
    throw ConfigError("np: no marginal likelihood exists for this model");
  }
  if (episode.query_x.rows() == 0) throw ShapeError("np loss: empty query set");
  NpGraph npg = np_graph(tape, params_, episode.support, episode.query_x, train_mode, rng);

  gp::EpisodeGraph g;
  if (params_.variance_head) {
    g.pred_mean = pick_column(tape, npg.out, 2, 0);
    g.var_raw = ad::add(ad::softplus(pick_column(tape, npg.out, 2, 1)), tape.scalar(1e-6));
  } else {
    g.pred_mean = npg.out;
    g.var_raw = tape.constant(Matrix::Ones(episode.query_x.rows(), 1));
  }
  Var loss = objective == gp::Objective::kErr ? gp::loss_mse(tape, g, episode.query_y)
                                              : gp::loss_nll(tape, g, episode.query_y);
  return {loss, std::move(npg.leaves)};
}

void NpModel::predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
                      Matrix* variance) {
  *mean = np_predict(support, query_x, params_, variance);
}

// ---- NN / FT ----

NnParams init_nn(int aux_dims, int width, double dropout, std::uint64_t seed) {
  if (width <= 0 || aux_dims < 0) {
    throw ConfigError("init_nn: width must be positive, aux_dims >= 0");
  }
  return {nn::init_mlp({{aux_dims + 2, width, width, 1}, nn::OutputTransform::kIdentity,
                        dropout},
                       seed)};
}

Matrix nn_predict(const Matrix& query_x, const NnParams& params) {
  return nn::forward_inference(params.net, query_x);
}

std::vector<Matrix*> NnModel::parameters() {
  std::vector<Matrix*> out;
  for (Matrix& w : params_.net.weights) out.push_back(&w);
  for (Matrix& b : params_.net.biases) out.push_back(&b);
  return out;
}

TapedLoss NnModel::taped_loss(Tape& tape, const gp::Episode& episode, gp::Objective objective,
                              bool train_mode, std::mt19937_64* rng) {
  if (objective == gp::Objective::kMarLike) {
    throw ConfigError("nn: no marginal likelihood exists for this model");
  }
  if (episode.query_x.rows() == 0) throw ShapeError("nn loss: empty query set");
  nn::MlpVars net = nn::lift_params(tape, params_.net);

  gp::EpisodeGraph g;
  g.pred_mean = nn::forward(tape, net, tape.constant(episode.query_x), train_mode, rng);
  // Scored as a unit-variance Gaussian: the model has no variance of its own.
  g.var_raw = tape.constant(Matrix::Ones(episode.query_x.rows(), 1));
  Var loss = objective == gp::Objective::kErr ? gp::loss_mse(tape, g, episode.query_y)
                                              : gp::loss_nll(tape, g, episode.query_y);
  TapedLoss out{loss, {}};
  for (const Var& w : net.weights) out.leaves.push_back(w);
  for (const Var& b : net.biases) out.leaves.push_back(b);
  return out;
}

void NnModel::predict(const gp::SupportSet& /*support*/, const Matrix& query_x, Matrix* mean,
                      Matrix* variance) {
  *mean = nn_predict(query_x, params_);
  if (variance != nullptr) *variance = Matrix::Ones(query_x.rows(), 1);
}

NnParams ft_adapt(const NnParams& params, const gp::SupportSet& support, int epochs, double lr) {
  support.validate();
  if (epochs < 0) throw ConfigError("ft_adapt: epochs must be >= 0");
  NnParams adapted = params;
  std::vector<Matrix*> leaves;
  for (Matrix& w : adapted.net.weights) leaves.push_back(&w);
  for (Matrix& b : adapted.net.biases) leaves.push_back(&b);

  nn::Adam opt({lr});
  for (int e = 0; e < epochs; ++e) {
    Tape tape;
    nn::MlpVars net = nn::lift_params(tape, adapted.net);
    Var pred = nn::forward(tape, net, tape.constant(support.locations));
    Var d = ad::sub(pred, tape.constant(support.values));
    ad::Gradients grads = ad::backward(ad::mean(ad::mul(d, d)));
    std::vector<Matrix> g;
    for (const Var& w : net.weights) g.push_back(grads(w));
    for (const Var& b : net.biases) g.push_back(grads(b));
    opt.step(leaves, g);
  }
  return adapted;
}

void FtModel::predict(const gp::SupportSet& support, const Matrix& query_x, Matrix* mean,
                      Matrix* variance) {
  const NnParams adapted = ft_adapt(params(), support, epochs_, lr_);
  *mean = nn_predict(query_x, adapted);
  if (variance != nullptr) *variance = Matrix::Ones(query_x.rows(), 1);
}

}  // namespace metagp::bl
