#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "metagp/errors.hpp"
#include "metagp/fdcheck.hpp"
#include "metagp/model.hpp"
#include "oracles.hpp"

using metagp::NumericalError;
using metagp::ShapeError;
using metagp::ad::Matrix;
using metagp::ad::Tape;
using metagp::ad::Var;
namespace ad = metagp::ad;
namespace nn = metagp::nn;
namespace gp = metagp::gp;

namespace {

gp::ModelHyper small_hyper(gp::AblationMode mode = gp::AblationMode::kFull) {
  gp::ModelHyper h;
  h.aux_dims = 0;
  h.latent_k = 4;
  h.width = 8;
  h.dropout = 0.0;
  h.mode = mode;
  return h;
}

gp::SupportSet random_support(std::mt19937_64& rng, Eigen::Index n) {
  gp::SupportSet s;
  s.locations = oracle::randn(rng, n, 2);
  s.values = oracle::randn(rng, n, 1);
  return s;
}

// f_b that sits at its 1e-6 floor regardless of input: zero weights, strongly
// negative output bias.
void floor_noise(gp::ModelParams& p) {
  for (Matrix& w : p.f_b.weights) w.setZero();
  for (Matrix& b : p.f_b.biases) b.setZero();
  p.f_b.biases.back().setConstant(-40.0);
}

// f_k that maps x1 to a far-spread embedding and ignores everything else:
// first hidden = 100*x1 + 10 (positive for x1 >= 0), second hidden passes it
// through, output sums it into every latent coordinate.
void spread_embeddings(gp::ModelParams& p) {
  const int w = p.f_k.spec.widths[1];
  p.f_k.weights[0].setZero();
  p.f_k.weights[0].row(0).setConstant(100.0);
  p.f_k.biases[0].setConstant(10.0);
  p.f_k.weights[1] = Matrix::Identity(w, w);
  p.f_k.biases[1].setZero();
  p.f_k.weights[2].setOnes();
  p.f_k.biases[2].setZero();
}

}  // namespace

TEST_CASE("encode_task: singleton, duplication, permutation") {
  std::mt19937_64 rng(1);
  gp::ModelParams p = gp::init_model(small_hyper(), 10);

  gp::SupportSet one = random_support(rng, 1);
  Matrix in(1, 3);
  in << one.locations, one.values;
  CHECK(gp::encode_task(one, p) == nn::forward_inference(p.f_z, in));

  gp::SupportSet s = random_support(rng, 4);
  Matrix z = gp::encode_task(s, p);

  gp::SupportSet doubled;
  doubled.locations = Matrix(8, 2);
  doubled.values = Matrix(8, 1);
  doubled.locations << s.locations, s.locations;
  doubled.values << s.values, s.values;
  CHECK((gp::encode_task(doubled, p) - z).cwiseAbs().maxCoeff() <= 1e-12);

  gp::SupportSet perm;
  std::vector<int> order{2, 0, 3, 1};
  perm.locations = Matrix(4, 2);
  perm.values = Matrix(4, 1);
  for (int i = 0; i < 4; ++i) {
    perm.locations.row(i) = s.locations.row(order[i]);
    perm.values.row(i) = s.values.row(order[i]);
  }
  CHECK((gp::encode_task(perm, p) - z).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mean_value ablation behaviour") {
  std::mt19937_64 rng(2);
  Matrix x = oracle::randn(rng, 1, 2);
  Matrix z1 = oracle::randn(rng, 1, 4);
  Matrix z2 = oracle::randn(rng, 1, 4);

  gp::ModelParams zero_mean = gp::init_model(small_hyper(gp::AblationMode::kZeroMean), 3);
  CHECK(gp::mean_value(x, z1, zero_mean) == 0.0);

  gp::ModelParams full = gp::init_model(small_hyper(), 3);
  for (Matrix& w : full.f_m.weights) w.setZero();
  CHECK(gp::mean_value(x, z1, full) == 0.0);

  gp::ModelParams no_spt = gp::init_model(small_hyper(gp::AblationMode::kNoSptMean), 3);
  CHECK(gp::mean_value(x, z1, no_spt) == gp::mean_value(x, z2, no_spt));
}

TEST_CASE("kernel_value: delta term, closed form, symmetry") {
  std::mt19937_64 rng(3);
  gp::ModelParams p = gp::init_model(small_hyper(), 4);
  Matrix z = oracle::randn(rng, 1, 4);

  // x = x': 1 + f_b(z)
  Matrix x = oracle::randn(rng, 1, 2);
  const double b = nn::forward_inference(p.f_b, z)(0, 0);
  CHECK(gp::kernel_value(x, x, z, p) == doctest::Approx(1.0 + b).epsilon(1e-14));

  // x != x': exp of negated squared embedding distance, recomputed directly
  for (int i = 0; i < 100; ++i) {
    Matrix x1 = oracle::randn(rng, 1, 2);
    Matrix x2 = oracle::randn(rng, 1, 2);
    Matrix in1(1, 6), in2(1, 6);
    in1 << x1, z;
    in2 << x2, z;
    const double d2 =
        (nn::forward_inference(p.f_k, in1) - nn::forward_inference(p.f_k, in2)).squaredNorm();
    CHECK(gp::kernel_value(x1, x2, z, p) == doctest::Approx(std::exp(-d2)).epsilon(1e-12));
    CHECK(gp::kernel_value(x1, x2, z, p) == gp::kernel_value(x2, x1, z, p));
  }

  // zero f_k: all embeddings equal, so k(x,x') = 1 for x != x'
  gp::ModelParams flat = p;
  for (Matrix& w : flat.f_k.weights) w.setZero();
  for (Matrix& bb : flat.f_k.biases) bb.setZero();
  Matrix xa = oracle::randn(rng, 1, 2), xb = oracle::randn(rng, 1, 2);
  CHECK(gp::kernel_value(xa, xb, z, flat) == 1.0);
}

TEST_CASE("fit_posterior: scalar case, oracle alpha, duplicates") {
  std::mt19937_64 rng(4);
  gp::ModelParams p = gp::init_model(small_hyper(), 5);

  SUBCASE("N_S = 1") {
    gp::SupportSet s = random_support(rng, 1);
    gp::GpPosterior post = gp::fit_posterior(s, p);
    const double b = post.noise_b;
    CHECK(post.k_mat(0, 0) == doctest::Approx(1.0 + b).epsilon(1e-14));
    const double want_alpha = (s.values(0, 0) - post.m_vec(0, 0)) / (1.0 + b);
    CHECK(post.alpha(0, 0) == doctest::Approx(want_alpha).epsilon(1e-12));
  }

  SUBCASE("random 5-point alpha against Gauss-Jordan") {
    for (int rep = 0; rep < 50; ++rep) {
      gp::SupportSet s = random_support(rng, 5);
      gp::GpPosterior post = gp::fit_posterior(s, p);
      Matrix want = oracle::gauss_jordan_inverse(post.k_mat) * (s.values - post.m_vec);
      CHECK((post.alpha - want).cwiseAbs().maxCoeff() <= 1e-8);
      // alpha satisfies the linear system
      CHECK((post.k_mat * post.alpha - (s.values - post.m_vec)).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }

  SUBCASE("duplicate location with different values stays finite") {
    gp::SupportSet s = random_support(rng, 4);
    s.locations.row(1) = s.locations.row(0);
    s.values(1, 0) = s.values(0, 0) + 1.0;
    gp::GpPosterior post = gp::fit_posterior(s, p);
    CHECK(post.alpha.allFinite());
    CHECK(post.jitter_used > 0.0);  // exact duplicates need the escalation path
  }
}

TEST_CASE("predict: interpolation, permutation invariance, oracle") {
  std::mt19937_64 rng(5);
  gp::ModelParams p = gp::init_model(small_hyper(), 6);

  SUBCASE("N_S=1 query at the support point: mean exact, variance zero") {
    for (int rep = 0; rep < 100; ++rep) {
      gp::SupportSet s = random_support(rng, 1);
      gp::GpPosterior post = gp::fit_posterior(s, p);
      gp::PredictiveDistribution d = gp::predict(s.locations, post, p);
      CHECK(std::abs(d.mean - s.values(0, 0)) <= 1e-12);
      CHECK(d.variance >= 0.0);
      CHECK(d.variance <= 1e-12);
    }
  }

  SUBCASE("N_S=5 with floored noise: near interpolation at all support points") {
    gp::ModelParams pf = p;
    floor_noise(pf);
    for (int rep = 0; rep < 100; ++rep) {
      gp::SupportSet s = random_support(rng, 5);
      gp::GpPosterior post = gp::fit_posterior(s, pf);
      for (Eigen::Index i = 0; i < 5; ++i) {
        gp::PredictiveDistribution d = gp::predict(s.locations.row(i), post, pf);
        CHECK(std::abs(d.mean - s.values(i, 0)) <= 1e-3);
      }
    }
  }

  SUBCASE("permutation invariance of mean and variance") {
    gp::SupportSet s = random_support(rng, 6);
    Matrix q = oracle::randn(rng, 3, 2);
    Matrix mean1, var1, mean2, var2;
    gp::predict_batch(q, gp::fit_posterior(s, p), p, &mean1, &var1);

    gp::SupportSet perm;
    std::vector<int> order{5, 3, 0, 4, 1, 2};
    perm.locations = Matrix(6, 2);
    perm.values = Matrix(6, 1);
    for (int i = 0; i < 6; ++i) {
      perm.locations.row(i) = s.locations.row(order[i]);
      perm.values.row(i) = s.values.row(order[i]);
    }
    gp::predict_batch(q, gp::fit_posterior(perm, p), p, &mean2, &var2);
    CHECK((mean1 - mean2).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((var1 - var2).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("5-support/1-query against the dense-inverse oracle") {
    for (int rep = 0; rep < 30; ++rep) {
      gp::SupportSet s = random_support(rng, 5);
      Matrix q = oracle::randn(rng, 1, 2);
      gp::GpPosterior post = gp::fit_posterior(s, p);
      gp::PredictiveDistribution d = gp::predict(q, post, p);

      Matrix z = post.z;
      Matrix kinv = oracle::gauss_jordan_inverse(post.k_mat);
      Matrix kvec(5, 1);
      for (Eigen::Index i = 0; i < 5; ++i) {
        kvec(i, 0) = gp::kernel_value(q, s.locations.row(i), z, p);
      }
      const double mq = gp::mean_value(q, z, p);
      const double want_mean = mq + (kvec.transpose() * kinv * (s.values - post.m_vec))(0, 0);
      const double want_var =
          gp::kernel_value(q, q, z, p) - (kvec.transpose() * kinv * kvec)(0, 0);
      CHECK(d.mean == doctest::Approx(want_mean).epsilon(1e-8));
      CHECK(d.variance == doctest::Approx(std::max(0.0, want_var)).epsilon(1e-8));
    }
  }
}

TEST_CASE("far-field limit: mean falls back to f_m, variance to 1 + f_b") {
  std::mt19937_64 rng(6);
  gp::ModelParams p = gp::init_model(small_hyper(), 7);
  spread_embeddings(p);

  gp::SupportSet s;
  s.locations = Matrix(4, 2);
  s.locations << 0.5, 0.1, 1.0, -0.3, 1.5, 0.2, 2.0, 0.4;  // x1 spread >= 0.5 apart
  s.values = oracle::randn(rng, 4, 1);
  gp::GpPosterior post = gp::fit_posterior(s, p);

  Matrix q(1, 2);
  q << 0.0, 0.7;  // embedding ~40 while nearest support embedding ~240
  gp::PredictiveDistribution d = gp::predict(q, post, p);
  const double want_mean = gp::mean_value(q, post.z, p);
  CHECK(std::abs(d.mean - want_mean) <= 1e-10);
  CHECK(std::abs(d.variance - (1.0 + post.noise_b)) <= 1e-10);
}

TEST_CASE("kernel matrix stays factorizable over 1000 random draws") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> n_dist(1, 8);
  for (int rep = 0; rep < 1000; ++rep) {
    gp::ModelParams p = gp::init_model(small_hyper(), rep);
    gp::SupportSet s = random_support(rng, n_dist(rng));
    if (rep % 5 == 0 && s.size() >= 2) {
      s.locations.row(1) = s.locations.row(0);  // force a duplicate
    }
    gp::GpPosterior post = gp::fit_posterior(s, p);
    CHECK(post.alpha.allFinite());
  }
}

TEST_CASE("variance is a Schur complement: raw quad term below prior variance") {
  std::mt19937_64 rng(8);
  gp::ModelParams p = gp::init_model(small_hyper(), 9);
  Tape t(false);
  gp::ModelVars model = gp::lift_model(t, p);
  for (int rep = 0; rep < 50; ++rep) {
    gp::SupportSet s = random_support(rng, 5);
    Matrix q = oracle::randn(rng, 4, 2);
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, q);
    CHECK(g.var_raw.value().minCoeff() >= -1e-8);
  }
}

TEST_CASE("ZeroMean equals Full with f_m forced to zero") {
  std::mt19937_64 rng(9);
  gp::ModelParams full = gp::init_model(small_hyper(), 12);
  for (Matrix& w : full.f_m.weights) w.setZero();
  for (Matrix& b : full.f_m.biases) b.setZero();
  gp::ModelParams zero = full;
  zero.hyper.mode = gp::AblationMode::kZeroMean;

  gp::SupportSet s = random_support(rng, 5);
  Matrix q = oracle::randn(rng, 6, 2);
  Matrix mean_f, var_f, mean_z, var_z;
  gp::predict_batch(q, gp::fit_posterior(s, full), full, &mean_f, &var_f);
  gp::predict_batch(q, gp::fit_posterior(s, zero), zero, &mean_z, &var_z);
  CHECK(mean_f == mean_z);
  CHECK(var_f == var_z);
}

TEST_CASE("loss_mse: interpolated queries, constant offset, scalar oracle") {
  std::mt19937_64 rng(10);
  gp::ModelParams p = gp::init_model(small_hyper(), 13);
  Tape t(false);
  gp::ModelVars model = gp::lift_model(t, p);

  SUBCASE("queries duplicated from the sole support point cost nothing") {
    gp::SupportSet s = random_support(rng, 1);
    Matrix q = s.locations;
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, q);
    CHECK(gp::loss_mse(t, g, s.values).scalar() <= 1e-20);
  }

  SUBCASE("constant offset of one costs one") {
    gp::SupportSet s = random_support(rng, 4);
    Matrix q = oracle::randn(rng, 5, 2);
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, q);
    Matrix y = g.pred_mean.value().array() - 1.0;
    CHECK(gp::loss_mse(t, g, y).scalar() == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("matches scalar recomputation from predict") {
    gp::SupportSet s = random_support(rng, 5);
    Matrix q = oracle::randn(rng, 7, 2);
    Matrix y = oracle::randn(rng, 7, 1);
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, q);
    const double got = gp::loss_mse(t, g, y).scalar();
    gp::GpPosterior post = gp::fit_posterior(s, p);
    double want = 0.0;
    for (Eigen::Index i = 0; i < 7; ++i) {
      const double err = gp::predict(q.row(i), post, p).mean - y(i, 0);
      want += err * err;
    }
    want /= 7.0;
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("loss_nll: closed form at unit variance and scalar oracle") {
  std::mt19937_64 rng(11);

  SUBCASE("far-field queries with floored noise give the 0.5 log 2pi term") {
    gp::ModelParams p = gp::init_model(small_hyper(), 14);
    spread_embeddings(p);
    floor_noise(p);
    Tape t(false);
    gp::ModelVars model = gp::lift_model(t, p);
    gp::SupportSet s;
    s.locations = Matrix(2, 2);
    s.locations << 1.0, 0.0, 2.0, 0.0;
    s.values = oracle::randn(rng, 2, 1);
    Matrix q(1, 2);
    q << 0.0, 0.3;
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, q);
    Matrix y = g.pred_mean.value();  // y == mean: only the log term remains
    const double got = gp::loss_nll(t, g, y).scalar();
    CHECK(got == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-5));
  }

  SUBCASE("matches a scalar recomputation with the variance floor") {
    gp::ModelParams p = gp::init_model(small_hyper(), 15);
    Tape t(false);
    gp::ModelVars model = gp::lift_model(t, p);
    gp::SupportSet s = random_support(rng, 5);
    Matrix q = oracle::randn(rng, 6, 2);
    Matrix y = oracle::randn(rng, 6, 1);
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, q);
    const double got = gp::loss_nll(t, g, y).scalar();

    const Matrix mean = g.pred_mean.value();
    const Matrix raw = g.var_raw.value();
    double want = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i) {
      const double s2 = std::max(raw(i, 0), 1e-8);
      const double d = y(i, 0) - mean(i, 0);
      want += 0.5 * std::log(2.0 * std::numbers::pi * s2) + d * d / (2.0 * s2);
    }
    want /= 6.0;
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("marginal log likelihood: scalar closed form, diagonal case, oracle") {
  std::mt19937_64 rng(12);
  gp::ModelParams p = gp::init_model(small_hyper(), 16);

  SUBCASE("N_S = 1 closed form") {
    Tape t(false);
    gp::ModelVars model = gp::lift_model(t, p);
    gp::SupportSet s = random_support(rng, 1);
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, Matrix(0, 0));
    const double c = g.k_mat.value()(0, 0);
    const double r = g.residual.value()(0, 0);
    const double want =
        -0.5 * r * r / c - 0.5 * std::log(c) - 0.5 * std::log(2.0 * std::numbers::pi);
    CHECK(gp::marginal_log_likelihood(t, g, s).scalar() ==
          doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("far-apart support decomposes into independent scalar densities") {
    gp::ModelParams pf = gp::init_model(small_hyper(), 17);
    spread_embeddings(pf);
    Tape t(false);
    gp::ModelVars model = gp::lift_model(t, pf);
    gp::SupportSet s;
    s.locations = Matrix(3, 2);
    s.locations << 0.0, 0.1, 1.0, 0.2, 2.0, 0.3;
    s.values = oracle::randn(rng, 3, 1);
    gp::EpisodeGraph g = gp::build_episode_graph(t, model, pf.hyper, s, Matrix(0, 0));
    const double got = gp::marginal_log_likelihood(t, g, s).scalar();
    const Matrix r = g.residual.value();
    const double v = 1.0 + g.noise_b.scalar();
    double want = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i) {
      want += -0.5 * r(i, 0) * r(i, 0) / v - 0.5 * std::log(2.0 * std::numbers::pi * v);
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }

  SUBCASE("5-point support against Gauss-Jordan and LU logdet") {
    Tape t(false);
    gp::ModelVars model = gp::lift_model(t, p);
    for (int rep = 0; rep < 30; ++rep) {
      gp::SupportSet s = random_support(rng, 5);
      gp::EpisodeGraph g = gp::build_episode_graph(t, model, p.hyper, s, Matrix(0, 0));
      const double got = gp::marginal_log_likelihood(t, g, s).scalar();
      const Matrix k = g.k_mat.value();
      const Matrix r = g.residual.value();
      const double want = -0.5 * (r.transpose() * oracle::gauss_jordan_inverse(k) * r)(0, 0) -
                          0.5 * oracle::logdet_lu(k) -
                          2.5 * std::log(2.0 * std::numbers::pi);
      CHECK(got == doctest::Approx(want).epsilon(1e-8));
    }
  }
}

TEST_CASE("episode losses pass the finite-difference gradient check") {
  std::mt19937_64 rng(13);
  gp::ModelHyper h = small_hyper();
  gp::ModelParams p = gp::init_model(h, 18);
  gp::Episode ep;
  ep.support = random_support(rng, 4);
  ep.query_x = oracle::randn(rng, 5, 2);
  ep.query_y = oracle::randn(rng, 5, 1);

  for (gp::Objective obj :
       {gp::Objective::kErr, gp::Objective::kLike, gp::Objective::kMarLike}) {
    std::vector<Matrix*> leaves = p.flat();
    auto loss = [&]() {
      Tape t;
      gp::ModelVars model = gp::lift_model(t, p);
      return gp::episode_loss(t, model, h, ep, obj).scalar();
    };
    auto grads = [&]() {
      Tape t;
      gp::ModelVars model = gp::lift_model(t, p);
      ad::Gradients g = ad::backward(gp::episode_loss(t, model, h, ep, obj));
      std::vector<Matrix> r;
      for (const Var& v : model.leaves()) r.push_back(g(v));
      return r;
    };
    ad::FdReport rep = ad::finite_difference_check(loss, grads, leaves);
    CHECK(rep.checked > 100);
    CHECK(rep.max_rel_error <= 1e-4);
  }
}
