#include "metagp/mlp.hpp"

#include <cmath>

#include "metagp/errors.hpp"

namespace metagp::nn {

void MlpSpec::validate() const {
  if (widths.size() < 3) {
    throw ConfigError("MlpSpec: need input, at least one hidden, and output width (got " +
                      std::to_string(widths.size()) + " widths)");
  }
  for (int w : widths) {
    if (w <= 0) throw ConfigError("MlpSpec: widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("MlpSpec: dropout must lie in [0, 1)");
  }
}

MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  MlpParams p;
  p.spec = spec;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = he(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Matrix::Zero(1, fan_out));
  }
  return p;
}

MlpVars lift_params(Tape& tape, const MlpParams& params) {
  MlpVars v;
  v.spec = params.spec;
  for (const Matrix& w : params.weights) v.weights.push_back(tape.leaf(w));
  for (const Matrix& b : params.biases) v.biases.push_back(tape.leaf(b));
  return v;
}

namespace {

// Row-broadcast bias add via an explicit ones column: X W + 1 b.
Var add_bias(Tape& tape, const Var& h, const Var& bias) {
  Var ones = tape.constant(Matrix::Ones(h.rows(), 1));
  return ad::add(h, ad::matmul(ones, bias));
}

Matrix dropout_mask(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng) < p ? 0.0 : keep_scale;
  }
  return m;
}

}  // namespace

Var forward(Tape& tape, const MlpVars& net, const Var& x, bool train_mode,
            std::mt19937_64* rng) {
  net.spec.validate();
  if (x.cols() != net.spec.input_dim()) {
    throw ShapeError("mlp forward: input has width " + std::to_string(x.cols()) +
                     ", spec expects " + std::to_string(net.spec.input_dim()));
  }
  const bool dropping = train_mode && net.spec.dropout > 0.0;
  if (dropping && rng == nullptr) {
    throw ConfigError("mlp forward: train mode with dropout needs an rng");
  }
  Var h = x;
  const std::size_t layers = net.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = add_bias(tape, ad::matmul(h, net.weights[l]), net.biases[l]);
    if (l + 1 < layers) {
      h = ad::relu(h);
      if (dropping) {
        h = ad::mul(h, tape.constant(dropout_mask(*rng, h.rows(), h.cols(),
                                                  net.spec.dropout)));
      }
    }
  }
  if (net.spec.output == OutputTransform::kSoftplusPositive) {
    h = ad::add(ad::softplus(h), tape.scalar(1e-6));
  }
  return h;
}

Matrix forward_inference(const MlpParams& params, const Matrix& x) {
  Tape tape(false);
  MlpVars net = lift_params(tape, params);
  return forward(tape, net, tape.leaf(x)).value();
}

}  // namespace metagp::nn
