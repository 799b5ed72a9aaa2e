#include "metagp/adam.hpp"

#include <cmath>
#include <string>

#include "metagp/errors.hpp"

namespace metagp::nn {

void Adam::step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters vs " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (m_.empty()) {
    for (const ad::Matrix* p : params) {
      m_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(ad::Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (params.size() != m_.size()) {
    throw ShapeError("adam: parameter count changed between steps");
  }
  ++t_;
  const double corr1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double corr2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Matrix& theta = *params[i];
    const ad::Matrix& g = grads[i];
    if (theta.rows() != g.rows() || theta.cols() != g.cols()) {
      throw ShapeError("adam: gradient shape mismatch for parameter " + std::to_string(i));
    }
    if (!g.allFinite()) {
      throw NumericalError("adam: non-finite gradient for parameter " + std::to_string(i) +
                           " (" + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                           ")");
    }
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const ad::Matrix m_hat = m_[i] / corr1;
    const ad::Matrix v_hat = v_[i] / corr2;
    theta -= config_.lr * (m_hat.array() / (v_hat.array().sqrt() + config_.eps)).matrix();
    if (!theta.allFinite()) {
      throw NumericalError("adam: non-finite value in parameter " + std::to_string(i) +
                           " after update");
    }
  }
}

}  // namespace metagp::nn
