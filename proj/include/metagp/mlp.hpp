#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "metagp/tape.hpp"

namespace metagp::nn {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class OutputTransform {
  kIdentity,
  kSoftplusPositive,  // softplus(out) + 1e-6: strictly positive scalar head
};

// Feed-forward network description: widths run input -> hidden... -> output,
// ReLU on hidden layers, inverted dropout after each hidden activation.
struct MlpSpec {
  std::vector<int> widths;
  OutputTransform output = OutputTransform::kIdentity;
  double dropout = 0.0;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int hidden_layers() const { return static_cast<int>(widths.size()) - 2; }

  // Throws ConfigError: needs >= 1 hidden layer, positive widths, dropout in [0,1).
  void validate() const;
};

// Plain parameter storage. Weight l is widths[l] x widths[l+1] (inputs are row
// batches), bias l is 1 x widths[l+1].
struct MlpParams {
  MlpSpec spec;
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

// He-initialized parameters: W ~ N(0, 2/fan_in), biases zero. Deterministic
// in `seed`.
MlpParams init_mlp(const MlpSpec& spec, std::uint64_t seed);

// Parameters lifted onto a tape as differentiable leaves.
struct MlpVars {
  MlpSpec spec;
  std::vector<Var> weights;
  std::vector<Var> biases;
};

MlpVars lift_params(Tape& tape, const MlpParams& params);

// Batched forward pass: x is N x input_dim, result N x output_dim. In train
// mode each hidden unit is zeroed with probability spec.dropout and survivors
// scaled by 1/(1-p); rng is required exactly then. Inference mode ignores rng.
Var forward(Tape& tape, const MlpVars& net, const Var& x, bool train_mode = false,
            std::mt19937_64* rng = nullptr);

// Convenience: forward pass on plain matrices (no gradients, no dropout).
Matrix forward_inference(const MlpParams& params, const Matrix& x);

}  // namespace metagp::nn
