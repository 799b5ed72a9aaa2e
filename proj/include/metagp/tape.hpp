#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "metagp/errors.hpp"

namespace metagp::ad {

using Matrix = Eigen::MatrixXd;

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kRelu,
  kExp,
  kLog,
  kSoftplus,
  kNegate,
  kSum,
  kMean,
  kHcat,
  kSqdist,
  kTranspose,
  kDot,
  kCholFactor,
  kTriSolve,
  kCholSolve,
  kCholLogdet,
};

std::string_view op_name(Op op);

class Tape;

// Handle to a value on (or computed through) a Tape. In recording mode it
// refers to a tape node; in inference mode it carries the value directly and
// nothing is appended to the tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;  // requires 1x1

  bool valid() const { return tape_ != nullptr; }
  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  friend Var record(Tape* tape, Op op, Matrix value, const Var& a, const Var& b,
                    std::shared_ptr<const Matrix> factor, bool lower);
  Var(Tape* tape, int node) : tape_(tape), node_(node) {}
  Var(Tape* tape, Matrix value)
      : tape_(tape), local_(std::make_shared<Matrix>(std::move(value))) {}

  Tape* tape_ = nullptr;
  int node_ = -1;
  std::shared_ptr<const Matrix> local_;
};

struct Node {
  Op op = Op::kLeaf;
  Matrix value;
  Matrix grad;  // same shape as value, zero until backward touches it
  std::array<int, 2> parents{-1, -1};
  std::shared_ptr<const Matrix> factor;  // lower Cholesky factor for kChol* ops
  bool lower = true;                     // triangular-solve side
};

// Read-only view of the gradients accumulated by backward().
class Gradients {
 public:
  const Matrix& operator()(const Var& v) const;

 private:
  friend Gradients backward(const Var& output);
  explicit Gradients(const Tape* tape) : tape_(tape) {}
  const Tape* tape_;
};

// Reverse-mode tape over dense double matrices. Nodes are stored in creation
// order, which is a topological order of the (acyclic) graph; backward walks
// it once in reverse. A Tape is single-threaded; distinct Tapes over shared
// read-only parameter values may run concurrently.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Drops all nodes (mode is kept). Invalidates outstanding Vars.
  void reset() { nodes_.clear(); }

  // Inserts a differentiable leaf (parameter or data constant).
  Var leaf(Matrix value);
  Var constant(Matrix value) { return leaf(std::move(value)); }
  Var scalar(double v) { return leaf(Matrix::Constant(1, 1, v)); }

  const Node& node(int i) const { return nodes_[i]; }
  const Matrix& grad(const Var& v) const;

 private:
  friend class Var;
  friend Gradients backward(const Var& output);
  friend Var record(Tape* tape, Op op, Matrix value, const Var& a, const Var& b,
                    std::shared_ptr<const Matrix> factor, bool lower);

  bool recording_;
  std::vector<Node> nodes_;
};

// Primitive operations. Shapes are validated against the primitive's rule and
// every produced value is rejected if non-finite, so NaN/Inf surface at the
// op that created them.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);  // equal shapes, or either side 1x1
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise, same broadcast rule
Var relu(const Var& a);               // gradient at 0 is 0
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var negate(const Var& a);
Var sum(const Var& a);        // 1x1
Var mean(const Var& a);       // 1x1, mean over all entries
Var hcat(const Var& a, const Var& b);  // row-wise concatenation [a | b]
Var transpose(const Var& a);
Var dot(const Var& a, const Var& b);  // Frobenius inner product, 1x1

// D(i,j) = squared euclidean distance between row i of a and row j of b.
// When a and b are the same node the diagonal is exactly zero.
Var sqdist(const Var& a, const Var& b);

// Lower Cholesky factor of a symmetric positive definite matrix.
Var cholesky_factor(const Var& a);

// X with T X = B for triangular T (lower or upper).
Var triangular_solve(const Var& t, const Var& b, bool lower);

// X with A X = B for symmetric positive definite A, via one Cholesky
// factorization. Backward uses the linear-solve adjoint:
//   grad_B = A^{-1} G,  grad_A = -sym(A^{-1} G X^T).
// With jitter enabled, factorization failures retry with an escalating
// diagonal shift (1e-10 to 1e-6, x10 steps) before raising NumericalError.
Var cholesky_solve(const Var& a, const Var& b, bool jitter = false);

// log det A for symmetric positive definite A; adjoint is g * A^{-1}.
Var cholesky_logdet(const Var& a, bool jitter = false);

// Seeds d(output)/d(output) = 1 and accumulates adjoints into every node.
// Requires a 1x1 output on a recording tape.
Gradients backward(const Var& output);

namespace detail {

// In-place lower Cholesky of the lower triangle of a. Returns 0 on success,
// else the 1-based index of the first non-positive leading minor. The
// strictly upper part is left untouched (as in LAPACK's dpotrf); use
// factor_spd when a clean lower-triangular matrix is needed.
int cholesky_inplace(Matrix& a);

// Factorization with the escalating-jitter policy described above.
// On success returns the lower factor; jitter_used reports the shift applied.
struct SpdFactor {
  Matrix lower;
  double jitter_used = 0.0;
};
SpdFactor factor_spd(const Matrix& a, bool jitter, std::string_view what);

// Solves A X = B given the lower factor of A.
Matrix solve_with_factor(const Matrix& lower, const Matrix& b);

}  // namespace detail

}  // namespace metagp::ad
