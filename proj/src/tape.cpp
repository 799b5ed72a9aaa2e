#include "metagp/tape.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace metagp::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void throw_shape(Op op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

void check_finite(Op op, const Matrix& m) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(op_name(op)) + ": non-finite value produced");
  }
}

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

bool same_shape(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

void check_elementwise(Op op, const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b) && !is_scalar(a) && !is_scalar(b)) throw_shape(op, a, b);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tape* common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw ShapeError("operands belong to different (or no) tapes");
  }
  return a.tape();
}

Tape* own_tape(const Var& a) {
  if (!a.valid()) throw ShapeError("operand is not bound to a tape");
  return a.tape();
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "subtract";
    case Op::kMul: return "elementwise-multiply";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSoftplus: return "softplus";
    case Op::kNegate: return "negate";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kHcat: return "row-concatenate";
    case Op::kSqdist: return "squared-euclidean-distance-matrix";
    case Op::kTranspose: return "transpose";
    case Op::kDot: return "dot";
    case Op::kCholFactor: return "cholesky-factor";
    case Op::kTriSolve: return "triangular-solve";
    case Op::kCholSolve: return "cholesky-solve";
    case Op::kCholLogdet: return "cholesky-logdet";
  }
  return "?";
}

const Matrix& Var::value() const {
  if (node_ >= 0) return tape_->node(node_).value;
  if (!local_) throw ShapeError("Var: value of a default-constructed handle");
  return *local_;
}

double Var::scalar() const {
  const Matrix& v = value();
  if (!is_scalar(v)) throw ShapeError("scalar(): value is " + shape_str(v) + ", not 1x1");
  return v(0, 0);
}

Var Tape::leaf(Matrix value) {
  check_finite(Op::kLeaf, value);
  if (!recording_) return Var(this, std::move(value));
  Node n;
  n.op = Op::kLeaf;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::grad(const Var& v) const {
  if (!v.on_tape() || v.tape() != this) {
    throw ShapeError("grad: Var is not a node of this tape");
  }
  return nodes_[v.node()].grad;
}

const Matrix& Gradients::operator()(const Var& v) const { return tape_->grad(v); }

// Appends a computed node (recording) or wraps the value (inference).
Var record(Tape* tape, Op op, Matrix value, const Var& a, const Var& b,
           std::shared_ptr<const Matrix> factor = nullptr, bool lower = true) {
  check_finite(op, value);
  if (!tape->recording_) return Var(tape, std::move(value));
  Node n;
  n.op = op;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.parents = {a.node(), b.valid() ? b.node() : -1};
  n.factor = std::move(factor);
  n.lower = lower;
  tape->nodes_.push_back(std::move(n));
  return Var(tape, static_cast<int>(tape->nodes_.size()) - 1);
}

Var matmul(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw_shape(Op::kMatmul, av, bv);
  return record(t, Op::kMatmul, av * bv, a, b);
}

Var add(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_elementwise(Op::kAdd, av, bv);
  Matrix out;
  if (same_shape(av, bv)) out = av + bv;
  else if (is_scalar(av)) out = bv.array() + av(0, 0);
  else out = av.array() + bv(0, 0);
  return record(t, Op::kAdd, std::move(out), a, b);
}

Var sub(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_elementwise(Op::kSub, av, bv);
  Matrix out;
  if (same_shape(av, bv)) out = av - bv;
  else if (is_scalar(av)) out = av(0, 0) - bv.array();
  else out = av.array() - bv(0, 0);
  return record(t, Op::kSub, std::move(out), a, b);
}

Var mul(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  check_elementwise(Op::kMul, av, bv);
  Matrix out;
  if (same_shape(av, bv)) out = av.cwiseProduct(bv);
  else if (is_scalar(av)) out = bv * av(0, 0);
  else out = av * bv(0, 0);
  return record(t, Op::kMul, std::move(out), a, b);
}

Var relu(const Var& a) {
  return record(own_tape(a), Op::kRelu, a.value().cwiseMax(0.0), a, Var());
}

Var exp(const Var& a) {
  return record(own_tape(a), Op::kExp, a.value().array().exp().matrix(), a, Var());
}

Var log(const Var& a) {
  return record(own_tape(a), Op::kLog, a.value().array().log().matrix(), a, Var());
}

Var softplus(const Var& a) {
  return record(own_tape(a), Op::kSoftplus,
                a.value().unaryExpr([](double x) { return stable_softplus(x); }), a, Var());
}

Var negate(const Var& a) {
  return record(own_tape(a), Op::kNegate, -a.value(), a, Var());
}

Var sum(const Var& a) {
  return record(own_tape(a), Op::kSum, Matrix::Constant(1, 1, a.value().sum()), a, Var());
}

Var mean(const Var& a) {
  return record(own_tape(a), Op::kMean, Matrix::Constant(1, 1, a.value().mean()), a, Var());
}

Var hcat(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) throw_shape(Op::kHcat, av, bv);
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  return record(t, Op::kHcat, std::move(out), a, b);
}

Var transpose(const Var& a) {
  return record(own_tape(a), Op::kTranspose, a.value().transpose(), a, Var());
}

Var dot(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!same_shape(av, bv)) throw_shape(Op::kDot, av, bv);
  return record(t, Op::kDot, Matrix::Constant(1, 1, av.cwiseProduct(bv).sum()), a, b);
}

Var sqdist(const Var& a, const Var& b) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) throw_shape(Op::kSqdist, av, bv);
  Matrix d = -2.0 * (av * bv.transpose());
  d.colwise() += av.rowwise().squaredNorm();
  d.rowwise() += bv.rowwise().squaredNorm().transpose();
  d = d.cwiseMax(0.0);  // clamp round-off for near-identical rows
  const bool same_operand = (a.on_tape() && b.on_tape() && a.node() == b.node()) || &av == &bv;
  if (same_operand) d.diagonal().setZero();
  return record(t, Op::kSqdist, std::move(d), a, b);
}

Var cholesky_factor(const Var& a) {
  Tape* t = own_tape(a);
  auto f = detail::factor_spd(a.value(), /*jitter=*/false, op_name(Op::kCholFactor));
  return record(t, Op::kCholFactor, f.lower, a, Var());
}

Var triangular_solve(const Var& t, const Var& b, bool lower) {
  Tape* tape = common_tape(t, b);
  const Matrix& tv = t.value();
  const Matrix& bv = b.value();
  if (tv.rows() != tv.cols() || tv.rows() != bv.rows()) throw_shape(Op::kTriSolve, tv, bv);
  Matrix x;
  if (lower) x = tv.triangularView<Eigen::Lower>().solve(bv);
  else x = tv.triangularView<Eigen::Upper>().solve(bv);
  return record(tape, Op::kTriSolve, std::move(x), t, b, nullptr, lower);
}

Var cholesky_solve(const Var& a, const Var& b, bool jitter) {
  Tape* t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != av.cols() || av.rows() != bv.rows()) throw_shape(Op::kCholSolve, av, bv);
  auto f = detail::factor_spd(av, jitter, op_name(Op::kCholSolve));
  auto factor = std::make_shared<const Matrix>(std::move(f.lower));
  Matrix x = detail::solve_with_factor(*factor, bv);
  return record(t, Op::kCholSolve, std::move(x), a, b, std::move(factor));
}

Var cholesky_logdet(const Var& a, bool jitter) {
  const Matrix& av = a.value();
  if (av.rows() != av.cols()) {
    throw ShapeError(std::string(op_name(Op::kCholLogdet)) + ": matrix is " + shape_str(av));
  }
  auto f = detail::factor_spd(av, jitter, op_name(Op::kCholLogdet));
  auto factor = std::make_shared<const Matrix>(std::move(f.lower));
  double logdet = 2.0 * factor->diagonal().array().log().sum();
  return record(own_tape(a), Op::kCholLogdet, Matrix::Constant(1, 1, logdet), a, Var(),
                std::move(factor));
}

namespace {

// Adds g into the accumulator of parent p, reducing over broadcast if p is 1x1.
void accumulate(Node& parent, const Matrix& g) {
  if (is_scalar(parent.grad) && !is_scalar(g)) {
    parent.grad(0, 0) += g.sum();
  } else {
    parent.grad += g;
  }
}

void backward_node(std::vector<Node>& nodes, int idx) {
  Node& n = nodes[idx];
  const Matrix& g = n.grad;
  Node* pa = n.parents[0] >= 0 ? &nodes[n.parents[0]] : nullptr;
  Node* pb = n.parents[1] >= 0 ? &nodes[n.parents[1]] : nullptr;

  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kMatmul:
      pa->grad += g * pb->value.transpose();
      pb->grad += pa->value.transpose() * g;
      return;
    case Op::kAdd:
      accumulate(*pa, g);
      accumulate(*pb, g);
      return;
    case Op::kSub:
      accumulate(*pa, g);
      accumulate(*pb, -g);
      return;
    case Op::kMul:
      if (same_shape(pa->value, pb->value)) {
        pa->grad += g.cwiseProduct(pb->value);
        pb->grad += g.cwiseProduct(pa->value);
      } else if (is_scalar(pa->value)) {
        pa->grad(0, 0) += g.cwiseProduct(pb->value).sum();
        pb->grad += g * pa->value(0, 0);
      } else {
        pb->grad(0, 0) += g.cwiseProduct(pa->value).sum();
        pa->grad += g * pb->value(0, 0);
      }
      return;
    case Op::kRelu:
      pa->grad += g.cwiseProduct(
          (pa->value.array() > 0.0).cast<double>().matrix());
      return;
    case Op::kExp:
      pa->grad += g.cwiseProduct(n.value);
      return;
    case Op::kLog:
      pa->grad += g.cwiseQuotient(pa->value);
      return;
    case Op::kSoftplus:
      pa->grad += g.cwiseProduct(pa->value.unaryExpr(
          [](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
      return;
    case Op::kNegate:
      pa->grad -= g;
      return;
    case Op::kSum:
      pa->grad.array() += g(0, 0);
      return;
    case Op::kMean:
      pa->grad.array() += g(0, 0) / static_cast<double>(pa->value.size());
      return;
    case Op::kHcat:
      pa->grad += g.leftCols(pa->value.cols());
      pb->grad += g.rightCols(pb->value.cols());
      return;
    case Op::kTranspose:
      pa->grad += g.transpose();
      return;
    case Op::kDot:
      pa->grad += g(0, 0) * pb->value;
      pb->grad += g(0, 0) * pa->value;
      return;
    case Op::kSqdist: {
      // D_ij = |a_i|^2 - 2 a_i.b_j + |b_j|^2
      const Matrix& a = pa->value;
      const Matrix& b = pb->value;
      Matrix ga = 2.0 * (g.rowwise().sum().asDiagonal() * a - g * b);
      Matrix gb = 2.0 * (g.colwise().sum().transpose().asDiagonal() * b - g.transpose() * a);
      pa->grad += ga;
      pb->grad += gb;
      return;
    }
    case Op::kCholFactor: {
      // Murray-style reverse rule with the result symmetrized, which is exact
      // when the input is built as a symmetric expression upstream. The
      // factor's upper part is identically zero, so adjoints there are inert.
      const Matrix& l = n.value;
      Matrix g_low = g.triangularView<Eigen::Lower>();
      Matrix p = l.transpose() * g_low;
      Matrix phi = p.triangularView<Eigen::StrictlyLower>();
      phi += 0.5 * p.diagonal().asDiagonal();
      Matrix z = l.triangularView<Eigen::Lower>().transpose().solve(phi);
      Matrix w = l.triangularView<Eigen::Lower>().transpose().solve(z.transpose()).transpose();
      pa->grad += 0.5 * (w + w.transpose());
      return;
    }
    case Op::kTriSolve: {
      Matrix s;
      if (n.lower) s = pa->value.triangularView<Eigen::Lower>().transpose().solve(g);
      else s = pa->value.triangularView<Eigen::Upper>().transpose().solve(g);
      Matrix gt = -(s * n.value.transpose());
      Matrix masked = n.lower ? Matrix(gt.triangularView<Eigen::Lower>())
                              : Matrix(gt.triangularView<Eigen::Upper>());
      pa->grad += masked;
      pb->grad += s;
      return;
    }
    case Op::kCholSolve: {
      Matrix s = detail::solve_with_factor(*n.factor, g);
      pa->grad += -0.5 * (s * n.value.transpose() + n.value * s.transpose());
      pb->grad += s;
      return;
    }
    case Op::kCholLogdet: {
      Eigen::Index k = n.factor->rows();
      Matrix ainv = detail::solve_with_factor(*n.factor, Matrix::Identity(k, k));
      pa->grad += g(0, 0) * 0.5 * (ainv + ainv.transpose());
      return;
    }
  }
}

}  // namespace

Gradients backward(const Var& output) {
  Tape* tape = output.tape();
  if (tape == nullptr || !output.on_tape()) {
    throw ShapeError("backward: output is not on a recording tape");
  }
  if (!tape->recording()) {
    throw ShapeError("backward: tape is in inference mode");
  }
  const Matrix& out = output.value();
  if (!is_scalar(out)) {
    throw ShapeError("backward: output is " + shape_str(out) + ", expected 1x1");
  }
  std::vector<Node>& nodes = tape->nodes_;
  for (Node& n : nodes) n.grad.setZero();
  nodes[output.node()].grad(0, 0) = 1.0;
  for (int i = output.node(); i >= 0; --i) {
    if (nodes[i].grad.isZero(0.0)) continue;
    backward_node(nodes, i);
  }
  return Gradients(tape);
}

namespace detail {

int cholesky_inplace(Matrix& a) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return static_cast<int>(j) + 1;
    d = std::sqrt(d);
    a(j, j) = d;
    const double inv_d = 1.0 / d;  // one divide per column, not one per element
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s * inv_d;
    }
  }
  return 0;
}

SpdFactor factor_spd(const Matrix& a, bool jitter, std::string_view what) {
  if (a.rows() != a.cols()) {
    throw ShapeError(std::string(what) + ": matrix is " + shape_str(a) + ", expected square");
  }
  if (a.size() > 0) {
    const double scale = a.cwiseAbs().maxCoeff();
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + scale)) {
      throw NumericalError(std::string(what) + ": matrix is not symmetric");
    }
  }
  int minor = 0;
  SpdFactor out;
  out.lower = a;
  minor = cholesky_inplace(out.lower);
  if (minor == 0) {
    out.lower.triangularView<Eigen::StrictlyUpper>().setZero();
    return out;
  }
  if (jitter) {
    for (double eps = 1e-10; eps <= 1e-6 * 1.0000001; eps *= 10.0) {
      out.lower = a;
      out.lower.diagonal().array() += eps;
      minor = cholesky_inplace(out.lower);
      if (minor == 0) {
        out.jitter_used = eps;
        out.lower.triangularView<Eigen::StrictlyUpper>().setZero();
        return out;
      }
    }
  }
  throw NumericalError(std::string(what) + ": matrix not positive definite (leading minor " +
                           std::to_string(minor) + " failed" +
                           (jitter ? ", jitter exhausted at 1e-6)" : ")"),
                       minor);
}

Matrix solve_with_factor(const Matrix& lower, const Matrix& b) {
  Matrix x = lower.triangularView<Eigen::Lower>().solve(b);
  lower.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

}  // namespace detail

}  // namespace metagp::ad
