#include "picirc/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "picirc/errors.hpp"

namespace picirc::ad {

std::string_view to_string(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::parameter: return "parameter";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::tanh: return "tanh";
    case Op::softplus: return "softplus";
    case Op::sigmoid: return "sigmoid";
    case Op::logsumexp_rows: return "logsumexp_rows";
    case Op::log_matmul_exp: return "log_matmul_exp";
    case Op::sum: return "sum";
    case Op::gather_cols: return "gather_cols";
    case Op::reshape: return "reshape";
    case Op::interleave_cols: return "interleave_cols";
    case Op::round: return "round";
  }
  return "?";
}

const Matrix& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound autodiff variable");
  return tape_->value(*this);
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::Index broadcast_dim(Eigen::Index a, Eigen::Index b) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ArgumentError("incompatible shapes for broadcasting (" + std::to_string(a) + " vs " +
                      std::to_string(b) + ")");
}

Matrix broadcast(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  Matrix out = g;
  if (rows == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (cols == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

Var check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape() || !a.tape()) throw std::logic_error("variables live on different tapes");
  return a;
}

}  // namespace

// ---------------------------------------------------------------- tape

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.op = Op::parameter;
  n.value = value;
  n.needs_grad = true;
  Var v = push(std::move(n));
  parameters_.push_back(v.index());
  sources_.resize(nodes_.size(), nullptr);
  sources_[v.index()] = &value;
  return v;
}

Matrix Tape::adjoint(const Var& v) const {
  const auto& node = nodes_.at(v.index());
  if (v.index() < adjoints_.size() && adjoints_[v.index()].size() > 0) return adjoints_[v.index()];
  return Matrix::Zero(node.value.rows(), node.value.cols());
}

GradientMap Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("loss is not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw ArgumentError("backward needs a scalar loss");
  return backward({{loss, Matrix::Ones(1, 1)}});
}

GradientMap Tape::backward(const std::vector<std::pair<Var, Matrix>>& seeds) {
  adjoints_.assign(nodes_.size(), Matrix());
  for (const auto& [var, seed] : seeds) {
    if (var.tape() != this) throw std::logic_error("seed is not on this tape");
    const auto& node = nodes_[var.index()];
    if (seed.rows() != node.value.rows() || seed.cols() != node.value.cols())
      throw ArgumentError("seed shape does not match node shape");
    auto& adj = adjoints_[var.index()];
    if (adj.size() == 0) adj = seed;
    else adj += seed;
  }
  run_backward();
  GradientMap grads;
  for (std::size_t p : parameters_) {
    const Matrix* key = p < sources_.size() ? sources_[p] : nullptr;
    Matrix g = adjoints_[p].size() > 0 ? adjoints_[p]
                                       : Matrix::Zero(nodes_[p].value.rows(), nodes_[p].value.cols());
    auto it = grads.find(key);
    if (it == grads.end()) grads.emplace(key, std::move(g));
    else it->second += g;
  }
  return grads;
}

void Tape::run_backward() {
  auto accumulate = [this](std::size_t idx, const Matrix& g) {
    if (!nodes_[idx].needs_grad) return;
    auto& adj = adjoints_[idx];
    if (adj.size() == 0) adj = g;
    else adj += g;
  };

  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || adjoints_[i].size() == 0) continue;
    const Matrix& g = adjoints_[i];
    const Matrix& out = n.value;
    switch (n.op) {
      case Op::constant:
      case Op::parameter:
        break;
      case Op::add: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        accumulate(n.lhs, reduce_to(g, a.rows(), a.cols()));
        accumulate(n.rhs, reduce_to(g, b.rows(), b.cols()));
        break;
      }
      case Op::sub: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        accumulate(n.lhs, reduce_to(g, a.rows(), a.cols()));
        accumulate(n.rhs, -reduce_to(g, b.rows(), b.cols()));
        break;
      }
      case Op::mul: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        if (nodes_[n.lhs].needs_grad) {
          const Matrix gb = g.cwiseProduct(broadcast(b, g.rows(), g.cols()));
          accumulate(n.lhs, reduce_to(gb, a.rows(), a.cols()));
        }
        if (nodes_[n.rhs].needs_grad) {
          const Matrix ga = g.cwiseProduct(broadcast(a, g.rows(), g.cols()));
          accumulate(n.rhs, reduce_to(ga, b.rows(), b.cols()));
        }
        break;
      }
      case Op::scale:
        accumulate(n.lhs, g * n.scalar);
        break;
      case Op::matmul: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        if (nodes_[n.lhs].needs_grad) accumulate(n.lhs, g * b.transpose());
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, a.transpose() * g);
        break;
      }
      case Op::transpose:
        accumulate(n.lhs, g.transpose());
        break;
      case Op::sin:
        accumulate(n.lhs, g.cwiseProduct(nodes_[n.lhs].value.array().cos().matrix()));
        break;
      case Op::cos:
        accumulate(n.lhs, -g.cwiseProduct(nodes_[n.lhs].value.array().sin().matrix()));
        break;
      case Op::exp:
        accumulate(n.lhs, g.cwiseProduct(out));
        break;
      case Op::log:
        accumulate(n.lhs, g.cwiseQuotient(nodes_[n.lhs].value));
        break;
      case Op::tanh:
        accumulate(n.lhs, g.array() * (1.0 - out.array().square()));
        break;
      case Op::softplus:
        accumulate(n.lhs, g.cwiseProduct(nodes_[n.lhs].value.unaryExpr(&sigmoid_scalar)));
        break;
      case Op::sigmoid:
        accumulate(n.lhs, g.array() * out.array() * (1.0 - out.array()));
        break;
      case Op::logsumexp_rows: {
        const Matrix& a = nodes_[n.lhs].value;
        Matrix ga(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < a.rows(); ++r)
          for (Eigen::Index c = 0; c < a.cols(); ++c)
            ga(r, c) = out(r, 0) == kNegInf ? 0.0 : g(r, 0) * std::exp(a(r, c) - out(r, 0));
        accumulate(n.lhs, ga);
        break;
      }
      case Op::log_matmul_exp: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        Matrix gb = Matrix::Zero(b.rows(), b.cols());
        for (Eigen::Index col = 0; col < b.cols(); ++col)
          for (Eigen::Index j = 0; j < a.rows(); ++j) {
            if (out(j, col) == kNegInf || g(j, col) == 0.0) continue;
            for (Eigen::Index k = 0; k < a.cols(); ++k) {
              const double w = g(j, col) * std::exp(a(j, k) + b(k, col) - out(j, col));
              ga(j, k) += w;
              gb(k, col) += w;
            }
          }
        if (nodes_[n.lhs].needs_grad) accumulate(n.lhs, ga);
        if (nodes_[n.rhs].needs_grad) accumulate(n.rhs, gb);
        break;
      }
      case Op::sum: {
        const Matrix& a = nodes_[n.lhs].value;
        accumulate(n.lhs, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case Op::gather_cols: {
        const Matrix& a = nodes_[n.lhs].value;
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        for (std::size_t t = 0; t < n.indices.size(); ++t) ga.col(n.indices[t]) += g.col(t);
        accumulate(n.lhs, ga);
        break;
      }
      case Op::reshape: {
        const Matrix& a = nodes_[n.lhs].value;
        Matrix ga(a.rows(), a.cols());
        for (Eigen::Index flat = 0; flat < a.size(); ++flat)
          ga(flat / a.cols(), flat % a.cols()) = g(flat / g.cols(), flat % g.cols());
        accumulate(n.lhs, ga);
        break;
      }
      case Op::interleave_cols: {
        const Eigen::Index k = nodes_[n.lhs].value.cols();
        Matrix ga(g.rows(), k);
        Matrix gb(g.rows(), k);
        for (Eigen::Index c = 0; c < k; ++c) {
          ga.col(c) = g.col(2 * c);
          gb.col(c) = g.col(2 * c + 1);
        }
        accumulate(n.lhs, ga);
        accumulate(n.rhs, gb);
        break;
      }
      default:
        throw std::logic_error("no gradient defined for primitive '" + std::string(to_string(n.op)) +
                               "'");
    }
  }
}

// ---------------------------------------------------------------- primitives

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const auto& x = a.value();
  const auto& y = b.value();
  const auto r = broadcast_dim(x.rows(), y.rows());
  const auto c = broadcast_dim(x.cols(), y.cols());
  Tape::Node n;
  n.op = Op::add;
  n.value = broadcast(x, r, c) + broadcast(y, r, c);
  n.lhs = a.index();
  n.rhs = b.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad || t.nodes_[b.index()].needs_grad;
  return t.push(std::move(n));
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const auto& x = a.value();
  const auto& y = b.value();
  const auto r = broadcast_dim(x.rows(), y.rows());
  const auto c = broadcast_dim(x.cols(), y.cols());
  Tape::Node n;
  n.op = Op::sub;
  n.value = broadcast(x, r, c) - broadcast(y, r, c);
  n.lhs = a.index();
  n.rhs = b.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad || t.nodes_[b.index()].needs_grad;
  return t.push(std::move(n));
}

Var mul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const auto& x = a.value();
  const auto& y = b.value();
  const auto r = broadcast_dim(x.rows(), y.rows());
  const auto c = broadcast_dim(x.cols(), y.cols());
  Tape::Node n;
  n.op = Op::mul;
  n.value = broadcast(x, r, c).cwiseProduct(broadcast(y, r, c));
  n.lhs = a.index();
  n.rhs = b.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad || t.nodes_[b.index()].needs_grad;
  return t.push(std::move(n));
}

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  if (a.cols() != b.rows()) throw ArgumentError("matmul shape mismatch");
  Tape::Node n;
  n.op = Op::matmul;
  n.value = a.value() * b.value();
  n.lhs = a.index();
  n.rhs = b.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad || t.nodes_[b.index()].needs_grad;
  return t.push(std::move(n));
}

Var log_matmul_exp(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.cols() != y.rows()) throw ArgumentError("log_matmul_exp shape mismatch");
  Matrix out(x.rows(), y.cols());
  for (Eigen::Index col = 0; col < y.cols(); ++col)
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      double m = kNegInf;
      for (Eigen::Index k = 0; k < x.cols(); ++k) m = std::max(m, x(j, k) + y(k, col));
      if (m == kNegInf) {
        out(j, col) = kNegInf;
        continue;
      }
      double acc = 0.0;
      for (Eigen::Index k = 0; k < x.cols(); ++k) acc += std::exp(x(j, k) + y(k, col) - m);
      out(j, col) = m + std::log(acc);
    }
  Tape::Node n;
  n.op = Op::log_matmul_exp;
  n.value = std::move(out);
  n.lhs = a.index();
  n.rhs = b.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad || t.nodes_[b.index()].needs_grad;
  return t.push(std::move(n));
}

Var interleave_cols(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ArgumentError("interleave shape mismatch");
  Matrix out(x.rows(), 2 * x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    out.col(2 * c) = x.col(c);
    out.col(2 * c + 1) = y.col(c);
  }
  Tape::Node n;
  n.op = Op::interleave_cols;
  n.value = std::move(out);
  n.lhs = a.index();
  n.rhs = b.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad || t.nodes_[b.index()].needs_grad;
  return t.push(std::move(n));
}

#define PICIRC_UNARY(NAME, OP, EXPR)                 \
  Var NAME(const Var& a) {                           \
    Tape& t = *a.tape();                             \
    const Matrix& x = a.value();                     \
    Tape::Node n;                                    \
    n.op = OP;                                       \
    n.value = (EXPR);                                \
    n.lhs = a.index();                               \
    n.needs_grad = t.nodes_[a.index()].needs_grad;   \
    return t.push(std::move(n));                     \
  }

PICIRC_UNARY(transpose, Op::transpose, x.transpose())
PICIRC_UNARY(sin, Op::sin, x.array().sin().matrix())
PICIRC_UNARY(cos, Op::cos, x.array().cos().matrix())
PICIRC_UNARY(exp, Op::exp, x.array().exp().matrix())
PICIRC_UNARY(log, Op::log, x.array().log().matrix())
PICIRC_UNARY(tanh, Op::tanh, x.array().tanh().matrix())
PICIRC_UNARY(softplus, Op::softplus, x.unaryExpr(&softplus_scalar))
PICIRC_UNARY(sigmoid, Op::sigmoid, x.unaryExpr(&sigmoid_scalar))
PICIRC_UNARY(sum, Op::sum, Matrix::Constant(1, 1, x.sum()))
PICIRC_UNARY(round, Op::round, x.array().round().matrix())

#undef PICIRC_UNARY

Var logsumexp_rows(const Var& a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    if (m == kNegInf || std::isinf(m)) {
      out(r, 0) = m;
      continue;
    }
    out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  Tape::Node n;
  n.op = Op::logsumexp_rows;
  n.value = std::move(out);
  n.lhs = a.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad;
  return t.push(std::move(n));
}

Var scale(const Var& a, double factor) {
  Tape& t = *a.tape();
  Tape::Node n;
  n.op = Op::scale;
  n.value = a.value() * factor;
  n.lhs = a.index();
  n.scalar = factor;
  n.needs_grad = t.nodes_[a.index()].needs_grad;
  return t.push(std::move(n));
}

Var gather_cols(const Var& a, std::vector<int> indices) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    if (indices[c] < 0 || indices[c] >= x.cols()) throw ArgumentError("gather index out of range");
    out.col(c) = x.col(indices[c]);
  }
  Tape::Node n;
  n.op = Op::gather_cols;
  n.value = std::move(out);
  n.lhs = a.index();
  n.indices = std::move(indices);
  n.needs_grad = t.nodes_[a.index()].needs_grad;
  return t.push(std::move(n));
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  if (rows * cols != x.size()) throw ArgumentError("reshape changes the element count");
  Matrix out(rows, cols);
  for (Eigen::Index flat = 0; flat < x.size(); ++flat)
    out(flat / cols, flat % cols) = x(flat / x.cols(), flat % x.cols());
  Tape::Node n;
  n.op = Op::reshape;
  n.value = std::move(out);
  n.lhs = a.index();
  n.needs_grad = t.nodes_[a.index()].needs_grad;
  return t.push(std::move(n));
}

}  // namespace picirc::ad
