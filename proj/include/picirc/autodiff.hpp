#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// Every node on the tape holds a matrix value. Binary elementwise ops broadcast
// operands whose row or column count is 1. Gradients are produced only for
// nodes registered as parameters; constants never receive one.

#include <cstddef>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace picirc::ad {

using Matrix = Eigen::MatrixXd;

enum class Op {
  constant,
  parameter,
  add,
  sub,
  mul,
  scale,
  matmul,
  transpose,
  sin,
  cos,
  exp,
  log,
  tanh,
  softplus,
  sigmoid,
  logsumexp_rows,
  log_matmul_exp,
  sum,
  gather_cols,
  reshape,
  interleave_cols,
  round,
};

std::string_view to_string(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t index() const { return index_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Gradients keyed by the address of the registered parameter matrix.
using GradientMap = std::unordered_map<const Matrix*, Matrix>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar(double value);
  /// Registers a learnable matrix. Its gradient appears in the backward() result.
  Var parameter(const Matrix& value);

  const Matrix& value(const Var& v) const { return nodes_.at(v.index()).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse pass from a 1x1 node. Visits nodes in reverse recording order once.
  GradientMap backward(const Var& loss);

  /// Reverse pass seeded with explicit adjoints on arbitrary nodes.
  GradientMap backward(const std::vector<std::pair<Var, Matrix>>& seeds);

  /// Adjoint of any node after the last backward pass (zero if none reached it).
  Matrix adjoint(const Var& v) const;

 private:
  friend Var add(const Var&, const Var&);
  friend Var sub(const Var&, const Var&);
  friend Var mul(const Var&, const Var&);
  friend Var scale(const Var&, double);
  friend Var matmul(const Var&, const Var&);
  friend Var transpose(const Var&);
  friend Var sin(const Var&);
  friend Var cos(const Var&);
  friend Var exp(const Var&);
  friend Var log(const Var&);
  friend Var tanh(const Var&);
  friend Var softplus(const Var&);
  friend Var sigmoid(const Var&);
  friend Var logsumexp_rows(const Var&);
  friend Var log_matmul_exp(const Var&, const Var&);
  friend Var sum(const Var&);
  friend Var gather_cols(const Var&, std::vector<int>);
  friend Var reshape(const Var&, Eigen::Index, Eigen::Index);
  friend Var interleave_cols(const Var&, const Var&);
  friend Var round(const Var&);

  struct Node {
    Op op = Op::constant;
    Matrix value;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    double scalar = 0.0;
    std::vector<int> indices;
    bool needs_grad = false;
  };

  Var push(Node node);
  void run_backward();

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
  std::vector<std::size_t> parameters_;
  std::vector<const Matrix*> sources_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
/// r x c -> r x 1, max-shifted.
Var logsumexp_rows(const Var& a);
/// out(j, b) = log sum_k exp(a(j, k) + b(k, b)); the log-space matrix product.
Var log_matmul_exp(const Var& a, const Var& b);
/// Sum of all entries, 1 x 1.
Var sum(const Var& a);
/// Column t of the result is column indices[t] of a.
Var gather_cols(const Var& a, std::vector<int> indices);
/// Row-major reshape.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
/// [a_0, b_0, a_1, b_1, ...] column interleaving of equally shaped a and b.
Var interleave_cols(const Var& a, const Var& b);
/// Rounds to nearest. Not differentiable: backward throws if a gradient reaches it.
Var round(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

}  // namespace picirc::ad
