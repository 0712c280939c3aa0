#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "picirc/autodiff.hpp"

using namespace picirc;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Compares reverse-mode gradients of a scalar graph against central differences.
double max_gradient_error(std::vector<Matrix> inputs, const std::function<Var(Tape&, std::vector<Var>&)>& graph) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.parameter(m));
  const auto grads = tape.backward(graph(tape, vars));

  auto loss_at = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& m : xs) vs.push_back(t.parameter(m));
    return graph(t, vs).value()(0, 0);
  };
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    // Keyed by the address handed to parameter().
    const Matrix& g = grads.at(&inputs[i]);
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      auto plus = inputs;
      auto minus = inputs;
      plus[i].data()[k] += h;
      minus[i].data()[k] -= h;
      const double fd = (loss_at(plus) - loss_at(minus)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.data()[k]) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match central differences") {
  std::mt19937_64 rng(11);
  const auto a = random_matrix(3, 4, rng);
  const auto b = random_matrix(3, 4, rng);
  const auto pos = random_matrix(3, 4, rng, 0.5, 2.0);

  CHECK(max_gradient_error({a, b}, [](Tape&, auto& v) { return ad::sum(v[0] * v[1] + v[0] - v[1]); }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) { return ad::sum(ad::sin(v[0]) * ad::cos(v[0])); }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) { return ad::sum(ad::exp(ad::scale(v[0], 0.7))); }) < 1e-8);
  CHECK(max_gradient_error({pos}, [](Tape&, auto& v) { return ad::sum(ad::log(v[0])); }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) { return ad::sum(ad::tanh(v[0]) * ad::softplus(v[0])); }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) { return ad::sum(ad::sigmoid(v[0]) * v[0]); }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) { return ad::sum(ad::exp(ad::logsumexp_rows(v[0]))); }) < 1e-8);
}

TEST_CASE("structural ops gradients") {
  std::mt19937_64 rng(12);
  const auto a = random_matrix(3, 4, rng);
  const auto b = random_matrix(4, 2, rng);
  const auto c = random_matrix(3, 4, rng);
  CHECK(max_gradient_error({a, b}, [](Tape&, auto& v) { return ad::sum(ad::tanh(ad::matmul(v[0], v[1]))); }) <
        1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) {
          return ad::sum(ad::exp(ad::transpose(v[0])) * ad::transpose(v[0]));
        }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) {
          return ad::sum(ad::exp(ad::gather_cols(v[0], {3, 0, 0, 2})));
        }) < 1e-8);
  CHECK(max_gradient_error({a}, [](Tape&, auto& v) { return ad::sum(ad::sin(ad::reshape(v[0], 2, 6))); }) <
        1e-8);
  CHECK(max_gradient_error({a, c}, [](Tape& t, auto& v) {
          const Var w = t.constant(Eigen::RowVectorXd::LinSpaced(24, -1, 1));
          return ad::sum(ad::matmul(ad::reshape(ad::interleave_cols(v[0], v[1]), 1, 24), ad::transpose(w)));
        }) < 1e-8);
}

TEST_CASE("log_matmul_exp matches the linear-space product and its gradient") {
  std::mt19937_64 rng(13);
  const auto a = random_matrix(3, 5, rng, -4, 1);
  const auto b = random_matrix(5, 2, rng, -4, 1);
  Tape t;
  const Var out = ad::log_matmul_exp(t.constant(a), t.constant(b));
  const Matrix ref = (a.array().exp().matrix() * b.array().exp().matrix()).array().log();
  CHECK((out.value() - ref).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(max_gradient_error({a, b}, [](Tape&, auto& v) { return ad::sum(ad::log_matmul_exp(v[0], v[1])); }) < 1e-8);

  // Stable far outside the range of exp.
  Matrix big = Matrix::Constant(1, 2, -2000.0);
  Matrix col = Matrix::Constant(2, 1, -1000.0);
  Tape t2;
  const Var far = ad::log_matmul_exp(t2.constant(big), t2.constant(col));
  CHECK(far.value()(0, 0) == doctest::Approx(-3000.0 + std::log(2.0)));
}

TEST_CASE("interleave puts a and b in alternating columns") {
  Tape t;
  Matrix a(1, 2), b(1, 2);
  a << 1, 2;
  b << 10, 20;
  const Var c = ad::interleave_cols(t.constant(a), t.constant(b));
  Matrix expected(1, 4);
  expected << 1, 10, 2, 20;
  CHECK(c.value() == expected);
}

TEST_CASE("seeded backward and shared subexpressions accumulate") {
  Tape t;
  const Matrix x = Matrix::Constant(1, 1, 3.0);
  const Var v = t.parameter(x);
  const Var y = v * v + v;  // dy/dx = 2x + 1
  const auto g = t.backward({{y, Matrix::Constant(1, 1, 2.0)}});
  CHECK(g.at(&x)(0, 0) == doctest::Approx(14.0));
}

TEST_CASE("round blocks gradients") {
  Tape t;
  const Matrix x = Matrix::Constant(1, 1, 2.4);
  const Var r = ad::round(t.parameter(x));
  CHECK(r.value()(0, 0) == 2.0);
  CHECK_THROWS(t.backward(ad::sum(r)));
}
