#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "picirc/errors.hpp"
#include "picirc/runtime.hpp"
#include "picirc/training.hpp"
#include "../support.hpp"

using namespace picirc;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

Circuit random_hclt(int d, std::size_t h, std::uint64_t seed, VariableType type = {Family::categorical, 3}) {
  std::mt19937_64 rng(seed);
  std::vector<int> parents(d);
  for (int i = 0; i < d; ++i) parents[i] = i == 0 ? -1 : static_cast<int>(rng() % i);
  return hclt_circuit(hclt_structure(parents), std::vector<VariableType>(d, type), h, seed);
}

}  // namespace

TEST_CASE("log_forward agrees with a plain linear-space evaluation") {
  const Circuit c = random_hclt(5, 4, 1);
  std::mt19937_64 rng(2);
  for (int r = 0; r < 50; ++r) {
    EvidenceVector ev(5);
    for (auto& e : ev)
      if (rng() % 4) e = static_cast<double>(rng() % 3);
    const double lin = testsupport::linear_value(c, ev);
    CHECK(std::abs(std::exp(log_forward(c, ev)) - lin) <= 1e-12 * lin);
  }
}

TEST_CASE("marginalizing every variable of a normalized circuit gives zero") {
  const Circuit c = random_hclt(4, 3, 3, {Family::binomial, 4});
  CHECK(std::abs(marginal(c, EvidenceVector(4))) < 1e-12);
  CHECK(std::abs(log(testsupport::enumerated_mass(c, std::vector<VariableType>(4, {Family::binomial, 4})))) < 1e-12);
}

TEST_CASE("evidence errors") {
  const Circuit c = random_hclt(3, 2, 4);
  CHECK_THROWS_AS(log_forward(c, EvidenceVector{0.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(log_forward(c, EvidenceVector{0.0, 1.0, 3.0}), ArgumentError);
  CHECK_THROWS_AS(log_forward(c, EvidenceVector{0.0, 1.5, 2.0}), ArgumentError);
}

TEST_CASE("zero-probability branches yield -inf, not NaN") {
  CircuitBuilder b(1);
  const auto x = b.add_input(0, InputDistribution::categorical({0.0, -std::numeric_limits<double>::infinity()}));
  const Circuit c = std::move(b).build(x);
  CHECK(log_forward(c, EvidenceVector{1.0}) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("bits per dimension") {
  // A mean log-likelihood of -1.18 * 784 * ln 2 nats is 1.18 bpd on 784 pixels.
  CHECK(bpd(-1.18 * 784 * std::log(2.0), 784) == doctest::Approx(1.18).epsilon(1e-14));
  CHECK(bpd(-std::log(2.0), 1) == doctest::Approx(1.0));
}

TEST_CASE("batch evaluator matches per-row evaluation, including missing values") {
  const Circuit c = random_hclt(6, 5, 5);
  std::mt19937_64 rng(6);
  Eigen::MatrixXd data(300, 6);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = rng() % 5 ? static_cast<double>(rng() % 3) : kNaN;
  const BatchEvaluator ev(c);
  const auto batch = ev.log_likelihood(data);
  const auto rows = log_forward(c, to_evidence(data));
  REQUIRE(batch.size() == rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) CHECK(batch[r] == doctest::Approx(rows[r]).epsilon(1e-12));
}

TEST_CASE("flows: conservation at sum units and expected counts sum to the batch size") {
  const Circuit c = random_hclt(4, 3, 7);
  std::mt19937_64 rng(8);
  std::vector<EvidenceVector> batch;
  for (int r = 0; r < 40; ++r) {
    EvidenceVector e(4);
    for (auto& v : e) v = static_cast<double>(rng() % 3);
    batch.push_back(e);
  }
  const Flows f = flows(c, batch);
  double ll = 0.0;
  for (const auto& e : batch) ll += log_forward(c, e);
  CHECK(f.log_likelihood == doctest::Approx(ll).epsilon(1e-12));
  CHECK(f.unit_flow[c.root()] == doctest::Approx(40.0));
  for (const auto& u : c.units()) {
    if (u.kind != UnitKind::sum) continue;
    double s = 0.0;
    for (double e : f.edge_flow[u.id]) s += e;
    CHECK(s == doctest::Approx(f.unit_flow[u.id]).epsilon(1e-12));
  }
  // Every variable is observed in every row, so the input flows of one variable add to B.
  for (int v = 0; v < 4; ++v) {
    double s = 0.0;
    for (const auto& u : c.units())
      if (u.kind == UnitKind::input && u.scope.front() == v) s += f.moments[u.id][0];
    CHECK(s == doctest::Approx(40.0).epsilon(1e-12));
  }
}

TEST_CASE("flows equal numerical derivatives of the log-likelihood in the log-weights") {
  Circuit c = random_hclt(3, 3, 9);
  const std::vector<EvidenceVector> batch{{0.0, 1.0, 2.0}, {2.0, 2.0, 0.0}, {1.0, std::nullopt, 1.0}};
  const Flows f = flows(c, batch);
  auto total = [&](const Circuit& cc) {
    double s = 0.0;
    for (const auto& e : batch) s += log_forward(cc, e);
    return s;
  };
  for (const auto& u : c.units()) {
    if (u.kind != UnitKind::sum) continue;
    for (std::size_t k = 0; k < u.weights.size(); ++k) {
      const double h = 1e-6;
      Circuit plus = c, minus = c;
      auto w = u.weights;
      w[k] += h;
      plus.set_weights(u.id, w);
      w[k] -= 2 * h;
      minus.set_weights(u.id, w);
      CHECK(f.edge_flow[u.id][k] == doctest::Approx((total(plus) - total(minus)) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("sampling is deterministic and follows the circuit") {
  CircuitBuilder b(1);
  const auto x = b.add_input(0, InputDistribution::categorical({std::log(0.2), std::log(0.8)}));
  const auto y = b.add_input(0, InputDistribution::categorical({std::log(0.9), std::log(0.1)}));
  const Circuit c = std::move(b).build(b.add_sum({x, y}, {std::log(0.5), std::log(0.5)}));
  const auto s = sample_pc(c, 20000, 3);
  CHECK(s == sample_pc(c, 20000, 3));
  const double ones = s.sum() / 20000.0;
  CHECK(ones == doctest::Approx(0.45).epsilon(0.03));
}
