#include <doctest.h>

#include <cmath>
#include <random>

#include "picirc/errors.hpp"
#include "picirc/gaussian_ltm.hpp"
#include "picirc/logspace.hpp"
#include "picirc/materializer.hpp"
#include "picirc/runtime.hpp"
#include "../support.hpp"

using namespace picirc;

namespace {

const NetConfig kSmall{4, 8, 1.0};

// Zeroes the output layer so the energy is the constant softplus(0).
void flatten(EnergyNet& net) {
  net.layers().back().weight.setZero();
  net.layers().back().bias.setZero();
}

}  // namespace

TEST_CASE("constant energy gives weights proportional to the quadrature weights") {
  auto model = NeuralPic::create(testsupport::chain_hclt(2), {{Family::categorical, 2}, {Family::categorical, 2}},
                                 kSmall, 1);
  for (auto& net : model.energy_nets) flatten(net);
  const auto rule = make_rule(RuleKind::trapezoidal, 5);
  const auto s = materialize_sum_params(model, rule);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 5; ++k)
        CHECK(s.at(i, j, k) == doctest::Approx(std::log(rule.weights[k] / 2.0)).epsilon(1e-14));
}

TEST_CASE("one latent, two trapezoidal points: root weights one half each") {
  auto model = NeuralPic::create(testsupport::chain_hclt(1), {{Family::binomial, 3}}, kSmall, 2);
  flatten(model.energy_nets.front());
  const Circuit qpc = materialize_qpc(model, make_rule(RuleKind::trapezoidal, 2));
  const Unit& root = qpc.unit(qpc.root());
  REQUIRE(root.kind == UnitKind::sum);
  REQUIRE(root.weights.size() == 2);
  CHECK(std::exp(root.weights[0]) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(std::exp(root.weights[1]) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("sum rows normalize and tape materialization agrees with the direct one") {
  const auto tree = testsupport::chain_hclt(3);
  const std::vector<VariableType> types{{Family::categorical, 4}, {Family::binomial, 3}, {Family::gaussian, 0}};
  const auto model = NeuralPic::create(tree, types, kSmall, 3);
  for (auto kind : {RuleKind::midpoint, RuleKind::trapezoidal, RuleKind::gauss_legendre}) {
    const auto rule = make_rule(kind, 9);
    const auto s = materialize_sum_params(model, rule);
    ad::Tape tape;
    const auto st = materialize_sum_params(tape, model, rule);
    const auto in = materialize_input_params(model, rule);
    const auto it = materialize_input_params(tape, model, rule);
    for (std::size_t i = 0; i < 3; ++i) {
      const bool root = i == 0;
      CHECK(st[i].rows() == (root ? 1 : 9));
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(std::abs(log_sum_exp(s.row(i, j))) < 1e-12);
        for (std::size_t k = 0; k < 9; ++k)
          CHECK(s.at(i, j, k) ==
                doctest::Approx(st[i].value()(root ? 0 : static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)))
                    .epsilon(1e-13));
      }
    }
    for (std::size_t v = 0; v < 3; ++v)
      for (std::size_t j = 0; j < 9; ++j)
        for (std::size_t c = 0; c < in.param_width(v); ++c)
          CHECK(in.at(v, j)[c] == doctest::Approx(it[v].value()(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c))).epsilon(1e-13));
  }
}

TEST_CASE("separate normalization rule") {
  const auto model = NeuralPic::create(testsupport::chain_hclt(2), {{Family::categorical, 2}, {Family::categorical, 2}},
                                       kSmall, 4);
  const auto coarse = make_rule(RuleKind::trapezoidal, 5);
  const auto fine = make_rule(RuleKind::trapezoidal, 401);
  const auto s = materialize_sum_params(model, coarse, &fine);
  // The coarse and fine estimates of the normalizer agree to quadrature error.
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(log_sum_exp(s.row(1, j))) < 0.1);
}

TEST_CASE("materialized QPC: counts, structure, and unit mass") {
  const std::vector<VariableType> types(3, {Family::categorical, 3});
  const auto model = NeuralPic::create(testsupport::chain_hclt(3), types, kSmall, 5);
  for (std::size_t n : {2, 4, 7}) {
    const Circuit qpc = materialize_qpc(model, make_rule(RuleKind::gauss_legendre, n));
    const std::size_t L = 3;
    CHECK(qpc.num_units() == (3 * L - 2) * n + 1);
    CHECK(qpc.num_edges() == (L - 1) * n * n + n + 2 * (L - 1) * n);
    CHECK(testsupport::count_kind(qpc, UnitKind::sum) == (L - 1) * n + 1);
    const auto rep = check_structure(qpc);
    CHECK(rep.smooth);
    CHECK(rep.decomposable);
    CHECK(rep.structured);
    CHECK(sum_weights_normalized(qpc));
    CHECK(testsupport::enumerated_mass(qpc, types) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("two binary variables: total mass one") {
  const std::vector<VariableType> types(2, {Family::categorical, 2});
  const auto model = NeuralPic::create(testsupport::chain_hclt(2), types, kSmall, 6);
  const Circuit qpc = materialize_qpc(model, make_rule(RuleKind::trapezoidal, 16));
  CHECK(std::abs(testsupport::enumerated_mass(qpc, types) - 1.0) < 1e-9);
}

TEST_CASE("static materialization errors") {
  const std::vector<VariableType> types(2, {Family::categorical, 2});
  const auto model = NeuralPic::create(testsupport::chain_hclt(2), types, kSmall, 7);
  const auto rule = make_rule(RuleKind::trapezoidal, 3);
  const TensorParameters params(materialize_sum_params(model, rule), materialize_input_params(model, rule), 0);
  const std::vector<QuadratureRule> one{rule};
  CHECK_THROWS_AS(materialize_qpc(model.pic, one, params), ArgumentError);

  // A concrete circuit carries sum units, which a PIC may not.
  CircuitBuilder b(1);
  const auto x = b.add_input(0, InputDistribution::binomial(1, 0.5));
  const auto y = b.add_input(0, InputDistribution::binomial(1, 0.2));
  const Circuit mix = std::move(b).build(b.add_sum({x, y}, {std::log(0.5), std::log(0.5)}));
  CHECK_THROWS_AS(materialize_qpc(mix, one, params), StructuralError);

  // A unit shared by two integrals is not a tree.
  CircuitBuilder d(1);
  const auto shared = d.add_input(0, InputDistribution::conditional(Family::categorical, 2, 0, 0));
  const auto i0 = d.add_integral(shared, 0, std::nullopt);
  const auto i1 = d.add_integral(shared, 1, 0);
  const Circuit dag = std::move(d).build(d.add_product({i0, i1}));
  const std::vector<QuadratureRule> two{rule, rule};
  CHECK_THROWS_AS(materialize_qpc(dag, two, params), StructuralError);
}

TEST_CASE("nested quadrature with a constant selector matches static materialization") {
  std::mt19937_64 rng(8);
  const LinearGaussianLtm lg(testsupport::random_latent_tree(3, 4, rng, true));
  const std::size_t n = 6;
  const auto rules = domain_rules(lg, n);
  const PointSelector fixed = [&](int latent, std::optional<double>) { return rules[latent]; };
  const Circuit nested = materialize_nested(to_pic(lg), GaussianConditionals(lg), fixed);
  const Circuit flat = gaussian_qpc(lg, n);
  CHECK(nested.num_units() > flat.num_units());
  const auto data = sample(lg, 20, 9);
  for (const auto& ev : to_evidence(data)) CHECK(log_forward(nested, ev) == doctest::Approx(log_forward(flat, ev)).epsilon(1e-12));
}

TEST_CASE("nested unit counts on chains and the depth guard") {
  for (int length = 1; length <= 4; ++length) {
    std::vector<TreeNode> nodes;
    const auto hc = testsupport::chain_hclt(length);
    for (auto node : hc.nodes()) {
      node.conditional = LinearGaussianConditional{node.parent < 0 ? 0.0 : 0.5, 0.1, 1.0};
      nodes.push_back(node);
    }
    const LinearGaussianLtm lg{LatentTree(nodes)};
    const Circuit pic = to_pic(lg);
    CHECK(latent_depth(pic) == length - 1);
    for (std::size_t n : {2, 3, 4}) {
      const Circuit q = materialize_nested(pic, GaussianConditionals(lg), three_sigma_selector(lg, RuleKind::trapezoidal, n));
      // Sums: 1 + n + ... + n^(length-1). Everything: a latent with a latent child spends a
      // sum plus, per point, a product, an input and the child's units; the leaf spends 1 + n.
      std::size_t sums = 0, power = 1, all = 1 + n;
      for (int i = 0; i < length; ++i) {
        sums += power;
        power *= n;
      }
      for (int i = 1; i < length; ++i) all = 1 + n * (2 + all);
      CHECK(testsupport::count_kind(q, UnitKind::sum) == sums);
      CHECK(q.num_units() == all);
      CHECK(projected_nested_units(pic, n) == doctest::Approx(static_cast<double>(all)));
    }
  }
  // Depth 2 with N = 3: the root sum, 3 sums below it and 3 more below each of those.
  {
    std::vector<TreeNode> nodes;
    const auto chain = testsupport::chain_hclt(3);
    for (auto node : chain.nodes()) {
      node.conditional = LinearGaussianConditional{node.parent < 0 ? 0.0 : 1.0, 0.0, 1.0};
      nodes.push_back(node);
    }
    const LinearGaussianLtm lg{LatentTree(nodes)};
    const auto q = materialize_nested(to_pic(lg), GaussianConditionals(lg), three_sigma_selector(lg, RuleKind::trapezoidal, 3));
    CHECK(testsupport::count_kind(q, UnitKind::sum) == 1 + 3 + 3 * 3);
  }
  {
    std::vector<TreeNode> nodes;
    const auto chain = testsupport::chain_hclt(5);
    for (auto node : chain.nodes()) {
      node.conditional = LinearGaussianConditional{node.parent < 0 ? 0.0 : 1.0, 0.0, 1.0};
      nodes.push_back(node);
    }
    const LinearGaussianLtm lg{LatentTree(nodes)};
    try {
      materialize_nested(to_pic(lg), GaussianConditionals(lg), three_sigma_selector(lg, RuleKind::trapezoidal, 10));
      FAIL("depth 4 should be rejected");
    } catch (const SizeError& e) {
      CHECK(e.projected_units() == 133331u);  // 1 + 10 * (2 + ...) down five levels
    }
  }
}
