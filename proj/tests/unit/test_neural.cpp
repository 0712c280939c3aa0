#include <doctest.h>

#include <cmath>
#include <random>

#include "picirc/errors.hpp"
#include "picirc/logspace.hpp"
#include "picirc/neural.hpp"
#include "../support.hpp"

using namespace picirc;

TEST_CASE("fourier features interleave cos and sin of 2 pi x F") {
  ad::Matrix f(2, 2);
  f << 0.5, -1.0, 0.25, 2.0;
  const FourierFeatureLayer ffl(f);
  Eigen::VectorXd x(2);
  x << 0.3, -0.7;
  const auto out = ffl.forward(x);
  REQUIRE(out.size() == 4);
  for (int k = 0; k < 2; ++k) {
    const double arg = 2 * M_PI * (x(0) * f(0, k) + x(1) * f(1, k));
    CHECK(out(2 * k) == doctest::Approx(std::cos(arg)).epsilon(1e-15));
    CHECK(out(2 * k + 1) == doctest::Approx(std::sin(arg)).epsilon(1e-15));
  }
  ad::Tape t;
  const auto batch = ffl.forward(t, t.constant(x.transpose()));
  CHECK((batch.value().row(0).transpose() - out).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("energy nets are non-negative and reject points outside the unit square") {
  std::mt19937_64 rng(1);
  const EnergyNet net(2, NetConfig{8, 16, 1.0}, rng);
  for (double a = -1; a <= 1; a += 0.25)
    for (double b = -1; b <= 1; b += 0.25) CHECK(net.energy(a, b) >= 0.0);
  CHECK_THROWS_AS(net.energy(1.5, 0.0), ArgumentError);
  CHECK_THROWS_AS(net.energy(0.0), ArgumentError);

  ad::Tape t;
  ad::Matrix in(2, 2);
  in << 0.1, 0.2, -0.5, 0.9;
  const auto e = net.forward(t, t.constant(in));
  CHECK(e.value()(0, 0) == doctest::Approx(net.energy(0.1, 0.2)).epsilon(1e-14));
  CHECK(e.value()(1, 0) == doctest::Approx(net.energy(-0.5, 0.9)).epsilon(1e-14));
}

TEST_CASE("decoder heads produce valid distributions") {
  std::mt19937_64 rng(2);
  const NetConfig cfg{8, 16, 1.0};
  const DecoderNet cat(VariableType{Family::categorical, 256}, cfg, rng);
  const DecoderNet bin(VariableType{Family::binomial, 255}, cfg, rng);
  const DecoderNet gau(VariableType{Family::gaussian, 0}, cfg, rng);
  CHECK(cat.head_width() == 256);
  CHECK(bin.head_width() == 1);
  CHECK(gau.head_width() == 2);
  for (double z : {-1.0, -0.3, 0.0, 0.8, 1.0}) {
    const auto lp = cat.parameters_at(z);
    CHECK(std::abs(log_sum_exp(lp)) < 1e-9);
    const auto p = bin.parameters_at(z);
    CHECK(p[0] > 0.0);
    CHECK(p[0] < 1.0);
    CHECK_NOTHROW(gau.distribution_at(z).validate());
  }
  Eigen::RowVectorXd huge(1);
  huge << 1e6;
  CHECK(bin.natural_parameters(huge)[0] == doctest::Approx(1.0 - 1e-15));
  huge << -1e6;
  CHECK(bin.natural_parameters(huge)[0] == doctest::Approx(1e-15));
}

TEST_CASE("decoder log-likelihood agrees with the concrete distributions") {
  std::mt19937_64 rng(3);
  const NetConfig cfg{8, 16, 1.0};
  const std::vector<VariableType> types{{Family::categorical, 5}, {Family::binomial, 7}, {Family::gaussian, 0}};
  const std::vector<std::vector<double>> xs{{0, 4, 2}, {0, 7, 3}, {-1.5, 0.2, 3.0}};
  for (std::size_t i = 0; i < types.size(); ++i) {
    const DecoderNet dec(types[i], cfg, rng);
    ad::Tape t;
    ad::Matrix z(2, 1);
    z << -0.4, 0.6;
    const auto ll = dec.log_likelihood(t, t.constant(z), xs[i]);
    for (int m = 0; m < 2; ++m)
      for (std::size_t b = 0; b < xs[i].size(); ++b)
        CHECK(ll.value()(m, static_cast<Eigen::Index>(b)) ==
              doctest::Approx(dec.distribution_at(z(m, 0)).log_prob(xs[i][b])).epsilon(1e-12));
  }
}

TEST_CASE("neural pic creation, sharing and json round trip") {
  const auto tree = testsupport::chain_hclt(4);
  const std::vector<VariableType> types(4, {Family::categorical, 3});
  const NetConfig cfg{4, 8, 1.0};
  auto model = NeuralPic::create(tree, types, cfg, 9);
  CHECK(model.energy_nets.size() == 4);
  CHECK(model.decoders.size() == 4);
  CHECK(model.energy_net(0).input_dim() == 1);
  CHECK(model.energy_net(2).input_dim() == 2);

  auto shared = NeuralPic::create(tree, types, cfg, 9, true);
  CHECK(shared.energy_nets.size() == 2);
  CHECK(shared.decoders.size() == 1);
  CHECK(shared.parameter_count() < model.parameter_count());

  const auto back = neural_pic_from_json(neural_pic_to_json(model));
  CHECK(back.pic == model.pic);
  for (int l = 0; l < 4; ++l)
    CHECK(back.energy_net(l).energy(0.3, l ? std::optional(0.1) : std::nullopt) ==
          model.energy_net(l).energy(0.3, l ? std::optional(0.1) : std::nullopt));
  CHECK(back.decoder(2).parameters_at(-0.2) == model.decoder(2).parameters_at(-0.2));
  CHECK_THROWS_AS(neural_pic_from_json(nlohmann::json{{"kind", "neural"}}), SchemaError);

  // Same seed, same model.
  const auto again = NeuralPic::create(tree, types, cfg, 9);
  CHECK(neural_pic_to_json(again) == neural_pic_to_json(model));
}
