#include <doctest.h>

#include <cmath>

#include "picirc/errors.hpp"
#include "picirc/quadrature.hpp"

using namespace picirc;

TEST_CASE("hand-computed small rules") {
  const auto gl2 = make_rule(RuleKind::gauss_legendre, 2);
  CHECK(gl2.points[0] == doctest::Approx(-1.0 / std::sqrt(3.0)).epsilon(1e-15));
  CHECK(gl2.points[1] == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-15));
  CHECK(gl2.weights[0] == doctest::Approx(1.0));

  const auto gl3 = make_rule(RuleKind::gauss_legendre, 3);
  CHECK(std::abs(gl3.points[1]) < 1e-15);
  CHECK(gl3.points[2] == doctest::Approx(std::sqrt(0.6)).epsilon(1e-15));
  CHECK(gl3.weights[1] == doctest::Approx(8.0 / 9.0).epsilon(1e-15));
  CHECK(gl3.weights[0] == doctest::Approx(5.0 / 9.0).epsilon(1e-15));

  const auto tr = make_rule(RuleKind::trapezoidal, 2);
  CHECK(tr.points == std::vector<double>{-1.0, 1.0});
  CHECK(tr.weights == std::vector<double>{1.0, 1.0});

  const auto si = make_rule(RuleKind::simpson, 3);
  CHECK(si.weights[0] == doctest::Approx(1.0 / 3.0));
  CHECK(si.weights[1] == doctest::Approx(4.0 / 3.0));

  const auto mp = make_rule(RuleKind::midpoint, 2, 0.0, 4.0);
  CHECK(mp.points == std::vector<double>{1.0, 3.0});
  CHECK(mp.weights == std::vector<double>{2.0, 2.0});
}

TEST_CASE("weights sum to the interval length and points stay inside") {
  for (auto kind : {RuleKind::midpoint, RuleKind::trapezoidal, RuleKind::simpson, RuleKind::gauss_legendre})
    for (std::size_t n : {3, 5, 17, 65, 129}) {
      const auto r = make_rule(kind, n, -2.5, 0.75);
      double total = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        total += r.weights[i];
        CHECK(r.weights[i] > 0);
        CHECK(r.points[i] >= -2.5);
        CHECK(r.points[i] <= 0.75);
        if (i) CHECK(r.points[i] > r.points[i - 1]);
      }
      CHECK(total == doctest::Approx(3.25).epsilon(1e-13));
    }
}

TEST_CASE("polynomial exactness") {
  for (std::size_t n = 1; n <= 12; ++n) {
    const auto gl = make_rule(RuleKind::gauss_legendre, n);
    for (std::size_t deg = 0; deg < 2 * n; ++deg) {
      const double exact = deg % 2 ? 0.0 : 2.0 / static_cast<double>(deg + 1);
      CHECK(integrate(gl, [&](double z) { return std::pow(z, static_cast<double>(deg)); }) ==
            doctest::Approx(exact).epsilon(1e-12));
    }
  }
  const auto si = make_rule(RuleKind::simpson, 5, 0.0, 1.0);
  CHECK(integrate(si, [](double z) { return z * z * z; }) == doctest::Approx(0.25).epsilon(1e-14));
  const auto tr = make_rule(RuleKind::trapezoidal, 7, 0.0, 3.0);
  CHECK(integrate(tr, [](double z) { return 2 * z + 1; }) == doctest::Approx(12.0).epsilon(1e-14));
}

TEST_CASE("rule kinds parse and print") {
  for (auto kind : {RuleKind::midpoint, RuleKind::trapezoidal, RuleKind::simpson, RuleKind::gauss_legendre})
    CHECK(parse_rule_kind(to_string(kind)) == kind);
  CHECK_THROWS_AS(parse_rule_kind("romberg"), ArgumentError);
}

TEST_CASE("invalid rule requests") {
  CHECK_THROWS_AS(make_rule(RuleKind::simpson, 4), ArgumentError);
  CHECK_THROWS_AS(make_rule(RuleKind::trapezoidal, 1), ArgumentError);
  CHECK_THROWS_AS(make_rule(RuleKind::midpoint, 0), ArgumentError);
  CHECK_THROWS_AS(make_rule(RuleKind::midpoint, 4, 1.0, 1.0), ArgumentError);
  CHECK_THROWS_AS(integrate(make_rule(RuleKind::midpoint, 4), [](double z) { return 1.0 / (z - 0.25); }),
                  NumericError);
}
