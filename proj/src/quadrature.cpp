#include "picirc/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "picirc/circuit.hpp"
#include "picirc/errors.hpp"

namespace picirc {

std::string_view to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::midpoint: return "midpoint";
    case RuleKind::trapezoidal: return "trapezoidal";
    case RuleKind::simpson: return "simpson";
    case RuleKind::gauss_legendre: return "gauss_legendre";
  }
  return "?";
}

RuleKind parse_rule_kind(std::string_view name) {
  if (name == "midpoint") return RuleKind::midpoint;
  if (name == "trapezoidal") return RuleKind::trapezoidal;
  if (name == "simpson") return RuleKind::simpson;
  if (name == "gauss_legendre") return RuleKind::gauss_legendre;
  throw ArgumentError("unknown quadrature rule '" + std::string(name) + "'");
}

namespace {

// Nodes and weights on [-1, 1], ascending.
void gauss_legendre_reference(std::size_t n, std::vector<double>& x, std::vector<double>& w) {
  constexpr double kTolerance = 1e-14;
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const std::size_t half = (n + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double step = p0 / dp;
      z -= step;
      if (std::abs(step) < kTolerance) break;
    }
    {
      // Recompute the derivative at the converged root for the weight.
      double p0 = 1.0;
      double p1 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
}

}  // namespace

QuadratureRule make_rule(RuleKind kind, std::size_t n, double a, double b) {
  if (!(a < b) || !std::isfinite(a) || !std::isfinite(b))
    throw ArgumentError("quadrature domain needs finite a < b");
  if (n < 1) throw ArgumentError("quadrature rule needs at least one point");
  QuadratureRule rule;
  rule.kind = kind;
  rule.lower = a;
  rule.upper = b;
  rule.points.resize(n);
  rule.weights.resize(n);
  const double width = b - a;
  switch (kind) {
    case RuleKind::midpoint: {
      const double h = width / n;
      for (std::size_t i = 0; i < n; ++i) {
        rule.points[i] = a + (i + 0.5) * h;
        rule.weights[i] = h;
      }
      break;
    }
    case RuleKind::trapezoidal: {
      if (n < 2) throw ArgumentError("trapezoidal rule needs N >= 2");
      const double h = width / (n - 1);
      for (std::size_t i = 0; i < n; ++i) {
        rule.points[i] = a + i * h;
        rule.weights[i] = (i == 0 || i + 1 == n) ? 0.5 * h : h;
      }
      rule.points.back() = b;
      break;
    }
    case RuleKind::simpson: {
      if (n < 3 || n % 2 == 0) throw ArgumentError("Simpson rule needs odd N >= 3");
      const double h = width / (n - 1);
      for (std::size_t i = 0; i < n; ++i) {
        rule.points[i] = a + i * h;
        const double c = (i == 0 || i + 1 == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        rule.weights[i] = c * h / 3.0;
      }
      rule.points.back() = b;
      break;
    }
    case RuleKind::gauss_legendre: {
      std::vector<double> x;
      std::vector<double> w;
      gauss_legendre_reference(n, x, w);
      const double mid = 0.5 * (a + b);
      const double half = 0.5 * width;
      for (std::size_t i = 0; i < n; ++i) {
        rule.points[i] = mid + half * x[i];
        rule.weights[i] = half * w[i];
      }
      break;
    }
  }
  return rule;
}

double integrate(const QuadratureRule& rule, const std::function<double(double)>& f) {
  double total = 0.0;
  for (std::size_t n = 0; n < rule.size(); ++n) {
    const double value = f(rule.points[n]);
    if (!std::isfinite(value))
      throw NumericError("integrand is non-finite at point " + std::to_string(n) + " (z = " +
                         exact_decimal(rule.points[n]) + ")");
    total += rule.weights[n] * value;
  }
  return total;
}

}  // namespace picirc
