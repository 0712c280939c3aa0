#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

namespace picirc {

enum class RuleKind { midpoint, trapezoidal, simpson, gauss_legendre };

std::string_view to_string(RuleKind kind);
RuleKind parse_rule_kind(std::string_view name);

/// Integration points and weights on a finite interval [lower, upper].
struct QuadratureRule {
  RuleKind kind = RuleKind::trapezoidal;
  std::vector<double> points;
  std::vector<double> weights;
  double lower = -1.0;
  double upper = 1.0;

  std::size_t size() const { return points.size(); }
};

/// Builds an N-point rule on [a, b].
///
/// Trapezoidal and Simpson rules place N points on a uniform grid that includes
/// both endpoints (Simpson needs odd N >= 3). The midpoint rule uses the N cell
/// centres. Gauss-Legendre nodes come from Newton iteration on P_N.
QuadratureRule make_rule(RuleKind kind, std::size_t n, double a = -1.0, double b = 1.0);

/// Sum of w_n f(z_n). Throws NumericError if f is non-finite at some point.
double integrate(const QuadratureRule& rule, const std::function<double(double)>& f);

}  // namespace picirc
