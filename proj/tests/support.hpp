#pragma once

// Independent oracles and generators shared by the unit and acceptance tests.
// Nothing here calls into the evaluators it is used to check.

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "picirc/circuit.hpp"
#include "picirc/runtime.hpp"
#include "picirc/structures.hpp"

namespace testsupport {

using namespace picirc;

// Random latent tree: latent l > 0 hangs from a uniform earlier latent; observable v < L
// hangs from latent v (so every latent has an observable child), the rest pick a
// uniform latent. Conditionals are neural unless linear-Gaussian ones are requested.
inline LatentTree random_latent_tree(int latents, int observables, std::mt19937_64& rng, bool gaussian = false) {
  std::uniform_real_distribution<double> coef(-2.0, 2.0), off(-1.0, 1.0), sd(0.5, 1.5);
  std::vector<TreeNode> nodes;
  for (int l = 0; l < latents; ++l) {
    TreeNode n;
    n.kind = NodeKind::latent;
    n.index = l;
    n.parent = l == 0 ? -1 : static_cast<int>(std::uniform_int_distribution<int>(0, l - 1)(rng));
    if (gaussian) {
      n.conditional = LinearGaussianConditional{l == 0 ? 0.0 : coef(rng), off(rng), sd(rng)};
    } else {
      n.conditional = NeuralConditional{l};
    }
    nodes.push_back(n);
  }
  for (int v = 0; v < observables; ++v) {
    TreeNode n;
    n.kind = NodeKind::observable;
    n.index = v;
    n.parent = v < latents ? v : std::uniform_int_distribution<int>(0, latents - 1)(rng);
    if (gaussian) {
      n.conditional = LinearGaussianConditional{coef(rng), off(rng), sd(rng)};
    } else {
      n.conditional = NeuralConditional{v};
    }
    nodes.push_back(n);
  }
  return LatentTree(std::move(nodes));
}

// Chain Z0 -> Z1 -> ... with one observable per latent (an HCLT over a path).
inline LatentTree chain_hclt(int length) {
  std::vector<int> parents(length);
  for (int i = 0; i < length; ++i) parents[i] = i - 1;
  return hclt_structure(parents);
}

// Every joint state of discrete variables, in lexicographic order.
inline std::vector<std::vector<double>> all_states(const std::vector<VariableType>& types) {
  std::vector<std::vector<double>> out{{}};
  for (const auto& t : types) {
    const int k = t.family == Family::binomial ? t.num_states + 1 : t.num_states;
    std::vector<std::vector<double>> next;
    for (const auto& prefix : out)
      for (int s = 0; s < k; ++s) {
        auto row = prefix;
        row.push_back(s);
        next.push_back(std::move(row));
      }
    out = std::move(next);
  }
  return out;
}

inline double binomial_pmf(int trials, double p, int x) {
  return std::exp(std::lgamma(trials + 1.0) - std::lgamma(x + 1.0) - std::lgamma(trials - x + 1.0)) *
         std::pow(p, x) * std::pow(1.0 - p, trials - x);
}

// Probability (or density) of one input unit, in linear space, from the raw parameters.
inline double input_value(const InputDistribution& d, std::optional<double> x) {
  if (!x) return 1.0;
  switch (d.family) {
    case Family::categorical: return std::exp(d.params.at(static_cast<std::size_t>(*x)));
    case Family::binomial: return binomial_pmf(d.num_states, d.params[0], static_cast<int>(*x));
    case Family::gaussian: {
      const double sd = std::exp(d.params[1]);
      const double u = (*x - d.params[0]) / sd;
      return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * M_PI));
    }
  }
  return 0.0;
}

// Plain recursive linear-space evaluation with memoization.
inline double linear_value(const Circuit& c, const EvidenceVector& ev) {
  std::vector<std::optional<double>> memo(c.num_units());
  std::function<double(UnitId)> eval = [&](UnitId id) -> double {
    if (memo[id]) return *memo[id];
    const Unit& u = c.unit(id);
    double v = 0.0;
    switch (u.kind) {
      case UnitKind::input: v = input_value(*u.dist, ev[u.scope.front()]); break;
      case UnitKind::sum:
        for (std::size_t k = 0; k < u.children.size(); ++k) v += std::exp(u.weights[k]) * eval(u.children[k]);
        break;
      case UnitKind::product:
        v = 1.0;
        for (UnitId ch : u.children) v *= eval(ch);
        break;
      case UnitKind::integral: throw std::logic_error("integral unit in a concrete circuit");
    }
    memo[id] = v;
    return v;
  };
  return eval(c.root());
}

// Total mass by enumeration of every joint state.
inline double enumerated_mass(const Circuit& c, const std::vector<VariableType>& types) {
  double total = 0.0;
  for (const auto& s : all_states(types)) {
    EvidenceVector ev(s.begin(), s.end());
    total += std::exp(log_forward(c, ev));
  }
  return total;
}

inline std::size_t count_kind(const Circuit& c, UnitKind kind) {
  std::size_t n = 0;
  for (const auto& u : c.units()) n += u.kind == kind;
  return n;
}

// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

}  // namespace testsupport
