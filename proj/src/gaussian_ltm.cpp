#include "picirc/gaussian_ltm.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/Cholesky>

#include "picirc/errors.hpp"
#include "picirc/parallel.hpp"
#include "picirc/runtime.hpp"

namespace picirc {

namespace {

const LinearGaussianConditional& linear_gaussian(const TreeNode& node) {
  const auto* lg = std::get_if<LinearGaussianConditional>(&node.conditional);
  if (!lg) throw ArgumentError("node is not linear-Gaussian");
  return *lg;
}

double normal_log_density(double x, double mean, double stddev) {
  const double r = (x - mean) / stddev;
  return -0.5 * r * r - std::log(stddev) - 0.5 * std::log(2 * std::numbers::pi);
}

// exp(g + h z - J z^2 / 2)
struct Quadratic {
  double g = 0.0;
  double h = 0.0;
  double j = 0.0;
};

// Integrates N(z | a u + b, s^2) exp(q(z)) over z; the result is a quadratic in u.
Quadratic integrate_out(const Quadratic& q, double a, double b, double s) {
  const double prec = 1.0 / (s * s);
  const double p = prec + q.j;
  Quadratic out;
  out.j = a * a * prec * q.j / p;
  out.h = a * prec * (q.h - q.j * b) / p;
  out.g = q.g - 0.5 * std::log(s * s * p) + q.h * q.h / (2 * p) + q.h * prec * b / p -
          prec * q.j * b * b / (2 * p);
  return out;
}

}  // namespace

LinearGaussianLtm::LinearGaussianLtm(LatentTree tree) : tree_(std::move(tree)) {
  for (int l = 0; l < tree_.num_latents(); ++l) latent_.push_back(linear_gaussian(tree_.latent(l)));
  for (int v = 0; v < tree_.num_observables(); ++v) observable_.push_back(linear_gaussian(tree_.observable(v)));
  auto check = [](const LinearGaussianConditional& c, const std::string& what) {
    if (!(c.stddev > 0) || !std::isfinite(c.stddev) || !std::isfinite(c.slope) || !std::isfinite(c.offset))
      throw ArgumentError(what + " needs finite coefficients and a positive stddev");
  };
  for (int l = 0; l < num_latents(); ++l) check(latent_[l], "latent " + std::to_string(l));
  for (int v = 0; v < num_vars(); ++v) check(observable_[v], "observable " + std::to_string(v));
}

LinearGaussianLtm random_gaussian_ltm(int num_nodes, std::uint64_t seed, const RandomLtmConfig& config) {
  if (num_nodes < 2 || num_nodes % 2 != 0)
    throw ArgumentError("a latent tree with one observable per latent needs an even node count >= 2");
  const int latents = num_nodes / 2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> slope(-config.slope, config.slope);
  std::uniform_real_distribution<double> offset(-config.offset, config.offset);
  std::uniform_real_distribution<double> stddev(config.min_stddev, config.max_stddev);
  std::vector<TreeNode> nodes;
  for (int l = 0; l < latents; ++l) {
    TreeNode n{NodeKind::latent, l, -1, LinearGaussianConditional{}};
    if (l == 0) {
      const double mu = offset(rng);
      n.conditional = LinearGaussianConditional{0.0, mu, stddev(rng)};
    } else {
      n.parent = std::uniform_int_distribution<int>(0, l - 1)(rng);
      const double a = slope(rng);
      const double b = offset(rng);
      n.conditional = LinearGaussianConditional{a, b, stddev(rng)};
    }
    nodes.push_back(n);
  }
  for (int v = 0; v < latents; ++v) {
    const double c = slope(rng);
    const double d = offset(rng);
    nodes.push_back({NodeKind::observable, v, v, LinearGaussianConditional{c, d, stddev(rng)}});
  }
  return LinearGaussianLtm(LatentTree(std::move(nodes)));
}

Eigen::MatrixXd sample(const LinearGaussianLtm& model, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto order = model.tree().latents_breadth_first();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), model.num_vars());
  std::vector<double> z(model.num_latents());
  for (std::size_t s = 0; s < n; ++s) {
    for (int l : order) {
      const auto& c = model.latent(l);
      const auto parent = model.tree().latent_parent(l);
      const double mean = parent ? c.slope * z[*parent] + c.offset : c.offset;
      z[l] = mean + c.stddev * normal(rng);
    }
    for (int v = 0; v < model.num_vars(); ++v) {
      const auto& c = model.observable(v);
      out(static_cast<Eigen::Index>(s), v) =
          c.slope * z[model.tree().observable_parent(v)] + c.offset + c.stddev * normal(rng);
    }
  }
  return out;
}

double exact_loglik(const LinearGaussianLtm& model, std::span<const double> x) {
  if (static_cast<int>(x.size()) != model.num_vars()) throw ArgumentError("x has the wrong length");
  const auto& tree = model.tree();
  auto order = tree.latents_breadth_first();
  std::vector<Quadratic> factor(model.num_latents());
  for (int v = 0; v < model.num_vars(); ++v) {
    if (std::isnan(x[v])) continue;
    const auto& c = model.observable(v);
    const double t2 = c.stddev * c.stddev;
    const double r = x[v] - c.offset;
    auto& f = factor[tree.observable_parent(v)];
    f.j += c.slope * c.slope / t2;
    f.h += c.slope * r / t2;
    f.g += -0.5 * std::log(2 * std::numbers::pi * t2) - r * r / (2 * t2);
  }
  double result = 0.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int l = *it;
    const auto& c = model.latent(l);
    const auto parent = tree.latent_parent(l);
    const Quadratic msg = integrate_out(factor[l], parent ? c.slope : 0.0, c.offset, c.stddev);
    if (!std::isfinite(msg.g) || !std::isfinite(msg.h) || !std::isfinite(msg.j))
      throw NumericError("numerically singular message at latent " + std::to_string(l));
    if (parent) {
      auto& f = factor[*parent];
      f.g += msg.g;
      f.h += msg.h;
      f.j += msg.j;
    } else {
      result = msg.g;
    }
  }
  return result;
}

GaussianMoments exact_moments(const LinearGaussianLtm& model) {
  const int latents = model.num_latents();
  const auto& tree = model.tree();
  Eigen::MatrixXd loadings = Eigen::MatrixXd::Zero(latents, latents);  // Z = loadings eps + mean
  Eigen::VectorXd z_mean = Eigen::VectorXd::Zero(latents);
  for (int l : tree.latents_breadth_first()) {
    const auto& c = model.latent(l);
    if (const auto parent = tree.latent_parent(l)) {
      loadings.row(l) = c.slope * loadings.row(*parent);
      z_mean(l) = c.slope * z_mean(*parent) + c.offset;
    } else {
      z_mean(l) = c.offset;
    }
    loadings(l, l) += c.stddev;
  }
  const int d = model.num_vars();
  Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(d, latents);
  GaussianMoments m{Eigen::VectorXd(d), Eigen::MatrixXd()};
  for (int v = 0; v < d; ++v) {
    const auto& c = model.observable(v);
    const int l = tree.observable_parent(v);
    obs(v, l) = c.slope;
    m.mean(v) = c.slope * z_mean(l) + c.offset;
  }
  const Eigen::MatrixXd a = obs * loadings;
  m.covariance = a * a.transpose();
  for (int v = 0; v < d; ++v) m.covariance(v, v) += model.observable(v).stddev * model.observable(v).stddev;
  return m;
}

double mvn_log_density(const GaussianMoments& moments, std::span<const double> x) {
  const auto d = moments.mean.size();
  if (static_cast<Eigen::Index>(x.size()) != d) throw ArgumentError("x has the wrong length");
  Eigen::LLT<Eigen::MatrixXd> llt(moments.covariance);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is numerically singular");
  Eigen::VectorXd r(d);
  for (Eigen::Index i = 0; i < d; ++i) r(i) = x[i] - moments.mean(i);
  const Eigen::VectorXd y = llt.matrixL().solve(r);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (y.squaredNorm() + log_det + d * std::log(2 * std::numbers::pi));
}

Circuit to_pic(const LinearGaussianLtm& model) {
  std::vector<VariableType> types(model.num_vars(), VariableType{Family::gaussian, 0});
  return bn_to_pic(model.tree(), types);
}

std::vector<std::pair<double, double>> select_domains(const LinearGaussianLtm& model, std::size_t n,
                                                      RuleKind kind, double sigmas) {
  if (!(sigmas > 0)) throw ArgumentError("window width must be positive");
  std::vector<std::pair<double, double>> domains(model.num_latents());
  std::vector<QuadratureRule> rules(model.num_latents());
  for (int l : model.tree().latents_breadth_first()) {
    const auto& c = model.latent(l);
    double lo = c.offset;
    double hi = c.offset;
    if (const auto parent = model.tree().latent_parent(l)) {
      lo = std::numeric_limits<double>::infinity();
      hi = -lo;
      for (double z : rules[*parent].points) {
        lo = std::min(lo, c.slope * z + c.offset);
        hi = std::max(hi, c.slope * z + c.offset);
      }
    }
    domains[l] = {lo - sigmas * c.stddev, hi + sigmas * c.stddev};
    rules[l] = make_rule(kind, n, domains[l].first, domains[l].second);
  }
  return domains;
}

std::vector<QuadratureRule> domain_rules(const LinearGaussianLtm& model, std::size_t n, RuleKind kind,
                                         double sigmas) {
  const auto domains = select_domains(model, n, kind, sigmas);
  std::vector<QuadratureRule> rules;
  for (const auto& [a, b] : domains) rules.push_back(make_rule(kind, n, a, b));
  return rules;
}

GaussianGridParameters::GaussianGridParameters(const LinearGaussianLtm& model, std::vector<QuadratureRule> rules)
    : model_(model), rules_(std::move(rules)) {
  if (static_cast<int>(rules_.size()) != model.num_latents()) throw ArgumentError("need one rule per latent");
}

double GaussianGridParameters::log_sum_weight(int latent, std::size_t parent_point, std::size_t point) const {
  const auto& c = model_.latent(latent);
  const auto& rule = rules_[latent];
  double mean = c.offset;
  if (const auto parent = model_.tree().latent_parent(latent))
    mean += c.slope * rules_[*parent].points.at(parent_point);
  return std::log(rule.weights[point]) + normal_log_density(rule.points[point], mean, c.stddev);
}

InputDistribution GaussianGridParameters::input(int var, std::size_t point) const {
  const auto& c = model_.observable(var);
  const double z = rules_[model_.tree().observable_parent(var)].points.at(point);
  return InputDistribution::gaussian(c.slope * z + c.offset, std::log(c.stddev));
}

double GaussianConditionals::log_density(int latent, double z, std::optional<double> parent) const {
  const auto& c = model_.latent(latent);
  const double mean = parent ? c.slope * *parent + c.offset : c.offset;
  return normal_log_density(z, mean, c.stddev);
}

InputDistribution GaussianConditionals::input(int var, double z) const {
  const auto& c = model_.observable(var);
  return InputDistribution::gaussian(c.slope * z + c.offset, std::log(c.stddev));
}

PointSelector three_sigma_selector(const LinearGaussianLtm& model, RuleKind kind, std::size_t n,
                                   double sigmas) {
  return [&model, kind, n, sigmas](int latent, std::optional<double> parent) {
    const auto& c = model.latent(latent);
    const double mean = parent ? c.slope * *parent + c.offset : c.offset;
    return make_rule(kind, n, mean - sigmas * c.stddev, mean + sigmas * c.stddev);
  };
}

Circuit gaussian_qpc(const LinearGaussianLtm& model, std::size_t n, RuleKind kind, double sigmas) {
  auto rules = domain_rules(model, n, kind, sigmas);
  GaussianGridParameters params(model, rules);
  return materialize_qpc(to_pic(model), rules, params);
}

double sanity_mse(const LinearGaussianLtm& model, const Eigen::MatrixXd& samples, std::size_t n, RuleKind kind,
                  double sigmas) {
  const BatchEvaluator evaluator(gaussian_qpc(model, n, kind, sigmas));
  const auto approx = evaluator.log_likelihood(samples);
  std::vector<double> sq(samples.rows());
  parallel_for(sq.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> row(samples.cols());
    for (std::size_t r = begin; r < end; ++r) {
      for (Eigen::Index c = 0; c < samples.cols(); ++c) row[c] = samples(static_cast<Eigen::Index>(r), c);
      const double diff = exact_loglik(model, row) - approx[r];
      sq[r] = diff * diff;
    }
  });
  double total = 0.0;
  for (double s : sq) total += s;
  return total / static_cast<double>(sq.size());
}

nlohmann::json gaussian_ltm_to_json(const LinearGaussianLtm& model) {
  return {{"kind", "linear-gaussian"}, {"tree", latent_tree_to_json(model.tree())}};
}

LinearGaussianLtm gaussian_ltm_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "linear-gaussian") throw SchemaError("not a linear-Gaussian model");
    return LinearGaussianLtm(latent_tree_from_json(doc.at("tree")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("linear-Gaussian schema: ") + e.what());
  }
}

}  // namespace picirc
