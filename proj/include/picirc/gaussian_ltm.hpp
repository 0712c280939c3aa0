#pragma once

// Linear-Gaussian latent tree models: sampling, exact marginal likelihood,
// conversion to PICs and the quadrature approximation check.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "picirc/circuit.hpp"
#include "picirc/materializer.hpp"
#include "picirc/quadrature.hpp"
#include "picirc/structures.hpp"

namespace picirc {

/// Z_i ~ N(a_i Z_pa(i) + b_i, sigma_i^2), root Z ~ N(mu, sigma^2), X_v ~ N(c_v Z + d_v, tau_v^2).
/// Each conditional is stored as (slope, offset, stddev) on its tree node.
class LinearGaussianLtm {
 public:
  explicit LinearGaussianLtm(LatentTree tree);

  const LatentTree& tree() const { return tree_; }
  int num_vars() const { return tree_.num_observables(); }
  int num_latents() const { return tree_.num_latents(); }
  int root_latent() const { return tree_.node(tree_.root()).index; }
  const LinearGaussianConditional& latent(int l) const { return latent_[l]; }
  const LinearGaussianConditional& observable(int v) const { return observable_[v]; }

 private:
  LatentTree tree_;
  std::vector<LinearGaussianConditional> latent_;
  std::vector<LinearGaussianConditional> observable_;
};

struct RandomLtmConfig {
  double slope = 2.0;         // a, c ~ U[-slope, slope]
  double offset = 1.0;        // b, d, mu ~ U[-offset, offset]
  double min_stddev = 0.5;    // sigma, tau ~ U[min, max]
  double max_stddev = 1.5;
};

/// num_nodes / 2 latents on a random recursive tree, each with one observable child.
LinearGaussianLtm random_gaussian_ltm(int num_nodes, std::uint64_t seed, const RandomLtmConfig& config = {});

/// Ancestral sampling, n x D.
Eigen::MatrixXd sample(const LinearGaussianLtm& model, std::size_t n, std::uint64_t seed);

/// Log-density of the exact marginal over X by upward closed-form messages.
double exact_loglik(const LinearGaussianLtm& model, std::span<const double> x);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Mean and covariance of X assembled from the full joint.
GaussianMoments exact_moments(const LinearGaussianLtm& model);

/// Multivariate normal log-density via Cholesky.
double mvn_log_density(const GaussianMoments& moments, std::span<const double> x);

/// Same structure as bn_to_pic with Gaussian inputs.
Circuit to_pic(const LinearGaussianLtm& model);

/// Per-latent integration domains, top-down: root [mu - 3 sigma, mu + 3 sigma]; a child spans
/// the images a z_n + b of its parent's points widened by 3 sigma. `sigmas` replaces the 3.
std::vector<std::pair<double, double>> select_domains(const LinearGaussianLtm& model, std::size_t n,
                                                      RuleKind kind = RuleKind::trapezoidal,
                                                      double sigmas = 3.0);
std::vector<QuadratureRule> domain_rules(const LinearGaussianLtm& model, std::size_t n,
                                         RuleKind kind = RuleKind::trapezoidal, double sigmas = 3.0);

/// Closed-form grid parameters: log(w_k N(z_k | a z_j + b, sigma^2)) and N(c z_j + d, tau^2).
class GaussianGridParameters : public QpcParameters {
 public:
  GaussianGridParameters(const LinearGaussianLtm& model, std::vector<QuadratureRule> rules);
  double log_sum_weight(int latent, std::size_t parent_point, std::size_t point) const override;
  InputDistribution input(int var, std::size_t point) const override;

 private:
  const LinearGaussianLtm& model_;
  std::vector<QuadratureRule> rules_;
};

class GaussianConditionals : public ContinuousConditionals {
 public:
  explicit GaussianConditionals(const LinearGaussianLtm& model) : model_(model) {}
  double log_density(int latent, double z, std::optional<double> parent) const override;
  InputDistribution input(int var, double z) const override;

 private:
  const LinearGaussianLtm& model_;
};

/// Rule of size n on the 3-sigma window of p(Z_latent | parent value).
PointSelector three_sigma_selector(const LinearGaussianLtm& model, RuleKind kind, std::size_t n,
                                   double sigmas = 3.0);

/// QPC built with per-latent rules from select_domains.
Circuit gaussian_qpc(const LinearGaussianLtm& model, std::size_t n, RuleKind kind = RuleKind::trapezoidal,
                     double sigmas = 3.0);

/// Mean squared error between exact and QPC log-likelihoods over the sample rows.
double sanity_mse(const LinearGaussianLtm& model, const Eigen::MatrixXd& samples, std::size_t n,
                  RuleKind kind = RuleKind::trapezoidal, double sigmas = 3.0);

/// Serialization of a linear-Gaussian model as its latent tree.
nlohmann::json gaussian_ltm_to_json(const LinearGaussianLtm& model);
LinearGaussianLtm gaussian_ltm_from_json(const nlohmann::json& doc);

}  // namespace picirc
