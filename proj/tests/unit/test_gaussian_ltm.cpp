#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "picirc/gaussian_ltm.hpp"
#include "picirc/runtime.hpp"
#include "../support.hpp"

using namespace picirc;

namespace {

LinearGaussianLtm single(double mu, double sigma, double c, double d, double tau) {
  std::vector<TreeNode> nodes(2);
  nodes[0].conditional = LinearGaussianConditional{0.0, mu, sigma};
  nodes[1].kind = NodeKind::observable;
  nodes[1].parent = 0;
  nodes[1].conditional = LinearGaussianConditional{c, d, tau};
  return LinearGaussianLtm(LatentTree(nodes));
}

}  // namespace

TEST_CASE("one latent, one observable: X is normal with the propagated moments") {
  const auto m = single(0.4, 1.3, -1.7, 0.2, 0.6);
  const double mean = -1.7 * 0.4 + 0.2;
  const double var = 1.7 * 1.7 * 1.3 * 1.3 + 0.36;
  for (double x : {-3.0, 0.0, 1.25}) {
    const double expected = -0.5 * std::log(2 * M_PI * var) - 0.5 * (x - mean) * (x - mean) / var;
    const std::vector<double> row{x};
    CHECK(exact_loglik(m, row) == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("message passing equals the dense multivariate normal") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_gaussian_ltm(16, seed);
    const auto moments = exact_moments(m);
    const auto x = sample(m, 5, seed + 100);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      std::vector<double> v(x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) v[c] = x(r, c);
      CHECK(exact_loglik(m, v) == doctest::Approx(mvn_log_density(moments, v)).epsilon(1e-10));
    }
  }
}

TEST_CASE("missing entries are integrated out") {
  const auto m = random_gaussian_ltm(10, 3);
  const auto mom = exact_moments(m);
  const std::vector<double> full{0.3, -1.0, 2.0, 0.5, -0.2};
  std::vector<double> partial = full;
  partial[1] = partial[3] = std::numeric_limits<double>::quiet_NaN();
  const std::vector<int> keep{0, 2, 4};
  GaussianMoments sub{Eigen::VectorXd(3), Eigen::MatrixXd(3, 3)};
  std::vector<double> xs;
  for (int i = 0; i < 3; ++i) {
    sub.mean(i) = mom.mean(keep[i]);
    for (int j = 0; j < 3; ++j) sub.covariance(i, j) = mom.covariance(keep[i], keep[j]);
    xs.push_back(full[keep[i]]);
  }
  CHECK(exact_loglik(m, partial) == doctest::Approx(mvn_log_density(sub, xs)).epsilon(1e-12));
}

TEST_CASE("sample moments approach the exact ones") {
  const auto m = random_gaussian_ltm(8, 4);
  const auto mom = exact_moments(m);
  const auto x = sample(m, 200000, 5);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  for (int i = 0; i < 4; ++i) {
    CHECK(mean(i) == doctest::Approx(mom.mean(i)).epsilon(0.02).scale(std::sqrt(mom.covariance(i, i))));
    for (int j = 0; j < 4; ++j)
      CHECK(cov(i, j) == doctest::Approx(mom.covariance(i, j)).epsilon(0.03).scale(mom.covariance.diagonal().maxCoeff()));
  }
  CHECK(x == sample(m, 200000, 5));
}

TEST_CASE("random generator respects its ranges") {
  const auto m = random_gaussian_ltm(20, 6);
  CHECK(m.num_latents() == 10);
  CHECK(m.num_vars() == 10);
  for (int l = 0; l < 10; ++l) {
    const auto& c = m.latent(l);
    CHECK(std::abs(c.slope) <= 2.0);
    CHECK(std::abs(c.offset) <= 1.0);
    CHECK(c.stddev >= 0.5);
    CHECK(c.stddev <= 1.5);
    if (l) CHECK(*m.tree().latent_parent(l) < l);
  }
  for (int v = 0; v < 10; ++v) CHECK(m.tree().observable_parent(v) == v);
  CHECK_THROWS(random_gaussian_ltm(7, 0));
}

TEST_CASE("domain windows follow the parent points") {
  const auto m = random_gaussian_ltm(12, 7);
  const std::size_t n = 9;
  const auto dom = select_domains(m, n);
  const int root = m.root_latent();
  CHECK(dom[root].first == doctest::Approx(m.latent(root).offset - 3 * m.latent(root).stddev));
  CHECK(dom[root].second == doctest::Approx(m.latent(root).offset + 3 * m.latent(root).stddev));
  for (int l = 0; l < m.num_latents(); ++l) {
    const auto parent = m.tree().latent_parent(l);
    if (!parent) continue;
    const auto& c = m.latent(l);
    const double e1 = c.slope * dom[*parent].first + c.offset;
    const double e2 = c.slope * dom[*parent].second + c.offset;
    CHECK(dom[l].first == doctest::Approx(std::min(e1, e2) - 3 * c.stddev));
    CHECK(dom[l].second == doctest::Approx(std::max(e1, e2) + 3 * c.stddev));
  }
}

TEST_CASE("QPC log-likelihoods improve with N") {
  const auto m = random_gaussian_ltm(8, 8);
  const auto x = sample(m, 200, 9);
  const double coarse = sanity_mse(m, x, 8);
  const double fine = sanity_mse(m, x, 64);
  CHECK(fine < coarse);
  CHECK(fine < 1e-2);
  const auto q = gaussian_qpc(m, 16);
  const auto rep = check_structure(q);
  CHECK((rep.smooth && rep.decomposable && rep.structured));
}

TEST_CASE("json round trip and validation") {
  const auto m = random_gaussian_ltm(6, 10);
  const auto back = gaussian_ltm_from_json(gaussian_ltm_to_json(m));
  CHECK(back.tree() == m.tree());
  CHECK_THROWS(LinearGaussianLtm(testsupport::chain_hclt(2)));
}
