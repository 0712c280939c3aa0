#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "picirc/errors.hpp"
#include "picirc/structures.hpp"
#include "../support.hpp"

using namespace picirc;

TEST_CASE("mutual information of identical uniform binary columns is ln 2") {
  Eigen::MatrixXi data(4, 2);
  data << 0, 0, 1, 1, 0, 0, 1, 1;
  CHECK(mutual_information(data, 0, 1, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("mutual information of independent columns is zero and is symmetric") {
  Eigen::MatrixXi data(4, 2);
  data << 0, 0, 0, 1, 1, 0, 1, 1;
  CHECK(std::abs(mutual_information(data, 0, 1, 0.0)) < 1e-15);

  std::mt19937_64 rng(2);
  Eigen::MatrixXi r(200, 4);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = static_cast<int>(rng() % 3);
  const auto mi = mutual_information_matrix(r, 0.01);
  CHECK((mi - mi.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(mi.diagonal().cwiseAbs().maxCoeff() == 0.0);
  CHECK(mi.minCoeff() >= -1e-15);
}

TEST_CASE("chow-liu recovers a noisy chain") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution flip(0.1);
  Eigen::MatrixXi data(3000, 5);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    data(r, 0) = static_cast<int>(rng() % 2);
    for (int c = 1; c < 5; ++c) data(r, c) = flip(rng) ? 1 - data(r, c - 1) : data(r, c - 1);
  }
  const auto parents = chow_liu_tree(data);
  CHECK(parents == std::vector<int>{-1, 0, 1, 2, 3});
}

TEST_CASE("maximum spanning tree breaks ties by index") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(3, 3);
  const auto parents = maximum_spanning_tree(w);
  CHECK(parents == std::vector<int>{-1, 0, 0});
}

TEST_CASE("hidden chow-liu structure") {
  const std::vector<int> parents{-1, 0, 0, 2};
  const auto tree = hclt_structure(parents);
  CHECK(tree.num_latents() == 4);
  CHECK(tree.num_observables() == 4);
  CHECK(tree.is_hclt());
  for (int v = 0; v < 4; ++v) CHECK(tree.observable_parent(v) == v);
  CHECK(tree.latent_parent(3) == 2);
  CHECK_FALSE(tree.latent_parent(0).has_value());
  CHECK(latent_tree_from_json(latent_tree_to_json(tree)) == tree);
}

TEST_CASE("latent tree validation") {
  std::vector<TreeNode> two_roots(2);
  two_roots[1].index = 1;
  CHECK_THROWS_AS(LatentTree{two_roots}, ArgumentError);

  std::vector<TreeNode> cyc(2);
  cyc[0].parent = 1;
  cyc[1].index = 1;
  cyc[1].parent = 0;
  CHECK_THROWS_AS(LatentTree{cyc}, ArgumentError);

  std::vector<TreeNode> obs_parent(3);
  obs_parent[1].kind = NodeKind::observable;
  obs_parent[1].parent = 0;
  obs_parent[2].kind = NodeKind::observable;
  obs_parent[2].index = 1;
  obs_parent[2].parent = 1;
  CHECK_THROWS_AS(LatentTree{obs_parent}, ArgumentError);

  CHECK_THROWS_AS(latent_tree_from_json(nlohmann::json{{"nodes", 1}}), SchemaError);
}

TEST_CASE("bn_to_pic: one integral per latent, structured, for any valid order") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int latents = 1 + static_cast<int>(rng() % 6);
    const int obs = latents + static_cast<int>(rng() % 5);
    const auto tree = testsupport::random_latent_tree(latents, obs, rng);
    const std::vector<VariableType> types(obs, {Family::categorical, 3});

    // Random children-before-parents order: reverse of a random top-down order.
    std::vector<int> order;
    std::vector<int> frontier{tree.node(tree.root()).index};
    while (!frontier.empty()) {
      const auto pick = rng() % frontier.size();
      const int l = frontier[pick];
      frontier.erase(frontier.begin() + static_cast<long>(pick));
      order.push_back(l);
      for (int c : tree.latent_children(l)) frontier.push_back(c);
    }
    std::reverse(order.begin(), order.end());

    for (const auto& pic : {bn_to_pic(tree, types), bn_to_pic(tree, types, order)}) {
      CHECK(testsupport::count_kind(pic, UnitKind::integral) == static_cast<std::size_t>(latents));
      std::vector<int> seen(latents, 0);
      for (const auto& u : pic.units())
        if (u.kind == UnitKind::integral) ++seen[u.latent->index];
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
      const auto rep = check_structure(pic);
      CHECK(rep.smooth);
      CHECK(rep.decomposable);
      CHECK(rep.structured);
      CHECK(pic.is_symbolic());
    }
  }
}

TEST_CASE("bn_to_pic rejects orders that eliminate a parent first") {
  const auto tree = testsupport::chain_hclt(3);
  const std::vector<VariableType> types(3, {Family::categorical, 2});
  CHECK_THROWS_AS(bn_to_pic(tree, types, std::vector<int>{0, 1, 2}), ArgumentError);
  CHECK_THROWS_AS(bn_to_pic(tree, types, std::vector<int>{2, 1}), ArgumentError);
  CHECK_THROWS_AS(bn_to_pic(tree, types, std::vector<int>{2, 2, 1}), ArgumentError);
  CHECK(default_elimination_order(tree) == std::vector<int>{2, 1, 0});
}
