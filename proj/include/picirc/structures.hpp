#pragma once

// Structure learning (Chow-Liu, hidden Chow-Liu trees) and compilation of
// latent tree models into tree-shaped integral circuits.

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "picirc/circuit.hpp"

namespace picirc {

enum class NodeKind { latent, observable };

/// Z ~ N(slope * parent + offset, stddev^2). The root prior uses slope 0.
struct LinearGaussianConditional {
  double slope = 0.0;
  double offset = 0.0;
  double stddev = 1.0;

  bool operator==(const LinearGaussianConditional&) const = default;
};

/// Conditional parameterized by a neural net (energy net for latents, decoder for observables).
struct NeuralConditional {
  int net = 0;

  bool operator==(const NeuralConditional&) const = default;
};

using Conditional = std::variant<NeuralConditional, LinearGaussianConditional>;

struct TreeNode {
  NodeKind kind = NodeKind::latent;
  int index = 0;    // latent index (Z_index) or observable index (X_index)
  int parent = -1;  // node position, -1 at the root
  Conditional conditional;

  bool operator==(const TreeNode&) const = default;
};

/// Tree-shaped Bayesian network over latents Z and observables X.
/// Observables are leaves; latent and observable indices are each dense from 0.
class LatentTree {
 public:
  explicit LatentTree(std::vector<TreeNode> nodes);

  std::span<const TreeNode> nodes() const { return nodes_; }
  const TreeNode& node(int position) const { return nodes_.at(position); }
  int root() const { return root_; }
  int num_latents() const { return num_latents_; }
  int num_observables() const { return num_observables_; }

  int latent_node(int latent) const { return latent_nodes_.at(latent); }
  int observable_node(int var) const { return observable_nodes_.at(var); }
  const TreeNode& latent(int latent) const { return nodes_[latent_nodes_.at(latent)]; }
  const TreeNode& observable(int var) const { return nodes_[observable_nodes_.at(var)]; }

  std::optional<int> latent_parent(int latent) const;
  /// Latent index an observable hangs from.
  int observable_parent(int var) const;
  const std::vector<int>& latent_children(int latent) const { return latent_children_.at(latent); }
  const std::vector<int>& observable_children(int latent) const {
    return observable_children_.at(latent);
  }

  /// Latents in breadth-first order from the root latent.
  std::vector<int> latents_breadth_first() const;

  /// Every observable has its own latent parent and every latent exactly one observable child.
  bool is_hclt() const;

  bool operator==(const LatentTree& other) const { return nodes_ == other.nodes_; }

 private:
  std::vector<TreeNode> nodes_;
  int root_ = -1;
  int num_latents_ = 0;
  int num_observables_ = 0;
  std::vector<int> latent_nodes_;
  std::vector<int> observable_nodes_;
  std::vector<std::vector<int>> latent_children_;
  std::vector<std::vector<int>> observable_children_;
};

nlohmann::json latent_tree_to_json(const LatentTree& tree);
LatentTree latent_tree_from_json(const nlohmann::json& doc);

/// Plug-in mutual information (nats) between two integer columns with additive
/// (Laplace) smoothing alpha on every joint cell. Column values must be >= 0; the
/// number of states per column is max value + 1.
double mutual_information(const Eigen::MatrixXi& data, int i, int j, double alpha = 0.01);

/// Symmetric D x D matrix of pairwise mutual information (zero diagonal).
Eigen::MatrixXd mutual_information_matrix(const Eigen::MatrixXi& data, double alpha = 0.01);

/// Maximum spanning tree of the mutual information graph, rooted at variable 0.
/// Returns parent[v] (-1 for the root). Ties go to the lexicographically smallest edge.
std::vector<int> chow_liu_tree(const Eigen::MatrixXi& data, double alpha = 0.01);

/// Same, from a precomputed weight matrix.
std::vector<int> maximum_spanning_tree(const Eigen::MatrixXd& weights);

/// Hidden Chow-Liu tree: each X_i is replaced by Z_i in the skeleton, then re-attached
/// as the only observable child of Z_i. Nodes [0, D) are Z_0..Z_{D-1}, nodes [D, 2D) are
/// X_0..X_{D-1}; conditionals are neural with net id equal to the variable index.
LatentTree hclt_structure(std::span<const int> parents);

/// Children-before-parents elimination order (reverse breadth-first from the root).
std::vector<int> default_elimination_order(const LatentTree& tree);

/// Compiles a latent tree into a tree-shaped, smooth, structured-decomposable PIC by
/// eliminating latents one at a time. Each latent becomes one integral unit over the
/// product of every unit whose function mentions it; single-child products are pruned.
///
/// The order must list every latent exactly once, children before parents.
Circuit bn_to_pic(const LatentTree& tree, std::span<const VariableType> types,
                  std::optional<std::vector<int>> elimination_order = std::nullopt);

}  // namespace picirc
