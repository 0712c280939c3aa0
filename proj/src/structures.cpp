#include "picirc/structures.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>
#include <string>
#include <tuple>

#include "picirc/errors.hpp"

namespace picirc {

// ---------------------------------------------------------------- LatentTree

LatentTree::LatentTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  const int n = static_cast<int>(nodes_.size());
  if (n == 0) throw ArgumentError("latent tree needs nodes");
  for (const auto& node : nodes_) {
    if (node.kind == NodeKind::latent) num_latents_ = std::max(num_latents_, node.index + 1);
    else num_observables_ = std::max(num_observables_, node.index + 1);
  }
  latent_nodes_.assign(num_latents_, -1);
  observable_nodes_.assign(num_observables_, -1);
  for (int p = 0; p < n; ++p) {
    const auto& node = nodes_[p];
    if (node.index < 0) throw ArgumentError("negative node index");
    auto& slot = node.kind == NodeKind::latent ? latent_nodes_[node.index]
                                               : observable_nodes_[node.index];
    if (slot != -1) throw ArgumentError("duplicate node index " + std::to_string(node.index));
    slot = p;
    if (node.parent == -1) {
      if (root_ != -1) throw ArgumentError("latent tree has more than one root");
      root_ = p;
    } else if (node.parent < 0 || node.parent >= n || node.parent == p) {
      throw ArgumentError("node " + std::to_string(p) + " has an invalid parent");
    }
  }
  if (root_ == -1) throw ArgumentError("latent tree has no root");
  if (std::count(latent_nodes_.begin(), latent_nodes_.end(), -1) ||
      std::count(observable_nodes_.begin(), observable_nodes_.end(), -1))
    throw ArgumentError("latent and observable indices must be dense");

  latent_children_.assign(num_latents_, {});
  observable_children_.assign(num_latents_, {});
  for (int p = 0; p < n; ++p) {
    const auto& node = nodes_[p];
    if (node.parent == -1) continue;
    const auto& parent = nodes_[node.parent];
    if (parent.kind != NodeKind::latent)
      throw ArgumentError("observable " + std::to_string(parent.index) + " is not a leaf");
    if (node.kind == NodeKind::latent) latent_children_[parent.index].push_back(node.index);
    else observable_children_[parent.index].push_back(node.index);
  }
  for (auto& c : latent_children_) std::sort(c.begin(), c.end());
  for (auto& c : observable_children_) std::sort(c.begin(), c.end());
  if (nodes_[root_].kind != NodeKind::latent) throw ArgumentError("root must be a latent");

  // Acyclic and connected: every node must reach the root.
  for (int p = 0; p < n; ++p) {
    int cur = p;
    for (int steps = 0; cur != root_; ++steps) {
      if (steps > n) throw ArgumentError("parent map contains a cycle");
      cur = nodes_[cur].parent;
    }
  }
}

std::optional<int> LatentTree::latent_parent(int latent) const {
  const auto& node = nodes_[latent_nodes_.at(latent)];
  if (node.parent == -1) return std::nullopt;
  return nodes_[node.parent].index;
}

int LatentTree::observable_parent(int var) const {
  return nodes_[nodes_[observable_nodes_.at(var)].parent].index;
}

std::vector<int> LatentTree::latents_breadth_first() const {
  std::vector<int> order;
  std::deque<int> queue{nodes_[root_].index};
  while (!queue.empty()) {
    const int l = queue.front();
    queue.pop_front();
    order.push_back(l);
    for (int c : latent_children_[l]) queue.push_back(c);
  }
  return order;
}

bool LatentTree::is_hclt() const {
  if (num_latents_ != num_observables_) return false;
  for (int l = 0; l < num_latents_; ++l)
    if (observable_children_[l].size() != 1) return false;
  return true;
}

namespace {

using nlohmann::json;

json conditional_to_json(const Conditional& c) {
  json j;
  if (const auto* n = std::get_if<NeuralConditional>(&c)) {
    j["type"] = "neural";
    j["net"] = n->net;
  } else {
    const auto& g = std::get<LinearGaussianConditional>(c);
    j["type"] = "linear-gaussian";
    j["slope"] = exact_decimal(g.slope);
    j["offset"] = exact_decimal(g.offset);
    j["stddev"] = exact_decimal(g.stddev);
  }
  return j;
}

Conditional conditional_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "neural") return NeuralConditional{j.at("net").get<int>()};
  if (type == "linear-gaussian")
    return LinearGaussianConditional{parse_exact_decimal(j.at("slope").get<std::string>()),
                                     parse_exact_decimal(j.at("offset").get<std::string>()),
                                     parse_exact_decimal(j.at("stddev").get<std::string>())};
  throw SchemaError("unknown conditional type '" + type + "'");
}

}  // namespace

nlohmann::json latent_tree_to_json(const LatentTree& tree) {
  json nodes = json::array();
  json parents = json::array();
  json conditionals = json::array();
  for (const auto& node : tree.nodes()) {
    nodes.push_back({{"kind", node.kind == NodeKind::latent ? "latent" : "observable"},
                     {"index", node.index}});
    parents.push_back(node.parent);
    conditionals.push_back(conditional_to_json(node.conditional));
  }
  return {{"nodes", nodes}, {"parents", parents}, {"conditionals", conditionals}};
}

LatentTree latent_tree_from_json(const nlohmann::json& doc) {
  try {
    const auto& nodes = doc.at("nodes");
    const auto& parents = doc.at("parents");
    const auto& conditionals = doc.at("conditionals");
    if (nodes.size() != parents.size() || nodes.size() != conditionals.size())
      throw SchemaError("latent tree arrays differ in length");
    std::vector<TreeNode> out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      TreeNode node;
      const auto kind = nodes[i].at("kind").get<std::string>();
      if (kind == "latent") node.kind = NodeKind::latent;
      else if (kind == "observable") node.kind = NodeKind::observable;
      else throw SchemaError("unknown node kind '" + kind + "'");
      node.index = nodes[i].at("index").get<int>();
      node.parent = parents[i].get<int>();
      node.conditional = conditional_from_json(conditionals[i]);
      out.push_back(node);
    }
    return LatentTree(std::move(out));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("latent tree schema: ") + e.what());
  }
}

// ---------------------------------------------------------------- mutual information

namespace {

int column_states(const Eigen::MatrixXi& data, int col) {
  const int lo = data.col(col).minCoeff();
  if (lo < 0) throw ArgumentError("column " + std::to_string(col) + " has negative values");
  return data.col(col).maxCoeff() + 1;
}

double mutual_information_with_states(const Eigen::MatrixXi& data, int i, int j, int ki, int kj,
                                      double alpha) {
  const auto rows = data.rows();
  std::vector<double> joint(static_cast<std::size_t>(ki) * kj, alpha);
  for (Eigen::Index r = 0; r < rows; ++r) joint[data(r, i) * kj + data(r, j)] += 1.0;
  const double total = rows + alpha * ki * kj;
  std::vector<double> pi(ki, 0.0);
  std::vector<double> pj(kj, 0.0);
  for (int a = 0; a < ki; ++a)
    for (int b = 0; b < kj; ++b) {
      const double p = joint[a * kj + b] / total;
      pi[a] += p;
      pj[b] += p;
    }
  double mi = 0.0;
  for (int a = 0; a < ki; ++a)
    for (int b = 0; b < kj; ++b) {
      const double p = joint[a * kj + b] / total;
      if (p > 0.0) mi += p * std::log(p / (pi[a] * pj[b]));
    }
  return std::max(0.0, mi);
}

}  // namespace

double mutual_information(const Eigen::MatrixXi& data, int i, int j, double alpha) {
  if (data.rows() == 0) throw ArgumentError("mutual information of empty data");
  if (i < 0 || j < 0 || i >= data.cols() || j >= data.cols())
    throw ArgumentError("column index out of range");
  return mutual_information_with_states(data, i, j, column_states(data, i), column_states(data, j),
                                        alpha);
}

Eigen::MatrixXd mutual_information_matrix(const Eigen::MatrixXi& data, double alpha) {
  if (data.rows() == 0) throw ArgumentError("mutual information of empty data");
  const int d = static_cast<int>(data.cols());
  std::vector<int> states(d);
  for (int c = 0; c < d; ++c) states[c] = column_states(data, c);
  Eigen::MatrixXd mi = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      mi(i, j) = mi(j, i) = mutual_information_with_states(data, i, j, states[i], states[j], alpha);
  return mi;
}

// ---------------------------------------------------------------- Chow-Liu

std::vector<int> maximum_spanning_tree(const Eigen::MatrixXd& weights) {
  const int d = static_cast<int>(weights.rows());
  if (d < 1 || weights.cols() != d) throw ArgumentError("weight matrix must be square");
  std::vector<std::tuple<double, int, int>> edges;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) edges.emplace_back(weights(i, j), i, j);
  std::stable_sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
  });

  std::vector<int> uf(d);
  std::iota(uf.begin(), uf.end(), 0);
  auto find = [&](int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  };
  std::vector<std::vector<int>> adj(d);
  for (const auto& [w, i, j] : edges) {
    const int a = find(i);
    const int b = find(j);
    if (a == b) continue;
    uf[a] = b;
    adj[i].push_back(j);
    adj[j].push_back(i);
  }

  std::vector<int> parent(d, -2);
  parent[0] = -1;
  std::deque<int> queue{0};
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    std::sort(adj[v].begin(), adj[v].end());
    for (int u : adj[v]) {
      if (parent[u] != -2) continue;
      parent[u] = v;
      queue.push_back(u);
    }
  }
  return parent;
}

std::vector<int> chow_liu_tree(const Eigen::MatrixXi& data, double alpha) {
  if (data.cols() < 2) throw ArgumentError("Chow-Liu tree needs at least two variables");
  return maximum_spanning_tree(mutual_information_matrix(data, alpha));
}

LatentTree hclt_structure(std::span<const int> parents) {
  const int d = static_cast<int>(parents.size());
  if (d == 0) throw ArgumentError("empty tree");
  std::vector<TreeNode> nodes(2 * d);
  for (int i = 0; i < d; ++i) {
    nodes[i] = TreeNode{NodeKind::latent, i, parents[i], NeuralConditional{i}};
    nodes[d + i] = TreeNode{NodeKind::observable, i, i, NeuralConditional{i}};
  }
  return LatentTree(std::move(nodes));
}

// ---------------------------------------------------------------- BN -> PIC

std::vector<int> default_elimination_order(const LatentTree& tree) {
  auto order = tree.latents_breadth_first();
  std::reverse(order.begin(), order.end());
  return order;
}

Circuit bn_to_pic(const LatentTree& tree, std::span<const VariableType> types,
                  std::optional<std::vector<int>> elimination_order) {
  const int num_latents = tree.num_latents();
  const int num_vars = tree.num_observables();
  if (static_cast<int>(types.size()) != num_vars)
    throw ArgumentError("need one variable type per observable");
  const std::vector<int> order =
      elimination_order ? *elimination_order : default_elimination_order(tree);

  std::vector<bool> listed(num_latents, false);
  for (int l : order) {
    if (l < 0 || l >= num_latents) throw ArgumentError("elimination order names unknown latent");
    if (listed[l]) throw ArgumentError("latent " + std::to_string(l) + " listed twice");
    listed[l] = true;
  }
  for (int l = 0; l < num_latents; ++l)
    if (!listed[l]) throw ArgumentError("elimination order is missing latent " + std::to_string(l));

  struct Pending {
    UnitId unit;
    std::optional<int> mentions;  // the single latent this unit's function still depends on
  };
  CircuitBuilder builder(num_vars);
  std::vector<Pending> active;
  for (int v = 0; v < num_vars; ++v) {
    const int latent = tree.observable_parent(v);
    int net = v;
    if (const auto* n = std::get_if<NeuralConditional>(&tree.observable(v).conditional)) net = n->net;
    const auto& t = types[v];
    active.push_back({builder.add_input(v, InputDistribution::conditional(t.family, t.num_states,
                                                                          latent, net)),
                      latent});
  }

  std::vector<bool> eliminated(num_latents, false);
  for (int l : order) {
    for (int c : tree.latent_children(l))
      if (!eliminated[c])
        throw ArgumentError("latent " + std::to_string(l) + " eliminated before its child " +
                            std::to_string(c));
    std::vector<UnitId> mentioning;
    std::vector<Pending> rest;
    for (const auto& p : active) {
      if (p.mentions == l) mentioning.push_back(p.unit);
      else rest.push_back(p);
    }
    if (mentioning.empty())
      throw ArgumentError("latent " + std::to_string(l) + " has no observable descendants");
    const UnitId inner =
        mentioning.size() == 1 ? mentioning.front() : builder.add_product(std::move(mentioning));
    const auto parent = tree.latent_parent(l);
    rest.push_back({builder.add_integral(inner, l, parent), parent});
    active = std::move(rest);
    eliminated[l] = true;
  }

  if (active.size() == 1) return std::move(builder).build(active.front().unit);
  std::vector<UnitId> roots;
  for (const auto& p : active) roots.push_back(p.unit);
  const UnitId root = builder.add_product(std::move(roots));
  return std::move(builder).build(root);
}

}  // namespace picirc
