#pragma once

/**
 * @file clustering.hpp
 * @brief Non-binary online top-down (OTD) clustering of task gradients.
 *
 * Tasks are inserted one at a time into a tree of bounded depth. At each node
 * the decision compares the mean pairwise similarity of the children with and
 * without the new point:
 *
 *   1. no children           -> the point becomes the first child
 *   2. one child             -> the point is appended
 *   3. similarity increases  -> descend into the most similar child, or append
 *                               when the children already sit at max depth
 *   4. similarity drops by more than xi standard deviations
 *                            -> the node and the point become siblings under a
 *                               new parent (only when the depth bound allows)
 *   5. otherwise             -> the point is appended (widening)
 *
 * Internal children are compared through the mean of their leaf gradients.
 */

#include <algorithm>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treemaml/errors.hpp"
#include "treemaml/numerics.hpp"

namespace treemaml {

enum class ChildSelection {
  most_similar,   // argmax of similarity
  least_similar,  // argmin, the operator as literally printed
};

struct ClusterConfig {
  std::size_t max_depth = 2;
  double xi = 1.0;
  ChildSelection selection = ChildSelection::most_similar;

  void validate() const {
    if (max_depth < 1) throw ConfigError("cluster max_depth must be >= 1");
    if (!(xi >= 0.0)) throw ConfigError("cluster xi must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const ClusterConfig& c) {
  j = nlohmann::json{{"max_depth", c.max_depth},
                     {"xi", c.xi},
                     {"similarity", "cosine"},
                     {"selection", c.selection == ChildSelection::most_similar ? "argmax" : "argmin"}};
}

inline void from_json(const nlohmann::json& j, ClusterConfig& c) {
  c = ClusterConfig{};
  if (j.contains("max_depth")) j.at("max_depth").get_to(c.max_depth);
  if (j.contains("xi")) j.at("xi").get_to(c.xi);
  if (j.contains("similarity") && j.at("similarity").get<std::string>() != "cosine") {
    throw ConfigError("only the cosine similarity metric is supported");
  }
  if (j.contains("selection")) {
    const auto s = j.at("selection").get<std::string>();
    if (s == "argmax") {
      c.selection = ChildSelection::most_similar;
    } else if (s == "argmin") {
      c.selection = ChildSelection::least_similar;
    } else {
      throw ConfigError("unknown child selection: " + s);
    }
  }
}

/// A partition of task ids into clusters, in depth-first tree order.
using Clusters = std::vector<std::vector<std::size_t>>;

class ClusterTree {
 public:
  struct Node {
    std::size_t id = 0;
    std::optional<std::size_t> parent;
    std::vector<std::size_t> children;
    std::optional<std::size_t> task_id;  // set on task leaves only
    std::vector<double> gradient_sum;    // sum of descendant leaf gradients
    std::vector<std::size_t> members;    // descendant task ids
  };

  explicit ClusterTree(ClusterConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    nodes_.push_back(Node{});
    root_ = 0;
  }

  const ClusterConfig& config() const noexcept { return cfg_; }
  std::size_t root() const noexcept { return root_; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_leaves() const noexcept { return task_ids_.size(); }
  bool is_leaf(std::size_t id) const { return nodes_.at(id).task_id.has_value(); }

  std::size_t depth(std::size_t id) const {
    std::size_t d = 0;
    for (auto p = nodes_.at(id).parent; p; p = nodes_[*p].parent) ++d;
    return d;
  }

  /// Longest distance from the node down to a descendant.
  std::size_t height(std::size_t id) const {
    std::size_t h = 0;
    for (auto c : nodes_.at(id).children) h = std::max(h, 1 + height(c));
    return h;
  }

  std::size_t max_leaf_depth() const { return height(root_); }

  /// Leaf gradient for task leaves, mean of descendant leaf gradients otherwise.
  ParamVector representative(std::size_t id) const {
    const auto& n = nodes_.at(id);
    if (n.members.empty()) throw EmptyClusterError("representative of an empty cluster");
    auto v = ParamVector(n.gradient_sum);
    if (n.members.size() > 1) v *= 1.0 / static_cast<double>(n.members.size());
    return v;
  }

  /// One OTD insertion starting from the root.
  void insert(std::size_t task_id, const ParamVector& gradient) {
    if (task_ids_.contains(task_id)) {
      throw DuplicateTaskError("task " + std::to_string(task_id) + " already in the tree");
    }
    if (dim_ && *dim_ != gradient.dim()) {
      throw DimensionMismatchError("gradient dimension differs from earlier insertions");
    }
    if (norm(gradient) == 0.0) {
      throw ZeroVectorError("zero gradient for task " + std::to_string(task_id));
    }
    dim_ = gradient.dim();
    if (nodes_[root_].gradient_sum.empty()) nodes_[root_].gradient_sum.assign(*dim_, 0.0);

    const std::size_t leaf = new_node();
    nodes_[leaf].task_id = task_id;
    nodes_[leaf].gradient_sum = gradient.to_vector();
    nodes_[leaf].members = {task_id};

    const std::size_t new_root = insert_at(root_, 0, leaf);
    if (new_root != root_) {
      nodes_[new_root].parent.reset();
      root_ = new_root;
    }
    refresh_ancestors(leaf);
    task_ids_.insert(task_id);
  }

  /**
   * @brief Partition induced by cutting the tree at depth k.
   *
   * Nodes at depth k contribute their member sets; leaves shallower than k
   * persist as singletons. k = 0 yields the single root cluster.
   */
  Clusters clusters_at_level(std::size_t k) const {
    Clusters out;
    if (task_ids_.empty()) return out;
    collect(root_, 0, k, out);
    return out;
  }

  /// {"node_id", "depth", "children": [...], "member_tasks": [...]} recursively.
  nlohmann::json to_json() const { return node_json(root_, 0); }

 private:
  std::size_t new_node() {
    Node n;
    n.id = nodes_.size();
    n.gradient_sum.assign(dim_.value_or(0), 0.0);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  void attach(std::size_t parent, std::size_t child) {
    nodes_[parent].children.push_back(child);
    nodes_[child].parent = parent;
  }

  void replace_child(std::size_t parent, std::size_t old_child, std::size_t new_child) {
    auto& ch = nodes_[parent].children;
    *std::find(ch.begin(), ch.end(), old_child) = new_child;
    nodes_[new_child].parent = parent;
  }

  std::size_t select_child(std::span<const std::size_t> children, const ParamVector& x) const {
    std::size_t best = children.front();
    double best_sim = cosine_similarity(representative(best), x);
    for (auto c : children.subspan(1)) {
      const double s = cosine_similarity(representative(c), x);
      const bool better = cfg_.selection == ChildSelection::most_similar ? s > best_sim : s < best_sim;
      if (better || (s == best_sim && c < best)) {
        best = c;
        best_sim = s;
      }
    }
    return best;
  }

  // Returns the node that should take this node's place in its parent.
  std::size_t insert_at(std::size_t node, std::size_t node_depth, std::size_t leaf) {
    const auto children = nodes_[node].children;
    if (children.size() <= 1) {
      attach(node, leaf);
      return node;
    }

    const ParamVector x = representative(leaf);
    std::vector<ParamVector> reps;
    reps.reserve(children.size() + 1);
    for (auto c : children) reps.push_back(representative(c));
    const SimilarityStats without = set_similarity(reps);
    reps.push_back(x);
    const SimilarityStats with = set_similarity(reps);

    if (with.mean_pairwise > without.mean_pairwise) {
      if (node_depth + 1 == cfg_.max_depth) {
        attach(node, leaf);
        return node;
      }
      const std::size_t target = select_child(children, x);
      if (is_leaf(target)) {
        const std::size_t group = new_node();
        replace_child(node, target, group);
        attach(group, target);
        attach(group, leaf);
        refresh(group);
      } else {
        const std::size_t replacement = insert_at(target, node_depth + 1, leaf);
        if (replacement != target) replace_child(node, target, replacement);
      }
      return node;
    }

    const bool splits = with.mean_pairwise < without.mean_pairwise - cfg_.xi * without.std_pairwise;
    if (splits && node_depth + 1 + height(node) <= cfg_.max_depth) {
      const std::size_t parent = new_node();
      attach(parent, node);
      attach(parent, leaf);
      return parent;
    }

    attach(node, leaf);
    return node;
  }

  void refresh(std::size_t id) {
    auto& n = nodes_[id];
    if (n.task_id) return;
    std::fill(n.gradient_sum.begin(), n.gradient_sum.end(), 0.0);
    n.members.clear();
    for (auto c : n.children) {
      const auto& child = nodes_[c];
      for (std::size_t i = 0; i < n.gradient_sum.size(); ++i) n.gradient_sum[i] += child.gradient_sum[i];
      n.members.insert(n.members.end(), child.members.begin(), child.members.end());
    }
  }

  void refresh_ancestors(std::size_t leaf) {
    for (auto p = nodes_[leaf].parent; p; p = nodes_[*p].parent) refresh(*p);
  }

  void collect(std::size_t id, std::size_t d, std::size_t k, Clusters& out) const {
    const auto& n = nodes_[id];
    if (d == k || n.task_id) {
      out.push_back(n.members);
      return;
    }
    for (auto c : n.children) collect(c, d + 1, k, out);
  }

  nlohmann::json node_json(std::size_t id, std::size_t d) const {
    const auto& n = nodes_[id];
    nlohmann::json children = nlohmann::json::array();
    for (auto c : n.children) children.push_back(node_json(c, d + 1));
    nlohmann::json j{{"node_id", n.id}, {"depth", d}, {"children", children}, {"member_tasks", n.members}};
    if (n.task_id) j["task_id"] = *n.task_id;
    return j;
  }

  ClusterConfig cfg_;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
  std::optional<std::size_t> dim_;
  std::set<std::size_t> task_ids_;
};

inline void otd_insert(ClusterTree& tree, std::size_t task_id, const ParamVector& gradient) {
  tree.insert(task_id, gradient);
}

/// Sequential insertion in the given order, starting from an empty root.
inline ClusterTree build_tree(std::span<const std::pair<std::size_t, ParamVector>> gradients,
                              const ClusterConfig& cfg) {
  if (gradients.empty()) throw EmptyClusterError("build_tree needs at least one gradient");
  ClusterTree tree(cfg);
  for (const auto& [task_id, g] : gradients) tree.insert(task_id, g);
  return tree;
}

}  // namespace treemaml
