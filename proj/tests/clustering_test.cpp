#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "test_support.hpp"
#include "treemaml/clustering.hpp"

using namespace treemaml;

namespace {

std::size_t leaf_depth(const ClusterTree& tree, std::size_t task) {
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    const auto& n = tree.node(id);
    if (n.task_id == task) return tree.depth(id);
  }
  ADD_FAILURE() << "task " << task << " not found";
  return 0;
}

void expect_partition(const Clusters& clusters, std::size_t n) {
  std::vector<std::size_t> all;
  for (const auto& c : clusters) {
    EXPECT_FALSE(c.empty());
    all.insert(all.end(), c.begin(), c.end());
  }
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), n);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
}

void expect_refines(const Clusters& fine, const Clusters& coarse) {
  for (const auto& f : fine) {
    const auto owner = std::find_if(coarse.begin(), coarse.end(), [&](const auto& c) {
      return std::find(c.begin(), c.end(), f.front()) != c.end();
    });
    ASSERT_NE(owner, coarse.end());
    for (auto t : f) EXPECT_NE(std::find(owner->begin(), owner->end(), t), owner->end());
  }
}

}  // namespace

TEST(Otd, FirstTwoPointsBecomeChildren) {
  ClusterTree tree(ClusterConfig{});
  tree.insert(0, ParamVector{1, 0});
  tree.insert(1, ParamVector{-1, 0});
  EXPECT_EQ(tree.node(tree.root()).children.size(), 2u);
  EXPECT_EQ(tree.max_leaf_depth(), 1u);
}

TEST(Otd, NearDuplicateJoinsMostSimilarChild) {
  // A = {e1, e2}: mean similarity 0; adding v at 5 degrees off e1 raises it.
  const double a = 5.0 * std::numbers::pi / 180.0;
  const ParamVector v{std::cos(a), std::sin(a)};
  const std::vector<ParamVector> without{{1, 0}, {0, 1}};
  const std::vector<ParamVector> with{{1, 0}, {0, 1}, v};
  EXPECT_NEAR(set_similarity(without).mean_pairwise, 0.0, 1e-15);
  EXPECT_NEAR(set_similarity(with).mean_pairwise, 0.3611168136131346, 1e-15);

  ClusterTree tree(ClusterConfig{});
  tree.insert(0, ParamVector{1, 0});
  tree.insert(1, ParamVector{0, 1});
  tree.insert(2, v);
  EXPECT_EQ(leaf_depth(tree, 0), 2u);
  EXPECT_EQ(leaf_depth(tree, 2), 2u);
  EXPECT_EQ(leaf_depth(tree, 1), 1u);
  EXPECT_EQ(tree.clusters_at_level(1), (Clusters{{0, 2}, {1}}));
}

TEST(Otd, TwoOrthogonalPairs) {
  ClusterTree tree(ClusterConfig{2, 1.0});
  tree.insert(0, ParamVector{1, 0.1});
  tree.insert(1, ParamVector{0.1, 1});
  tree.insert(2, ParamVector{1, -0.1});
  tree.insert(3, ParamVector{-0.1, 1});
  EXPECT_EQ(tree.clusters_at_level(0).size(), 1u);
  EXPECT_EQ(tree.clusters_at_level(1), (Clusters{{0, 2}, {1, 3}}));
  EXPECT_EQ(tree.clusters_at_level(2).size(), 4u);
}

TEST(Otd, DepthOneBoundKeepsEverythingFlat) {
  ClusterTree tree(ClusterConfig{1, 1.0});
  tree.insert(0, ParamVector{1, 0.1});
  tree.insert(1, ParamVector{0.1, 1});
  tree.insert(2, ParamVector{1, -0.1});
  EXPECT_EQ(tree.max_leaf_depth(), 1u);
  EXPECT_EQ(tree.clusters_at_level(1).size(), 3u);
}

TEST(Otd, RepresentativeIsLeafMean) {
  ClusterTree tree(ClusterConfig{});
  tree.insert(0, ParamVector{1, 0.1});
  tree.insert(1, ParamVector{0.1, 1});
  tree.insert(2, ParamVector{1, -0.1});
  for (std::size_t id = 0; id < tree.num_nodes(); ++id) {
    const auto& n = tree.node(id);
    if (!n.task_id && n.members == std::vector<std::size_t>{0, 2}) {
      EXPECT_EQ(tree.representative(id), (ParamVector{1, 0}));
      return;
    }
  }
  FAIL() << "group {0, 2} not found";
}

TEST(Otd, Errors) {
  ClusterTree tree(ClusterConfig{});
  tree.insert(0, ParamVector{1, 2});
  EXPECT_THROW(tree.insert(0, ParamVector{1, 3}), DuplicateTaskError);
  EXPECT_THROW(tree.insert(1, ParamVector{0, 0}), ZeroVectorError);
  EXPECT_THROW(tree.insert(1, ParamVector{1, 2, 3}), DimensionMismatchError);
  EXPECT_EQ(tree.num_leaves(), 1u);
  EXPECT_THROW(ClusterTree(ClusterConfig{0, 1.0}), ConfigError);
  EXPECT_THROW(build_tree({}, ClusterConfig{}), EmptyClusterError);
}

TEST(Otd, ConfigJson) {
  const auto cfg = nlohmann::json{{"max_depth", 3}, {"xi", 0.5}, {"selection", "argmin"}}.get<ClusterConfig>();
  EXPECT_EQ(cfg.max_depth, 3u);
  EXPECT_EQ(cfg.selection, ChildSelection::least_similar);
  EXPECT_THROW((nlohmann::json{{"similarity", "euclidean"}}.get<ClusterConfig>()), ConfigError);
  EXPECT_THROW((nlohmann::json{{"selection", "random"}}.get<ClusterConfig>()), ConfigError);
}

TEST(Otd, StructuralPropertiesOnRandomSequences) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> n_dist(1, 30), d_dist(1, 4), dim_dist(2, 6);
  std::uniform_real_distribution<double> xi_dist(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    ClusterConfig cfg{d_dist(rng), xi_dist(rng), trial % 5 == 0 ? ChildSelection::least_similar
                                                                : ChildSelection::most_similar};
    const std::size_t n = n_dist(rng), dim = dim_dist(rng);
    std::vector<std::pair<std::size_t, ParamVector>> input;
    for (std::size_t i = 0; i < n; ++i) input.emplace_back(i, fixtures::random_vector(dim, rng));
    const auto tree = build_tree(input, cfg);
    EXPECT_LE(tree.max_leaf_depth(), cfg.max_depth);
    EXPECT_EQ(tree.num_leaves(), n);
    Clusters previous = tree.clusters_at_level(0);
    expect_partition(previous, n);
    for (std::size_t k = 1; k <= cfg.max_depth + 1; ++k) {
      const auto level = tree.clusters_at_level(k);
      expect_partition(level, n);
      expect_refines(level, previous);
      previous = level;
    }
    EXPECT_EQ(previous.size(), n);
    // fixed order gives the same tree
    EXPECT_EQ(build_tree(input, cfg).to_json(), tree.to_json());
  }
}

TEST(Otd, JsonShape) {
  ClusterTree tree(ClusterConfig{});
  tree.insert(7, ParamVector{1, 0});
  tree.insert(9, ParamVector{0, 1});
  const auto j = tree.to_json();
  EXPECT_EQ(j["depth"], 0);
  EXPECT_EQ(j["member_tasks"], (nlohmann::json{7, 9}));
  ASSERT_EQ(j["children"].size(), 2u);
  EXPECT_EQ(j["children"][0]["task_id"], 7);
  EXPECT_EQ(j["children"][1]["depth"], 1);
}
