#pragma once

/**
 * @file tasks.hpp
 * @brief Synthetic hierarchical linear-regression task distribution.
 *
 * A tree of parameter vectors is grown from a root: every child equals its
 * parent plus a Gaussian offset whose scale depends on the level. The leaves
 * are cluster centers; a task picks a leaf uniformly, jitters its center, and
 * draws points y = <w, x> + noise with x uniform in a box.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treemaml/errors.hpp"
#include "treemaml/numerics.hpp"
#include "treemaml/random.hpp"

namespace treemaml {

struct TaskGeneratorConfig {
  std::size_t dim = 64;
  std::vector<std::size_t> branching{2, 2};
  // One scale for the root plus one per level.
  std::vector<double> level_scales{1.0, 1.0, 0.5};
  double noise_std = 0.01;
  double input_low = -5.0;
  double input_high = 5.0;
  // Per-task jitter std as a fraction of the last level scale.
  double jitter_fraction = 0.1;
  std::uint64_t seed = 42;

  std::size_t depth() const noexcept { return branching.size(); }

  std::size_t num_leaves() const noexcept {
    std::size_t n = 1;
    for (auto b : branching) n *= b;
    return n;
  }

  double jitter_std() const noexcept { return level_scales.back() * jitter_fraction; }

  void validate() const {
    if (dim == 0) throw ConfigError("generator dim must be positive");
    if (level_scales.size() != branching.size() + 1) {
      throw ConfigError("level_scales needs one entry per level plus the root");
    }
    for (auto b : branching) {
      if (b == 0) throw ConfigError("branch counts must be positive");
    }
    for (double s : level_scales) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("level scales must be finite and >= 0");
    }
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
    if (!(jitter_fraction >= 0.0)) throw ConfigError("jitter_fraction must be >= 0");
    if (!(input_low < input_high)) throw ConfigError("input_low must be below input_high");
  }
};

inline void to_json(nlohmann::json& j, const TaskGeneratorConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"branching", c.branching},
                     {"level_scales", c.level_scales},
                     {"noise_std", c.noise_std},
                     {"input_low", c.input_low},
                     {"input_high", c.input_high},
                     {"jitter_fraction", c.jitter_fraction},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TaskGeneratorConfig& c) {
  c = TaskGeneratorConfig{};
  if (j.contains("dim")) j.at("dim").get_to(c.dim);
  if (j.contains("branching")) j.at("branching").get_to(c.branching);
  if (j.contains("level_scales")) j.at("level_scales").get_to(c.level_scales);
  if (j.contains("noise_std")) j.at("noise_std").get_to(c.noise_std);
  if (j.contains("input_low")) j.at("input_low").get_to(c.input_low);
  if (j.contains("input_high")) j.at("input_high").get_to(c.input_high);
  if (j.contains("jitter_fraction")) j.at("jitter_fraction").get_to(c.jitter_fraction);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

struct ParameterNode {
  ParamVector center;
  std::size_t level = 0;          // root = 0
  std::vector<std::size_t> path;  // branch indices from the root
  std::vector<std::size_t> children;
};

/// Level-ordered tree of parameter vectors; leaves are the cluster centers.
class ParameterTree {
 public:
  explicit ParameterTree(std::vector<ParameterNode> nodes) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].children.empty()) leaves_.push_back(i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const ParameterNode& node(std::size_t i) const { return nodes_.at(i); }
  std::size_t num_leaves() const noexcept { return leaves_.size(); }
  const ParameterNode& leaf(std::size_t leaf_id) const { return nodes_.at(leaves_.at(leaf_id)); }
  const ParamVector& leaf_center(std::size_t leaf_id) const { return leaf(leaf_id).center; }

  std::vector<ParamVector> leaf_centers() const {
    std::vector<ParamVector> out;
    out.reserve(leaves_.size());
    for (auto i : leaves_) out.push_back(nodes_[i].center);
    return out;
  }

 private:
  std::vector<ParameterNode> nodes_;
  std::vector<std::size_t> leaves_;
};

namespace detail {

inline ParamVector gaussian_vector(std::size_t dim, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = stddev * normal(rng);
  return ParamVector(std::move(v));
}

}  // namespace detail

/// Grows the center tree breadth-first from the config seed.
inline ParameterTree build_parameter_tree(const TaskGeneratorConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, Stream::centers);
  std::vector<ParameterNode> nodes;
  nodes.push_back({detail::gaussian_vector(cfg.dim, cfg.level_scales[0], rng), 0, {}, {}});
  std::size_t level_begin = 0;
  for (std::size_t level = 1; level <= cfg.depth(); ++level) {
    const std::size_t level_end = nodes.size();
    for (std::size_t parent = level_begin; parent < level_end; ++parent) {
      for (std::size_t b = 0; b < cfg.branching[level - 1]; ++b) {
        auto offset = detail::gaussian_vector(cfg.dim, cfg.level_scales[level], rng);
        auto path = nodes[parent].path;
        path.push_back(b);
        nodes[parent].children.push_back(nodes.size());
        nodes.push_back({nodes[parent].center + offset, level, std::move(path), {}});
      }
    }
    level_begin = level_end;
  }
  return ParameterTree(std::move(nodes));
}

struct Sample {
  ParamVector x;
  double y;
};

struct RegressionTaskParams {
  ParamVector weights;
  std::size_t leaf_cluster_id = 0;
  std::vector<std::size_t> path;
};

struct TaskInstance {
  std::size_t task_id = 0;
  RegressionTaskParams params;
  std::vector<Sample> train_points;
  std::vector<Sample> val_points;
  std::vector<Sample> test_points;
};

/// Data points drawn per split for each task.
struct SplitSizes {
  std::size_t train = 5;
  std::size_t val = 5;
  std::size_t test = 0;
};

inline std::vector<Sample> sample_points(const ParamVector& weights, std::size_t count,
                                         const TaskGeneratorConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> uniform(cfg.input_low, cfg.input_high);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> x(cfg.dim);
    for (auto& xi : x) xi = uniform(rng);
    ParamVector xv(std::move(x));
    double y = dot(weights, xv);
    if (cfg.noise_std > 0.0) y += cfg.noise_std * normal(rng);
    out.push_back({std::move(xv), y});
  }
  return out;
}

inline TaskInstance sample_task(const ParameterTree& tree, const TaskGeneratorConfig& cfg,
                                const SplitSizes& sizes, Rng& rng, std::size_t task_id) {
  std::uniform_int_distribution<std::size_t> pick(0, tree.num_leaves() - 1);
  const std::size_t leaf_id = pick(rng);
  const auto& leaf = tree.leaf(leaf_id);
  ParamVector weights = leaf.center;
  if (cfg.jitter_std() > 0.0) weights += detail::gaussian_vector(cfg.dim, cfg.jitter_std(), rng);

  TaskInstance task{task_id, {weights, leaf_id, leaf.path}, {}, {}, {}};
  task.train_points = sample_points(weights, sizes.train, cfg, rng);
  task.val_points = sample_points(weights, sizes.val, cfg, rng);
  task.test_points = sample_points(weights, sizes.test, cfg, rng);
  return task;
}

inline std::vector<TaskInstance> sample_task_batch(const ParameterTree& tree,
                                                   const TaskGeneratorConfig& cfg,
                                                   const SplitSizes& sizes, int m, Rng& rng,
                                                   std::size_t first_task_id = 0) {
  if (m <= 0) throw ConfigError("task batch size must be positive, got " + std::to_string(m));
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    out.push_back(sample_task(tree, cfg, sizes, rng, first_task_id + static_cast<std::size_t>(i)));
  }
  return out;
}

/// A generator config with its center tree and a running task-id counter.
class TaskDistribution {
 public:
  explicit TaskDistribution(TaskGeneratorConfig cfg)
      : cfg_(std::move(cfg)), tree_(build_parameter_tree(cfg_)) {}

  TaskDistribution(TaskGeneratorConfig cfg, ParameterTree tree)
      : cfg_(std::move(cfg)), tree_(std::move(tree)) {}

  const TaskGeneratorConfig& config() const noexcept { return cfg_; }
  const ParameterTree& tree() const noexcept { return tree_; }

  TaskInstance sample(const SplitSizes& sizes, Rng& rng) {
    return sample_task(tree_, cfg_, sizes, rng, next_id_++);
  }

  std::vector<TaskInstance> sample_batch(const SplitSizes& sizes, int m, Rng& rng) {
    auto batch = sample_task_batch(tree_, cfg_, sizes, m, rng, next_id_);
    next_id_ += batch.size();
    return batch;
  }

 private:
  TaskGeneratorConfig cfg_;
  ParameterTree tree_;
  std::size_t next_id_ = 0;
};

/// {"config": {...}, "centers": [[...], ...]} with leaf centers in leaf order.
inline nlohmann::json distribution_to_json(const TaskDistribution& dist) {
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& c : dist.tree().leaf_centers()) centers.push_back(c.to_vector());
  return {{"config", dist.config()}, {"centers", centers}};
}

/// Rebuilds the tree from the stored config and checks it against the stored centers.
inline TaskDistribution distribution_from_json(const nlohmann::json& j) {
  auto cfg = j.at("config").get<TaskGeneratorConfig>();
  TaskDistribution dist(cfg);
  const auto& centers = j.at("centers");
  if (centers.size() != dist.tree().num_leaves()) {
    throw ConfigError("center count does not match the generator config");
  }
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (centers[i].get<std::vector<double>>() != dist.tree().leaf_center(i).to_vector()) {
      throw ConfigError("stored center " + std::to_string(i) + " does not match the seed");
    }
  }
  return dist;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void export_distribution(const TaskDistribution& dist, const std::filesystem::path& path) {
  write_text_file(path, distribution_to_json(dist).dump(2) + "\n");
}

inline TaskDistribution import_distribution(const std::filesystem::path& path) {
  try {
    return distribution_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed distribution file " + path.string() + ": " + e.what());
  }
}

}  // namespace treemaml
