#pragma once

/**
 * @file meta.hpp
 * @brief MAML and TreeMAML: cluster-pooled inner loop, exact second-order
 * outer gradient, meta-training and test-time adaptation.
 *
 * The inner loop runs K steps. At step k every task belongs to a cluster and
 * each cluster c takes one gradient step from its parent cluster's step k-1
 * parameters, using the mean of its members' training gradients:
 *
 *   theta[c, k] = theta[parent(c), k-1] - alpha * mean_{i in c} grad L_i(theta[parent(c), k-1])
 *
 * theta[root, 0] = omega. MAML is the special case where every task is its
 * own cluster at every step.
 */

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treemaml/clustering.hpp"
#include "treemaml/errors.hpp"
#include "treemaml/models.hpp"
#include "treemaml/numerics.hpp"
#include "treemaml/random.hpp"
#include "treemaml/tasks.hpp"

namespace treemaml {

enum class Mode { baseline, maml, tree_fixed, tree_learned };

inline std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::baseline: return "baseline";
    case Mode::maml: return "maml";
    case Mode::tree_fixed: return "tree_fixed";
    case Mode::tree_learned: return "tree_learned";
  }
  return "unknown";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::baseline;
  if (s == "maml") return Mode::maml;
  if (s == "tree_fixed" || s == "fixed") return Mode::tree_fixed;
  if (s == "tree_learned" || s == "learned") return Mode::tree_learned;
  throw ConfigError("unknown mode: " + s);
}

inline bool is_tree_mode(Mode mode) { return mode == Mode::tree_fixed || mode == Mode::tree_learned; }

/// Known hierarchy: at step k <= depth, tasks sharing the first k path entries pool gradients.
struct FixedTreeSpec {
  std::size_t depth = 2;
};

struct MetaConfig {
  double inner_lr = 0.007;
  double outer_lr = 0.002;
  std::size_t inner_steps = 3;
  std::size_t tasks_per_batch = 128;
  std::size_t points_train = 5;
  std::size_t points_val = 5;
  Mode mode = Mode::maml;
  std::optional<FixedTreeSpec> fixed_tree = FixedTreeSpec{};
  std::optional<ClusterConfig> cluster = ClusterConfig{};
  bool second_order = true;
  std::size_t outer_iterations = 300;
  std::uint64_t seed = 1;
  double init_std = 0.01;
  // Give the baseline the same K test-time fine-tuning steps as MAML.
  bool baseline_finetune = false;

  void validate() const {
    if (!(inner_lr >= 0.0) || !(outer_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (inner_steps == 0) throw ConfigError("inner_steps must be positive");
    if (tasks_per_batch == 0) throw ConfigError("tasks_per_batch must be positive");
    if (points_train == 0 || points_val == 0) throw ConfigError("point counts must be positive");
    if (mode == Mode::tree_fixed) {
      if (!fixed_tree) throw ConfigError("tree_fixed mode needs a fixed tree");
      if (inner_steps != fixed_tree->depth + 1) {
        throw ConfigError("tree_fixed needs inner_steps = tree depth + 1");
      }
    }
    if (mode == Mode::tree_learned) {
      if (!cluster) throw ConfigError("tree_learned mode needs a cluster config");
      cluster->validate();
      if (inner_steps != cluster->max_depth + 1) {
        throw ConfigError("tree_learned needs inner_steps = max_depth + 1");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const MetaConfig& c) {
  j = nlohmann::json{{"inner_lr", c.inner_lr},
                     {"outer_lr", c.outer_lr},
                     {"inner_steps", c.inner_steps},
                     {"tasks_per_batch", c.tasks_per_batch},
                     {"points_train", c.points_train},
                     {"points_val", c.points_val},
                     {"mode", to_string(c.mode)},
                     {"second_order", c.second_order},
                     {"outer_iterations", c.outer_iterations},
                     {"seed", c.seed},
                     {"init_std", c.init_std},
                     {"baseline_finetune", c.baseline_finetune}};
  if (c.fixed_tree) j["fixed_tree"] = {{"depth", c.fixed_tree->depth}};
  if (c.cluster) j["cluster"] = *c.cluster;
}

inline void from_json(const nlohmann::json& j, MetaConfig& c) {
  c = MetaConfig{};
  if (j.contains("inner_lr")) j.at("inner_lr").get_to(c.inner_lr);
  if (j.contains("outer_lr")) j.at("outer_lr").get_to(c.outer_lr);
  if (j.contains("inner_steps")) j.at("inner_steps").get_to(c.inner_steps);
  if (j.contains("tasks_per_batch")) j.at("tasks_per_batch").get_to(c.tasks_per_batch);
  if (j.contains("points_train")) j.at("points_train").get_to(c.points_train);
  if (j.contains("points_val")) j.at("points_val").get_to(c.points_val);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("second_order")) j.at("second_order").get_to(c.second_order);
  if (j.contains("outer_iterations")) j.at("outer_iterations").get_to(c.outer_iterations);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("init_std")) j.at("init_std").get_to(c.init_std);
  if (j.contains("baseline_finetune")) j.at("baseline_finetune").get_to(c.baseline_finetune);
  if (j.contains("fixed_tree")) {
    if (j.at("fixed_tree").is_null()) {
      c.fixed_tree.reset();
    } else {
      c.fixed_tree = FixedTreeSpec{j.at("fixed_tree").at("depth").get<std::size_t>()};
    }
  }
  if (j.contains("cluster")) {
    if (j.at("cluster").is_null()) {
      c.cluster.reset();
    } else {
      c.cluster = j.at("cluster").get<ClusterConfig>();
    }
  }
}

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return out;
}

/// Cluster label per task position; labels are dense and numbered by first appearance.
struct Partition {
  std::vector<std::size_t> cluster_of;
  std::size_t num_clusters = 0;

  static Partition from_labels(std::span<const std::size_t> labels) {
    Partition p;
    std::map<std::size_t, std::size_t> relabel;
    p.cluster_of.reserve(labels.size());
    for (auto l : labels) {
      auto [it, inserted] = relabel.try_emplace(l, relabel.size());
      p.cluster_of.push_back(it->second);
    }
    p.num_clusters = relabel.size();
    return p;
  }

  static Partition from_clusters(const Clusters& groups, std::size_t n) {
    std::vector<std::size_t> labels(n, n);
    for (std::size_t c = 0; c < groups.size(); ++c) {
      for (auto i : groups[c]) {
        if (i >= n || labels[i] != n) throw TreeShapeError("clusters do not partition the tasks");
        labels[i] = c;
      }
    }
    for (auto l : labels) {
      if (l == n) throw TreeShapeError("clusters do not cover every task");
    }
    return from_labels(labels);
  }

  static Partition singletons(std::size_t n) {
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i;
    return from_labels(labels);
  }

  static Partition whole(std::size_t n) { return from_labels(std::vector<std::size_t>(n, 0)); }

  std::size_t size() const noexcept { return cluster_of.size(); }

  Clusters groups() const {
    Clusters out(num_clusters);
    for (std::size_t i = 0; i < cluster_of.size(); ++i) out[cluster_of[i]].push_back(i);
    return out;
  }
};

struct GradientRecord {
  std::size_t task_id;
  std::size_t step;
  ParamVector gradient;
};

struct AdaptationTrace {
  // partitions[k - 1] is the grouping used at step k.
  std::vector<Partition> partitions;
  // cluster_params[k][c]; cluster_params[0] = {omega}.
  std::vector<std::vector<ParamVector>> cluster_params;
  // parents[k - 1][c] is the step k-1 cluster that cluster c of step k refines.
  std::vector<std::vector<std::size_t>> parents;
  std::vector<ParamVector> task_params;
  std::vector<GradientRecord> gradients;
  // OTD trees built at each step in tree_learned mode, one per parent cluster.
  std::vector<std::vector<ClusterTree>> learned_trees;

  std::size_t steps() const noexcept { return partitions.size(); }

  std::vector<std::size_t> cluster_counts() const {
    std::vector<std::size_t> out;
    for (const auto& p : partitions) out.push_back(p.num_clusters);
    return out;
  }
};

/// params - alpha * (mean of the given gradients), summed in the given order.
inline ParamVector pooled_step(const ParamVector& params, std::span<const ParamVector* const> grads,
                               double alpha) {
  if (grads.empty()) throw EmptyClusterError("cluster step with no member tasks");
  ParamVector g = *grads.front();
  for (auto* other : grads.subspan(1)) g += *other;
  if (grads.size() > 1) g *= 1.0 / static_cast<double>(grads.size());
  return params - alpha * g;
}

template <DifferentiableModel M>
ParamVector inner_step_task(const M& model, const ParamVector& params, Batch train, double alpha) {
  return params - alpha * model.gradient(params, train);
}

/// One step with the across-member mean of per-task mean gradients.
template <DifferentiableModel M>
ParamVector inner_step_cluster(const M& model, const ParamVector& params,
                               std::span<const Batch> member_batches, double alpha) {
  if (member_batches.empty()) throw EmptyClusterError("cluster step with no member tasks");
  std::vector<ParamVector> grads;
  grads.reserve(member_batches.size());
  for (auto b : member_batches) grads.push_back(model.gradient(params, b));
  std::vector<const ParamVector*> ptrs;
  for (const auto& g : grads) ptrs.push_back(&g);
  return pooled_step(params, ptrs, alpha);
}

/**
 * @brief Runs the cluster-pooled inner loop.
 *
 * @p regroup receives (step, previous partition, per-task gradients, trace)
 * and returns the step partition, which must refine the previous one.
 */
template <DifferentiableModel M, typename Regroup>
AdaptationTrace run_inner_loop(const M& model, const ParamVector& omega,
                               std::span<const TaskInstance> tasks, std::size_t steps, double alpha,
                               Regroup&& regroup) {
  const std::size_t m = tasks.size();
  if (m == 0) throw EmptyBatchError("adaptation needs at least one task");
  AdaptationTrace trace;
  trace.cluster_params.push_back({omega});
  Partition previous = Partition::whole(m);

  for (std::size_t k = 1; k <= steps; ++k) {
    const auto& prev_params = trace.cluster_params.back();
    std::vector<ParamVector> grads;
    grads.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      grads.push_back(model.gradient(prev_params[previous.cluster_of[i]], tasks[i].train_points));
    }

    Partition current = regroup(k, previous, std::span<const ParamVector>(grads), trace);
    if (current.size() != m) throw TreeShapeError("partition size differs from the task count");

    std::vector<std::size_t> parent(current.num_clusters, previous.num_clusters);
    for (std::size_t i = 0; i < m; ++i) {
      auto& p = parent[current.cluster_of[i]];
      if (p == previous.num_clusters) {
        p = previous.cluster_of[i];
      } else if (p != previous.cluster_of[i]) {
        throw TreeShapeError("step " + std::to_string(k) + " partition does not refine step " +
                             std::to_string(k - 1));
      }
    }

    std::vector<ParamVector> next;
    next.reserve(current.num_clusters);
    for (const auto& members : current.groups()) {
      std::vector<const ParamVector*> member_grads;
      for (auto i : members) member_grads.push_back(&grads[i]);
      next.push_back(pooled_step(prev_params[previous.cluster_of[members.front()]], member_grads, alpha));
    }

    for (std::size_t i = 0; i < m; ++i) trace.gradients.push_back({tasks[i].task_id, k, std::move(grads[i])});
    trace.partitions.push_back(current);
    trace.parents.push_back(std::move(parent));
    trace.cluster_params.push_back(std::move(next));
    previous = std::move(current);
  }

  trace.task_params.reserve(m);
  for (std::size_t i = 0; i < m; ++i) trace.task_params.push_back(trace.cluster_params.back()[previous.cluster_of[i]]);
  return trace;
}

/// Inner loop driven by a precomputed partition per step.
template <DifferentiableModel M>
AdaptationTrace adapt_with_schedule(const M& model, const ParamVector& omega,
                                    std::span<const TaskInstance> tasks,
                                    std::span<const Partition> schedule, double alpha) {
  return run_inner_loop(model, omega, tasks, schedule.size(), alpha,
                        [&](std::size_t k, const Partition&, std::span<const ParamVector>,
                            AdaptationTrace&) { return schedule[k - 1]; });
}

/// Step k groups tasks by the first k path entries up to @p depth, singletons afterwards.
inline std::vector<Partition> fixed_schedule(std::span<const TaskInstance> tasks, std::size_t depth,
                                             std::size_t steps) {
  std::vector<Partition> out;
  for (std::size_t k = 1; k <= steps; ++k) {
    if (k > depth) {
      out.push_back(Partition::singletons(tasks.size()));
      continue;
    }
    std::map<std::vector<std::size_t>, std::size_t> keys;
    std::vector<std::size_t> labels;
    for (const auto& t : tasks) {
      if (t.params.path.size() < k) throw TreeShapeError("task path shorter than the fixed tree depth");
      std::vector<std::size_t> prefix(t.params.path.begin(), t.params.path.begin() + static_cast<std::ptrdiff_t>(k));
      labels.push_back(keys.try_emplace(std::move(prefix), keys.size()).first->second);
    }
    out.push_back(Partition::from_labels(labels));
  }
  return out;
}

/**
 * @brief Learned regrouping: inside each previous cluster, an OTD tree is built
 * from the members' current gradients (in task order) and its first level
 * becomes the new split. The last step is task-specific.
 */
inline Partition learned_regroup(std::size_t step, std::size_t steps, const Partition& previous,
                                 std::span<const ParamVector> grads, const ClusterConfig& cfg,
                                 std::vector<ClusterTree>* trees_out) {
  const std::size_t m = previous.size();
  if (step == steps) return Partition::singletons(m);
  std::vector<std::size_t> labels(m);
  std::size_t next_label = 0;
  for (const auto& members : previous.groups()) {
    if (members.size() == 1) {
      labels[members.front()] = next_label++;
      continue;
    }
    std::vector<std::pair<std::size_t, ParamVector>> input;
    input.reserve(members.size());
    for (auto i : members) input.emplace_back(i, grads[i]);
    ClusterTree tree = build_tree(input, cfg);
    for (const auto& cluster : tree.clusters_at_level(1)) {
      for (auto i : cluster) labels[i] = next_label;
      ++next_label;
    }
    if (trees_out) trees_out->push_back(std::move(tree));
  }
  return Partition::from_labels(labels);
}

/// Inner loop for the configured mode. Baseline adapts like MAML here.
template <DifferentiableModel M>
AdaptationTrace adapt_tree(const M& model, const ParamVector& omega, std::span<const TaskInstance> tasks,
                           const MetaConfig& cfg) {
  const std::size_t K = cfg.inner_steps;
  const double alpha = cfg.inner_lr;
  switch (cfg.mode) {
    case Mode::tree_fixed: {
      if (!cfg.fixed_tree) throw ConfigError("tree_fixed mode needs a fixed tree");
      auto schedule = fixed_schedule(tasks, cfg.fixed_tree->depth, K);
      return adapt_with_schedule(model, omega, tasks, schedule, alpha);
    }
    case Mode::tree_learned: {
      if (!cfg.cluster) throw ConfigError("tree_learned mode needs a cluster config");
      const ClusterConfig cc = *cfg.cluster;
      return run_inner_loop(model, omega, tasks, K, alpha,
                            [&](std::size_t k, const Partition& prev, std::span<const ParamVector> g,
                                AdaptationTrace& trace) {
                              trace.learned_trees.emplace_back();
                              return learned_regroup(k, K, prev, g, cc, &trace.learned_trees.back());
                            });
    }
    case Mode::maml:
    case Mode::baseline:
      break;
  }
  return run_inner_loop(model, omega, tasks, K, alpha,
                        [](std::size_t, const Partition& prev, std::span<const ParamVector>,
                           AdaptationTrace&) { return Partition::singletons(prev.size()); });
}

/// (1 / m) sum_i L_i(theta_i; validation points)
template <DifferentiableModel M>
double meta_loss(const M& model, const AdaptationTrace& trace, std::span<const TaskInstance> tasks) {
  double acc = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) acc += model.loss(trace.task_params[i], tasks[i].val_points);
  return acc / static_cast<double>(tasks.size());
}

/**
 * @brief Gradient of the meta-loss with respect to omega.
 *
 * Second order: adjoints flow from each final cluster back to the root through
 * the cluster tree; a cluster step contributes the Jacobian
 * I - alpha * mean_{i in c} H_i, applied as Hessian-vector products at the
 * parent's parameters. First order: mean of the validation gradients at the
 * adapted parameters.
 */
template <DifferentiableModel M>
ParamVector meta_gradient(const M& model, const AdaptationTrace& trace, std::span<const TaskInstance> tasks,
                          double alpha, bool second_order) {
  const std::size_t m = tasks.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  const std::size_t K = trace.steps();

  std::vector<ParamVector> val_grads;
  val_grads.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    val_grads.push_back(model.gradient(trace.task_params[i], tasks[i].val_points) * inv_m);
  }

  if (!second_order || K == 0) {
    ParamVector total = val_grads.front();
    for (std::size_t i = 1; i < m; ++i) total += val_grads[i];
    return total;
  }

  if constexpr (!SecondOrderModel<M>) {
    throw CapabilityError("second-order meta-gradient requires Hessian-vector products");
  } else {
    const std::size_t dim = val_grads.front().dim();
    std::vector<ParamVector> adjoint(trace.partitions[K - 1].num_clusters, ParamVector::zeros(dim));
    for (std::size_t i = 0; i < m; ++i) adjoint[trace.partitions[K - 1].cluster_of[i]] += val_grads[i];

    for (std::size_t k = K; k >= 1; --k) {
      const auto& part = trace.partitions[k - 1];
      const auto& parents = trace.parents[k - 1];
      const auto& parent_params = trace.cluster_params[k - 1];
      std::vector<ParamVector> upstream(parent_params.size(), ParamVector::zeros(dim));
      const auto groups = part.groups();
      for (std::size_t c = 0; c < groups.size(); ++c) {
        const ParamVector& at = parent_params[parents[c]];
        ParamVector hv = ParamVector::zeros(dim);
        for (auto i : groups[c]) hv += model.hessian_vector_product(at, tasks[i].train_points, adjoint[c]);
        if (groups[c].size() > 1) hv *= 1.0 / static_cast<double>(groups[c].size());
        upstream[parents[c]] += adjoint[c];
        upstream[parents[c]].axpy(-alpha, hv);
      }
      adjoint = std::move(upstream);
    }
    return adjoint.front();
  }
}

template <DifferentiableModel M>
ParamVector outer_update(const M& model, const ParamVector& omega, const AdaptationTrace& trace,
                         std::span<const TaskInstance> tasks, const MetaConfig& cfg) {
  return omega - cfg.outer_lr * meta_gradient(model, trace, tasks, cfg.inner_lr, cfg.second_order);
}

/// Every training and validation point of the batch, for the pooled baseline.
inline std::vector<Sample> pooled_points(std::span<const TaskInstance> tasks) {
  std::vector<Sample> out;
  for (const auto& t : tasks) {
    out.insert(out.end(), t.train_points.begin(), t.train_points.end());
    out.insert(out.end(), t.val_points.begin(), t.val_points.end());
  }
  return out;
}

struct IterationLog {
  std::size_t iteration = 0;
  double meta_loss = 0.0;
  double wall_ms = 0.0;
  std::vector<std::size_t> partitions;
};

inline void to_json(nlohmann::json& j, const IterationLog& l) {
  j = nlohmann::json{{"iter", l.iteration}, {"meta_loss", l.meta_loss}, {"wall_ms", l.wall_ms},
                     {"partitions", l.partitions}};
}

struct TrainResult {
  ParamVector omega;
  std::vector<IterationLog> log;
};

inline constexpr double kDivergenceThreshold = 1e6;

inline ParamVector initial_omega(std::size_t dim, const MetaConfig& cfg) {
  Rng rng = make_rng(cfg.seed, Stream::init);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = cfg.init_std * normal(rng);
  return ParamVector(std::move(v));
}

/**
 * @brief Outer loop: sample m tasks, adapt, update omega; repeated
 * outer_iterations times. Baseline mode skips adaptation and descends the
 * pooled loss over all sampled points.
 */
template <DifferentiableModel M>
TrainResult meta_train(const M& model, TaskDistribution& source, const MetaConfig& cfg,
                       const std::function<void(const IterationLog&)>& on_iteration = {}) {
  cfg.validate();
  if (source.config().dim != model.dim()) throw ConfigError("task and model dimensions differ");
  Rng rng = make_rng(cfg.seed, Stream::train_tasks);
  TrainResult result{initial_omega(model.dim(), cfg), {}};
  const SplitSizes sizes{cfg.points_train, cfg.points_val, 0};

  for (std::size_t it = 0; it < cfg.outer_iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    const auto tasks = source.sample_batch(sizes, static_cast<int>(cfg.tasks_per_batch), rng);
    IterationLog entry;
    entry.iteration = it + 1;
    try {
      ParamVector direction = ParamVector::zeros(model.dim());
      if (cfg.mode == Mode::baseline) {
        const auto pooled = pooled_points(tasks);
        entry.meta_loss = model.loss(result.omega, pooled);
        direction = model.gradient(result.omega, pooled);
      } else {
        const auto trace = adapt_tree(model, result.omega, tasks, cfg);
        entry.meta_loss = meta_loss(model, trace, tasks);
        entry.partitions = trace.cluster_counts();
        direction = meta_gradient(model, trace, tasks, cfg.inner_lr, cfg.second_order);
      }
      if (!std::isfinite(entry.meta_loss) || entry.meta_loss > kDivergenceThreshold) {
        throw DivergenceError(entry.iteration, "meta-loss " + std::to_string(entry.meta_loss));
      }
      result.omega.axpy(-cfg.outer_lr, direction);
    } catch (const NumericalError& e) {
      throw DivergenceError(entry.iteration, e.what());
    }
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_iteration) on_iteration(entry);
    result.log.push_back(std::move(entry));
  }
  return result;
}

struct TargetAdaptation {
  ParamVector params;
  std::optional<AdaptationTrace> trace;
};

/**
 * @brief Adapts omega to a target task.
 *
 * Tree modes place the target after the support tasks (so the learned tree is
 * rebuilt from support gradients and the target inserted last) and run the
 * inner loop over all of them. MAML adapts the target alone; the baseline
 * keeps omega unless baseline_finetune is set.
 */
template <DifferentiableModel M>
TargetAdaptation adapt_target(const M& model, const ParamVector& omega, std::vector<TaskInstance> support,
                              const TaskInstance& target, const MetaConfig& cfg) {
  if (target.train_points.empty()) throw EmptyBatchError("target task has no adaptation points");
  if (is_tree_mode(cfg.mode)) {
    support.push_back(target);
    auto trace = adapt_tree(model, omega, support, cfg);
    ParamVector params = trace.task_params.back();
    return {std::move(params), std::move(trace)};
  }
  if (cfg.mode == Mode::baseline && !cfg.baseline_finetune) return {omega, std::nullopt};
  MetaConfig single = cfg;
  single.mode = Mode::maml;
  auto trace = adapt_tree(model, omega, std::span<const TaskInstance>(&target, 1), single);
  ParamVector params = trace.task_params.back();
  return {std::move(params), std::move(trace)};
}

/// Test MSE of the adapted target on its held-out points.
template <DifferentiableModel M>
double adapt_and_evaluate(const M& model, const ParamVector& omega, std::vector<TaskInstance> support,
                          const TaskInstance& target, const MetaConfig& cfg) {
  if (target.test_points.empty()) throw EmptyBatchError("target task has no test points");
  const auto adapted = adapt_target(model, omega, std::move(support), target, cfg);
  return model.loss(adapted.params, target.test_points);
}

struct Checkpoint {
  ParamVector omega;
  std::string config_hash;
  std::size_t iteration = 0;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"dim", c.omega.dim()}, {"values", c.omega.to_vector()}, {"config_hash", c.config_hash},
          {"iteration", c.iteration}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  auto values = j.at("values").get<std::vector<double>>();
  if (values.size() != j.at("dim").get<std::size_t>()) throw ConfigError("checkpoint dim mismatch");
  return {ParamVector(std::move(values)), j.at("config_hash").get<std::string>(),
          j.at("iteration").get<std::size_t>()};
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(c).dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

/// Nested view of the per-step partitions: root, step-1 clusters, ..., tasks.
inline nlohmann::json trace_tree_json(const AdaptationTrace& trace, std::span<const TaskInstance> tasks) {
  const std::size_t K = trace.steps();
  std::size_t next_id = 0;
  std::function<nlohmann::json(std::size_t, std::size_t)> build = [&](std::size_t k, std::size_t c) {
    nlohmann::json members = nlohmann::json::array();
    nlohmann::json children = nlohmann::json::array();
    const std::size_t id = next_id++;
    if (k == 0) {
      for (const auto& t : tasks) members.push_back(t.task_id);
    } else {
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (trace.partitions[k - 1].cluster_of[i] == c) members.push_back(tasks[i].task_id);
      }
    }
    if (k < K) {
      const auto& parents = trace.parents[k];
      for (std::size_t child = 0; child < parents.size(); ++child) {
        if (parents[child] == c) children.push_back(build(k + 1, child));
      }
    }
    return nlohmann::json{{"node_id", id}, {"depth", k}, {"children", children}, {"member_tasks", members}};
  };
  return build(0, 0);
}

inline void export_tree(const AdaptationTrace& trace, std::span<const TaskInstance> tasks,
                        const std::filesystem::path& path) {
  nlohmann::json j{{"partition_tree", trace_tree_json(trace, tasks)},
                   {"cluster_counts", trace.cluster_counts()}};
  if (!trace.learned_trees.empty()) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& step_trees : trace.learned_trees) {
      nlohmann::json trees = nlohmann::json::array();
      for (const auto& t : step_trees) trees.push_back(t.to_json());
      steps.push_back(trees);
    }
    j["otd_trees"] = steps;
  }
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace treemaml
