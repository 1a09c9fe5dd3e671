#pragma once

/**
 * @file experiment.hpp
 * @brief Mode x points x seed grids: train, evaluate on fresh meta-test
 * tasks, and summarize as a table and CSV.
 */

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "treemaml/meta.hpp"
#include "treemaml/models.hpp"
#include "treemaml/numerics.hpp"
#include "treemaml/random.hpp"
#include "treemaml/tasks.hpp"

namespace treemaml {

struct ExperimentSpec {
  TaskGeneratorConfig generator;
  MetaConfig meta;
  std::vector<Mode> modes{Mode::baseline, Mode::maml, Mode::tree_fixed, Mode::tree_learned};
  std::vector<std::size_t> points_sweep{5, 10, 20};
  std::size_t meta_test_tasks = 400;
  std::vector<std::uint64_t> replicate_seeds{1, 2, 3};
  std::size_t test_points = 100;
  // When false, wall_seconds is written as 0 so result files are reproducible byte for byte.
  bool record_wall_time = true;

  void validate() const {
    if (modes.empty()) throw ConfigError("experiment needs at least one mode");
    if (points_sweep.empty()) throw ConfigError("experiment needs at least one point count");
    if (replicate_seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (meta_test_tasks == 0) throw ConfigError("meta_test_tasks must be positive");
    if (test_points == 0) throw ConfigError("test_points must be positive");
    for (auto p : points_sweep) {
      if (p == 0) throw ConfigError("point counts must be positive");
    }
    generator.validate();
  }
};

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  std::vector<std::string> modes;
  for (auto m : s.modes) modes.push_back(to_string(m));
  j = nlohmann::json{{"generator", s.generator},       {"meta", s.meta},
                     {"modes", modes},                 {"points_sweep", s.points_sweep},
                     {"meta_test_tasks", s.meta_test_tasks}, {"replicate_seeds", s.replicate_seeds},
                     {"test_points", s.test_points},   {"record_wall_time", s.record_wall_time}};
}

inline void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  s = ExperimentSpec{};
  if (j.contains("generator")) j.at("generator").get_to(s.generator);
  if (j.contains("meta")) j.at("meta").get_to(s.meta);
  if (j.contains("modes")) {
    s.modes.clear();
    for (const auto& m : j.at("modes")) s.modes.push_back(parse_mode(m.get<std::string>()));
  }
  if (j.contains("points_sweep")) j.at("points_sweep").get_to(s.points_sweep);
  if (j.contains("meta_test_tasks")) j.at("meta_test_tasks").get_to(s.meta_test_tasks);
  if (j.contains("replicate_seeds")) j.at("replicate_seeds").get_to(s.replicate_seeds);
  if (j.contains("test_points")) j.at("test_points").get_to(s.test_points);
  if (j.contains("record_wall_time")) j.at("record_wall_time").get_to(s.record_wall_time);
}

inline ExperimentSpec load_spec(const std::filesystem::path& path) {
  try {
    auto spec = nlohmann::json::parse(read_text_file(path), nullptr, true, true).get<ExperimentSpec>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed spec file " + path.string() + ": " + e.what());
  }
}

struct RunResult {
  Mode mode = Mode::maml;
  std::size_t points_per_task = 0;
  std::uint64_t seed = 0;
  std::vector<double> per_task_mse;
  double mean_mse = 0.0;
  double ci95 = 0.0;
  double wall_seconds = 0.0;
};

struct CellError {
  Mode mode;
  std::size_t points_per_task;
  std::uint64_t seed;
  std::string message;
};

struct ExperimentOutcome {
  std::vector<RunResult> results;
  std::vector<CellError> errors;
};

/// Concrete configuration of one (mode, points, seed) cell.
struct CellConfig {
  TaskGeneratorConfig generator;
  MetaConfig meta;
};

inline CellConfig cell_config(const ExperimentSpec& spec, Mode mode, std::size_t points, std::uint64_t seed) {
  CellConfig c{spec.generator, spec.meta};
  c.generator.seed = seed;
  c.meta.seed = seed;
  c.meta.mode = mode;
  c.meta.points_train = points;
  c.meta.points_val = points;
  return c;
}

/// Hooks for artifacts produced while a cell runs.
struct CellObserver {
  std::function<void(const IterationLog&)> on_iteration;
  std::function<void(const ParamVector& omega, const MetaConfig&)> on_trained;
  // Called with the adaptation of the first meta-test task.
  std::function<void(const TargetAdaptation&, std::span<const TaskInstance>)> on_first_adaptation;
};

/**
 * @brief Trains one cell and evaluates it on fresh meta-test tasks.
 *
 * Meta-test targets and support batches come from seed-keyed streams that do
 * not depend on the mode, so every mode of a seed sees the same tasks.
 */
inline RunResult run_cell(const ExperimentSpec& spec, Mode mode, std::size_t points, std::uint64_t seed,
                          const CellObserver& observer = {}) {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = cell_config(spec, mode, points, seed);
  cfg.meta.validate();
  LinearRegressionModel model(cfg.generator.dim);
  TaskDistribution dist(cfg.generator);

  const auto trained = meta_train(model, dist, cfg.meta, observer.on_iteration);
  if (observer.on_trained) observer.on_trained(trained.omega, cfg.meta);

  Rng target_rng = make_rng(seed, Stream::test_tasks);
  Rng support_rng = make_rng(seed, Stream::support_tasks);
  const SplitSizes target_sizes{points, points, spec.test_points};
  const SplitSizes support_sizes{points, points, 0};

  RunResult r;
  r.mode = mode;
  r.points_per_task = points;
  r.seed = seed;
  r.per_task_mse.reserve(spec.meta_test_tasks);
  for (std::size_t t = 0; t < spec.meta_test_tasks; ++t) {
    std::vector<TaskInstance> support;
    if (is_tree_mode(mode)) {
      support = dist.sample_batch(support_sizes, static_cast<int>(cfg.meta.tasks_per_batch), support_rng);
    }
    const auto target = dist.sample(target_sizes, target_rng);
    if (t == 0 && observer.on_first_adaptation) {
      auto tasks = support;
      tasks.push_back(target);
      const auto adapted = adapt_target(model, trained.omega, std::move(support), target, cfg.meta);
      observer.on_first_adaptation(adapted, tasks);
      r.per_task_mse.push_back(model.loss(adapted.params, target.test_points));
      continue;
    }
    r.per_task_mse.push_back(adapt_and_evaluate(model, trained.omega, std::move(support), target, cfg.meta));
  }
  r.mean_mse = mean(r.per_task_mse);
  r.ci95 = r.per_task_mse.size() > 1 ? confidence_halfwidth_95(r.per_task_mse) : 0.0;
  if (spec.record_wall_time) {
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return r;
}

/**
 * @brief Runs every (mode, points, seed) cell in that nesting order. A cell
 * that fails is recorded in the outcome and the sweep continues.
 */
inline ExperimentOutcome run_experiment(
    const ExperimentSpec& spec,
    const std::function<CellObserver(Mode, std::size_t, std::uint64_t)>& observe = {}) {
  spec.validate();
  ExperimentOutcome out;
  for (auto mode : spec.modes) {
    for (auto points : spec.points_sweep) {
      for (auto seed : spec.replicate_seeds) {
        try {
          out.results.push_back(run_cell(spec, mode, points, seed, observe ? observe(mode, points, seed) : CellObserver{}));
        } catch (const Error& e) {
          out.errors.push_back({mode, points, seed, e.what()});
        }
      }
    }
  }
  return out;
}

namespace detail {

inline std::string format_double(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

}  // namespace detail

inline const char* mode_label(Mode mode) {
  switch (mode) {
    case Mode::baseline: return "Baseline";
    case Mode::maml: return "MAML";
    case Mode::tree_fixed: return "Fixed TreeMAML";
    case Mode::tree_learned: return "Learned TreeMAML";
  }
  return "?";
}

/// Seed-averaged (mean_mse, ci95) per (mode, points).
inline std::map<std::pair<Mode, std::size_t>, std::pair<double, double>> aggregate(
    std::span<const RunResult> results) {
  std::map<std::pair<Mode, std::size_t>, std::vector<const RunResult*>> cells;
  for (const auto& r : results) cells[{r.mode, r.points_per_task}].push_back(&r);
  std::map<std::pair<Mode, std::size_t>, std::pair<double, double>> out;
  for (const auto& [key, runs] : cells) {
    double m = 0.0, ci = 0.0;
    for (auto* r : runs) {
      m += r->mean_mse;
      ci += r->ci95;
    }
    out[key] = {m / static_cast<double>(runs.size()), ci / static_cast<double>(runs.size())};
  }
  return out;
}

/// Aligned "mean +- ci95" table, one row per mode, one column per point count.
inline std::string emit_table(std::span<const RunResult> results) {
  const auto agg = aggregate(results);
  std::vector<Mode> modes;
  std::vector<std::size_t> points;
  for (const auto& r : results) {
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
    if (std::find(points.begin(), points.end(), r.points_per_task) == points.end()) points.push_back(r.points_per_task);
  }
  std::sort(points.begin(), points.end());

  std::ostringstream out;
  out << std::left << std::setw(18) << "Model";
  for (auto p : points) out << " | " << std::setw(20) << ("K=" + std::to_string(p));
  out << "\n" << std::string(18 + points.size() * 23, '-') << "\n";
  for (auto mode : modes) {
    out << std::left << std::setw(18) << mode_label(mode);
    for (auto p : points) {
      std::string cell;
      if (auto it = agg.find({mode, p}); it != agg.end()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f +- %.3f", it->second.first, it->second.second);
        cell = buf;
      }
      out << " | " << std::setw(20) << cell;
    }
    out << "\n";
  }
  return out.str();
}

inline constexpr const char* kCsvHeader = "mode,points,seed,mean_mse,ci95,wall_seconds";

inline std::string to_csv(std::span<const RunResult> results) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& r : results) {
    out << to_string(r.mode) << ',' << r.points_per_task << ',' << r.seed << ','
        << detail::format_double(r.mean_mse) << ',' << detail::format_double(r.ci95) << ','
        << detail::format_double(r.wall_seconds) << "\n";
  }
  return out.str();
}

/// Parses to_csv output; per-task values are not part of the CSV.
inline std::vector<RunResult> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ConfigError("unexpected CSV header");
  std::vector<RunResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(f);
    if (fields.size() != 6) throw ConfigError("malformed CSV row: " + line);
    RunResult r;
    r.mode = parse_mode(fields[0]);
    r.points_per_task = std::stoul(fields[1]);
    r.seed = std::stoull(fields[2]);
    r.mean_mse = std::stod(fields[3]);
    r.ci95 = std::stod(fields[4]);
    r.wall_seconds = std::stod(fields[5]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace treemaml
