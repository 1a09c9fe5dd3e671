// Command-line front end: run experiment grids, export task distributions.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "treemaml/treemaml.hpp"

namespace fs = std::filesystem;
using namespace treemaml;

namespace {

template <typename T>
std::vector<T> split_list(const std::string& text) {
  std::vector<T> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    std::istringstream conv(item);
    T value{};
    if (!(conv >> value)) throw ConfigError("bad list entry: " + item);
    out.push_back(value);
  }
  return out;
}

struct RunOptions {
  std::string spec_file;
  std::string modes;
  std::string points;
  std::string seeds;
  std::string out_dir = "out";
  std::string second_order;
  std::optional<std::size_t> meta_test_tasks;
  std::optional<std::size_t> iterations;
  bool dump_tree = false;
  bool no_timing = false;
};

std::string cell_name(Mode mode, std::size_t points, std::uint64_t seed) {
  return to_string(mode) + "_p" + std::to_string(points) + "_s" + std::to_string(seed);
}

void apply_overrides(ExperimentSpec& spec, const RunOptions& opt) {
  if (!opt.modes.empty()) {
    spec.modes.clear();
    for (const auto& m : split_list<std::string>(opt.modes)) spec.modes.push_back(parse_mode(m));
  }
  if (!opt.points.empty()) spec.points_sweep = split_list<std::size_t>(opt.points);
  if (!opt.seeds.empty()) spec.replicate_seeds = split_list<std::uint64_t>(opt.seeds);
  if (opt.second_order == "on") spec.meta.second_order = true;
  if (opt.second_order == "off") spec.meta.second_order = false;
  if (opt.meta_test_tasks) spec.meta_test_tasks = *opt.meta_test_tasks;
  if (opt.iterations) spec.meta.outer_iterations = *opt.iterations;
  if (opt.no_timing) spec.record_wall_time = false;
  spec.validate();
}

int run_command(const RunOptions& opt) {
  ExperimentSpec spec = load_spec(opt.spec_file);
  apply_overrides(spec, opt);

  const fs::path out_dir(opt.out_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  write_text_file(out_dir / "spec.json", nlohmann::json(spec).dump(2) + "\n");
  {
    auto gen = spec.generator;
    gen.seed = spec.replicate_seeds.front();
    export_distribution(TaskDistribution(gen), out_dir / "centers.json");
  }

  std::ofstream log(out_dir / "log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open for writing: " + (out_dir / "log.jsonl").string());

  auto observe = [&](Mode mode, std::size_t points, std::uint64_t seed) {
    std::cerr << "running " << cell_name(mode, points, seed) << "\n";
    CellObserver obs;
    obs.on_iteration = [&log, mode, points, seed](const IterationLog& entry) {
      nlohmann::json j = entry;
      j["mode"] = to_string(mode);
      j["points"] = points;
      j["seed"] = seed;
      log << j.dump() << "\n";
    };
    obs.on_trained = [&out_dir, mode, points, seed](const ParamVector& omega, const MetaConfig& cfg) {
      save_checkpoint({omega, config_hash(nlohmann::json(cfg)), cfg.outer_iterations},
                      out_dir / ("omega_" + cell_name(mode, points, seed) + ".json"));
    };
    if (opt.dump_tree && is_tree_mode(mode)) {
      obs.on_first_adaptation = [&out_dir, mode, points, seed](const TargetAdaptation& adapted,
                                                              std::span<const TaskInstance> tasks) {
        if (adapted.trace) export_tree(*adapted.trace, tasks, out_dir / ("tree_" + cell_name(mode, points, seed) + ".json"));
      };
    }
    return obs;
  };

  const auto outcome = run_experiment(spec, observe);
  write_text_file(out_dir / "results.csv", to_csv(outcome.results));
  const std::string table = emit_table(outcome.results);
  write_text_file(out_dir / "table.txt", table);
  std::cout << table;

  if (!outcome.errors.empty()) {
    std::cerr << outcome.errors.size() << " cell(s) failed:\n";
    for (const auto& e : outcome.errors) {
      std::cerr << "  " << cell_name(e.mode, e.points_per_task, e.seed) << ": " << e.message << "\n";
    }
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TreeMAML hierarchical meta-learning experiments"};
  app.require_subcommand(1);

  RunOptions run_opt;
  auto* run = app.add_subcommand("run", "Train and evaluate a mode x points x seed grid");
  run->add_option("spec-file", run_opt.spec_file, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", run_opt.modes, "Comma-separated modes: baseline,maml,tree_fixed,tree_learned");
  run->add_option("--points", run_opt.points, "Comma-separated data points per task, e.g. 5,10,20");
  run->add_option("--seed", run_opt.seeds, "Comma-separated replicate seeds");
  run->add_option("--out-dir", run_opt.out_dir, "Output directory")->capture_default_str();
  run->add_option("--second-order", run_opt.second_order, "on|off")->check(CLI::IsMember({"on", "off"}));
  run->add_option("--meta-test-tasks", run_opt.meta_test_tasks, "Override the number of meta-test tasks");
  run->add_option("--iterations", run_opt.iterations, "Override the number of outer iterations");
  run->add_flag("--dump-tree", run_opt.dump_tree, "Write the adaptation tree of the first meta-test task");
  run->add_flag("--no-timing", run_opt.no_timing, "Write wall_seconds as 0 for byte-reproducible results");

  std::string export_spec;
  std::optional<std::uint64_t> export_seed;
  std::string export_out = "centers.json";
  auto* export_dist = app.add_subcommand("export-dist", "Write the generated cluster centers as JSON");
  export_dist->add_option("spec-file", export_spec, "Experiment spec (JSON); defaults when omitted")
      ->check(CLI::ExistingFile);
  export_dist->add_option("--seed", export_seed, "Generator seed");
  export_dist->add_option("--out", export_out, "Output path")->capture_default_str();

  app.add_subcommand("version", "Print the version");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(run_opt);
    if (export_dist->parsed()) {
      ExperimentSpec spec = export_spec.empty() ? ExperimentSpec{} : load_spec(export_spec);
      auto gen = spec.generator;
      if (export_seed) gen.seed = *export_seed;
      export_distribution(TaskDistribution(gen), export_out);
      std::cout << "wrote " << export_out << "\n";
      return 0;
    }
    std::cout << "treemaml " << kVersion << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
