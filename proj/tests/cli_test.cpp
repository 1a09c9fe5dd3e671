#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "treemaml/tasks.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TREEMAML_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("treemaml_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::string kSmoke = std::string(TREEMAML_TEST_DATA) + "/smoke.json";

}  // namespace

TEST(Cli, Version) { EXPECT_EQ(run("version"), 0); }

TEST(Cli, RunWritesArtifacts) {
  const auto out = scratch("run");
  ASSERT_EQ(run("run " + kSmoke + " --dump-tree --out-dir " + out.string()), 0);
  for (const char* f : {"spec.json", "centers.json", "log.jsonl", "results.csv", "table.txt",
                        "omega_maml_p4_s1.json", "tree_tree_learned_p4_s1.json", "tree_tree_fixed_p4_s1.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto tree = nlohmann::json::parse(treemaml::read_text_file(out / "tree_tree_learned_p4_s1.json"));
  EXPECT_TRUE(tree.contains("partition_tree"));
  EXPECT_TRUE(tree.contains("otd_trees"));
  const auto ckpt = nlohmann::json::parse(treemaml::read_text_file(out / "omega_maml_p4_s1.json"));
  EXPECT_EQ(ckpt["dim"], 6);
  fs::remove_all(out);
}

TEST(Cli, NoTimingIsByteReproducible) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  ASSERT_EQ(run("run " + kSmoke + " --no-timing --points 4,5 --seed 2 --out-dir " + a.string()), 0);
  ASSERT_EQ(run("run " + kSmoke + " --no-timing --points 4,5 --seed 2 --out-dir " + b.string()), 0);
  const auto csv = treemaml::read_text_file(a / "results.csv");
  EXPECT_EQ(csv, treemaml::read_text_file(b / "results.csv"));
  EXPECT_NE(csv.find("tree_learned,5,2,"), std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, OverridesApply) {
  const auto out = scratch("override");
  ASSERT_EQ(run("run " + kSmoke + " --mode maml --second-order off --iterations 2 --out-dir " + out.string()), 0);
  const auto spec = nlohmann::json::parse(treemaml::read_text_file(out / "spec.json"));
  EXPECT_EQ(spec["modes"], (nlohmann::json{"maml"}));
  EXPECT_EQ(spec["meta"]["second_order"], false);
  EXPECT_EQ(spec["meta"]["outer_iterations"], 2);
  fs::remove_all(out);
}

TEST(Cli, FailedCellsGiveNonzeroExit) {
  const auto out = scratch("fail");
  EXPECT_EQ(run("run " + std::string(TREEMAML_TEST_DATA) + "/diverging.json --out-dir " + out.string()), 1);
  // the baseline cell does not adapt and still completes
  EXPECT_NE(treemaml::read_text_file(out / "results.csv").find("baseline,4,1,"), std::string::npos);
  fs::remove_all(out);
}

TEST(Cli, BadInput) {
  EXPECT_NE(run("run /nonexistent/spec.json"), 0);
  EXPECT_NE(run("run " + kSmoke + " --mode reptile --out-dir " + scratch("bad").string()), 0);
  EXPECT_NE(run("run " + kSmoke + " --second-order maybe"), 0);
  EXPECT_NE(run(""), 0);
}

TEST(Cli, ExportDistribution) {
  const auto out = scratch("centers.json");
  ASSERT_EQ(run("export-dist --seed 9 --out " + out.string()), 0);
  const auto j = nlohmann::json::parse(treemaml::read_text_file(out));
  EXPECT_EQ(j["config"]["seed"], 9);
  EXPECT_EQ(j["centers"].size(), 4u);
  fs::remove(out);
}
