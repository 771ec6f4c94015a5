#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>
#include <string>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(GSFM_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("gsfm_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UnknownFlagExitsWithUsageError) {
  const auto r = cli("gen-data --bogus");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--bogus"), std::string::npos);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("fit").code, 2);
}

TEST_F(Cli, HelpExitsCleanly) {
  const auto r = cli("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.output.find("prepare-bladder"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  const auto r = cli("km --data " + path("missing.csv") + " --out " + path("km"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("cannot open"), std::string::npos);
  EXPECT_EQ(cli("gen-data --scenario nope --out " + path("g")).code, 1);
}

TEST_F(Cli, GenDataWritesScenarioDataset) {
  const auto r = cli("gen-data --seed 11 --out " + path("g"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(path("g/dataset.csv"));
  const auto ds = gsfm::load_csv(in);
  EXPECT_EQ(ds.n(), 90u);
  EXPECT_EQ(ds.K(), 2);
  EXPECT_EQ(ds.G(), 3);
  EXPECT_EQ(ds, gsfm::gen_dataset(gsfm::scenario_paper43(), 11));
  const auto m = nlohmann::json::parse(slurp(path("g/manifest.json")));
  EXPECT_EQ(m["command"], "gen-data");
  EXPECT_EQ(m["seed"], 11);
}

TEST_F(Cli, GenDataIsByteIdentical) {
  ASSERT_EQ(cli("gen-data --seed 3 --out " + path("a")).code, 0);
  ASSERT_EQ(cli("gen-data --seed 3 --out " + path("b")).code, 0);
  EXPECT_EQ(slurp(path("a/dataset.csv")), slurp(path("b/dataset.csv")));
}

TEST_F(Cli, KmOnBladderGivesSixCurves) {
  const auto r = cli("km --data " + testutil::data_path("bladder.csv") + " --out " + path("km"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(path("km/km.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,survival,n_risk,n_event,stratum,recurrence");
  std::set<std::string> cells;
  while (std::getline(in, line)) {
    const auto parts = gsfm::csv::split(line);
    ASSERT_TRUE(parts);
    cells.insert((*parts)[4] + "/" + (*parts)[5]);
  }
  EXPECT_EQ(cells.size(), 6u);
  EXPECT_EQ(cli("km --data " + testutil::data_path("bladder.csv") + " --by wrong --out " + path("k2")).code, 1);
}

TEST_F(Cli, PrepareBladderReproducesShippedFile) {
  const auto r = cli("prepare-bladder --data " + testutil::data_path("bladder1_raw.csv") + " --carry-forward --out " +
                     path("p"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(path("p/bladder.csv")), slurp(testutil::data_path("bladder.csv")));
  EXPECT_EQ(slurp(path("p/bladder_strata.csv")), slurp(testutil::data_path("bladder_strata.csv")));
  const auto strict = cli("prepare-bladder --data " + testutil::data_path("bladder1_raw.csv") + " --out " + path("q"));
  EXPECT_EQ(strict.code, 1);
  EXPECT_NE(strict.output.find("subject"), std::string::npos);
}

TEST_F(Cli, FitWritesOutputsAndFlagsOverrideConfig) {
  ASSERT_EQ(cli("gen-data --seed 2 --out " + path("g")).code, 0);
  {
    std::ofstream cfg(path("cfg.json"));
    cfg << R"({"chains": 1, "warmup": 40, "draws": 15, "L": 3, "seed": 99, "max_tree_depth": 5})";
  }
  const std::string base = "fit --data " + path("g/dataset.csv") + " --config " + path("cfg.json");
  const auto r = cli(base + " --draws 12 --out " + path("f1"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("tau"), std::string::npos);
  for (const char* name : {"draws.csv", "summary.csv", "curves.csv", "curve_k1_j1.csv", "curve_k2_j3.csv",
                           "sampler_stats.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(path(std::string("f1/") + name))) << name;
  }
  const auto m = nlohmann::json::parse(slurp(path("f1/manifest.json")));
  EXPECT_EQ(m["settings"]["draws"], 12);
  EXPECT_EQ(m["settings"]["warmup"], 40);
  EXPECT_EQ(m["settings"]["L"], 3);
  EXPECT_EQ(m["seed"], 99);
  EXPECT_TRUE(m.contains("versions"));
  EXPECT_TRUE(m.contains("wall_time_seconds"));
  EXPECT_TRUE(m.contains("first_recurrence_curves_cross"));
  const auto stats = nlohmann::json::parse(slurp(path("f1/sampler_stats.json")));
  EXPECT_EQ(stats.size(), 1u);
  EXPECT_EQ(stats[0]["tree_depth"].size(), 12u);

  // same seed, same bytes
  ASSERT_EQ(cli(base + " --draws 12 --out " + path("f2")).code, 0);
  EXPECT_EQ(slurp(path("f1/draws.csv")), slurp(path("f2/draws.csv")));

  {
    std::ofstream bad(path("bad.json"));
    bad << R"({"chainz": 2})";
  }
  const auto e = cli("fit --data " + path("g/dataset.csv") + " --config " + path("bad.json") + " --out " + path("f3"));
  EXPECT_EQ(e.code, 1);
  EXPECT_NE(e.output.find("chainz"), std::string::npos);
}
