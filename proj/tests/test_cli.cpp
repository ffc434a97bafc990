#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "bpre/cli.hpp"

using namespace bpre;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bpre-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int shell(const std::string& args) {
  const std::string cmd = std::string(BPRE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool mentions(const std::vector<std::string>& errors, const std::string& what) {
  for (const auto& e : errors) {
    if (e.find(what) != std::string::npos) return true;
  }
  return false;
}

ExperimentConfig config_for(const std::string& command) {
  ExperimentConfig c;
  c.command = command;
  return c;
}

}  // namespace

TEST(Validate, DefaultsAreValid) {
  for (const auto& name : command_names()) EXPECT_TRUE(validate(config_for(name)).empty()) << name;
}

TEST(Validate, RejectsLargeChi) {
  auto c = config_for("tail");
  c.overrides["chi"] = 0.6;
  const auto errors = validate(c);
  EXPECT_TRUE(mentions(errors, "chi=0.6")) << (errors.empty() ? "" : errors[0]);
}

TEST(Validate, RejectsSmallEta) {
  auto c = config_for("tail");
  c.overrides["eta"] = 0.1;
  EXPECT_TRUE(mentions(validate(c), "eta_lo=0.1"));
}

TEST(Validate, RejectsEmptyGrid) {
  auto c = config_for("tail");
  c.n_grid = std::vector<std::size_t>{};
  EXPECT_TRUE(mentions(validate(c), "field 'n_grid'"));
  c.n_grid = std::vector<std::size_t>{100, 10};
  EXPECT_TRUE(mentions(validate(c), "strictly increasing"));
  auto pc = config_for("path-constancy");
  pc.n_grid = std::vector<std::size_t>{512};
  EXPECT_TRUE(mentions(validate(pc), "n <= 256"));
}

TEST(Validate, UnknownCommandAndModel) {
  EXPECT_FALSE(validate(config_for("nope")).empty());
  auto c = config_for("tail");
  c.model = "cauchy";
  EXPECT_TRUE(mentions(validate(c), "field 'model'"));
}

TEST(Config, RoundTrip) {
  auto c = config_for("limit-law");
  c.seed = 7;
  c.n_grid = std::vector<std::size_t>{8, 16};
  c.params["s_grid"] = {0.0, 0.5, 1.0};
  c.overrides["eta"] = 1.5;
  std::vector<std::string> errors;
  const auto back = config_from_json(to_json(c), errors);
  EXPECT_TRUE(errors.empty());
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, UnknownFieldIsNamed) {
  std::vector<std::string> errors;
  config_from_json(json{{"command", "tail"}, {"sede", 3}}, errors);
  EXPECT_TRUE(mentions(errors, "field 'sede'"));
  errors.clear();
  config_from_json(json{{"command", "tail"}, {"seed", "three"}}, errors);
  EXPECT_TRUE(mentions(errors, "field 'seed'"));
}

TEST(Config, SyntaxErrorHasLineAndColumn) {
  std::vector<std::string> errors;
  const auto doc = parse_config_text("{\n  \"command\": \"tail\",\n  \"seed\": 3,,\n}\n", errors);
  EXPECT_FALSE(doc.has_value());
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("line 3"), std::string::npos) << errors[0];
  EXPECT_NE(errors[0].find("column"), std::string::npos) << errors[0];
}

TEST(RunDir, NameShape) {
  const auto name = run_directory_name("tail", 42);
  ASSERT_EQ(name.size(), std::string("tail-20260101T000000Z-00000000").size());
  EXPECT_EQ(name.substr(0, 5), "tail-");
  EXPECT_EQ(name[13], 'T');
  EXPECT_EQ(name[20], 'Z');
  EXPECT_EQ(name.substr(22), run_directory_name("tail", 42).substr(22));
  EXPECT_NE(name.substr(22), run_directory_name("tail", 43).substr(22));
}

TEST(Run, WritesArtifactsAndManifest) {
  auto c = config_for("tail");
  c.n_grid = std::vector<std::size_t>{2, 20};
  c.replicates = 500;
  c.assertions = false;
  const auto dir = scratch("manifest");
  const auto r = run(c, RunEnvironment{dir});
  ASSERT_EQ(r.exit_code, kExitOk);
  EXPECT_TRUE(fs::exists(dir / "tail.csv"));
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 42);
  EXPECT_EQ(manifest["config"]["command"], "tail");
  EXPECT_EQ(manifest["partial"], false);
  EXPECT_TRUE(manifest.contains("version"));
  EXPECT_TRUE(manifest.contains("wall_time_seconds"));
}

TEST(Run, WorkerCountGivesIdenticalFiles) {
  for (const std::string cmd : {"tail", "limit-law", "walk-constants"}) {
    auto c = config_for(cmd);
    c.replicates = 3000;
    c.block_size = 128;
    if (cmd == "tail") c.n_grid = std::vector<std::size_t>{4, 40};
    if (cmd == "limit-law") c.n_grid = std::vector<std::size_t>{8, 16};
    if (cmd == "walk-constants") c.n_grid = std::vector<std::size_t>{4, 8};
    c.assertions = false;
    const auto d1 = scratch(cmd + "-w1");
    const auto d3 = scratch(cmd + "-w3");
    c.workers = 1;
    ASSERT_EQ(run(c, RunEnvironment{d1}).exit_code, kExitOk);
    c.workers = 3;
    ASSERT_EQ(run(c, RunEnvironment{d3}).exit_code, kExitOk);
    for (const auto& entry : fs::directory_iterator(d1)) {
      if (entry.path().extension() != ".csv") continue;
      EXPECT_EQ(slurp(entry.path()), slurp(d3 / entry.path().filename())) << entry.path();
    }
  }
}

TEST(Run, ImpossibleToleranceExitsThree) {
  auto c = config_for("tail");
  c.n_grid = std::vector<std::size_t>{2, 20};
  c.replicates = 500;
  c.tolerances["slope_lo"] = 10.0;
  c.tolerances["slope_hi"] = 11.0;
  const auto r = run(c, RunEnvironment{scratch("assert")});
  EXPECT_EQ(r.exit_code, kExitAssertionFailed);
  c.assertions = false;
  EXPECT_EQ(run(c, RunEnvironment{scratch("assert")}).exit_code, kExitOk);
}

TEST(Run, InvalidConfigExitsOne) {
  auto c = config_for("tail");
  c.overrides["chi"] = 0.6;
  EXPECT_EQ(run(c).exit_code, kExitConfigError);
}

TEST(Executable, ExitCodes) {
  const auto dir = scratch("exe");
  EXPECT_EQ(shell("validate --command tail"), kExitOk);
  EXPECT_EQ(shell("validate --command tail --set chi=0.6"), kExitConfigError);
  EXPECT_EQ(shell("validate --command tail --set eta=0.1"), kExitConfigError);
  EXPECT_EQ(shell("tail --n 2,20 --reps 200 --tol slope_lo=10 --tol slope_hi=11 --run-dir " +
                  (dir / "a").string()),
            kExitAssertionFailed);
  EXPECT_EQ(shell("tail --n 2,20 --reps 200 --no-assert --run-dir " + (dir / "b").string()),
            kExitOk);
  EXPECT_TRUE(fs::exists(dir / "b" / "manifest.json"));
  EXPECT_EQ(shell("bogus"), kExitConfigError);

  std::ofstream(dir / "broken.json") << "{\"command\": \"tail\",\n \"seed\": }\n";
  EXPECT_EQ(shell("validate --config " + (dir / "broken.json").string()), kExitConfigError);
  std::ofstream(dir / "good.json") << "{\"command\": \"tail\", \"seed\": 5, \"n_grid\": [2, 20]}\n";
  EXPECT_EQ(shell("validate --config " + (dir / "good.json").string()), kExitOk);
}
