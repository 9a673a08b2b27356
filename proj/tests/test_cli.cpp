#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "util.hpp"

namespace {

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(DISCO_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.output += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const std::string kSource = DISCO_SOURCE_DIR;

void write_file(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string blob_csv() {
  std::string s = "a,b,label\n";
  for (int i = 0; i < 120; ++i) {
    const int c = i % 2;
    s += std::to_string(c * 2 + (i % 7) * 0.05) + "," + std::to_string(c * 2 - (i % 5) * 0.05) + "," +
         std::to_string(c) + "\n";
  }
  return s;
}

const char* kSpec = R"({"taskId":"cli","model":{"inputDim":2,"hiddenDim":4,"outputDim":2,"seed":1},
  "training":{"batchSize":8,"epochsPerRound":2,"learningRate":0.3,"shuffleSeed":1},"totalRounds":3})";

}  // namespace

TEST(Cli, HelpDocumentsEveryFlag) {
  const std::map<std::string, std::vector<std::string>> flags{
      {"serve", {"--config"}},
      {"create-task", {"--spec", "--server", "--data-dir"}},
      {"join", {"--server", "--task", "--data", "--format", "--listen", "--labels", "--label-column",
                "--metrics-out", "--save-model"}},
      {"solo", {"--spec", "--data"}},
      {"simulate", {"--scenario", "--out"}},
      {"evaluate", {"--model", "--data"}},
  };
  const CliRun top = cli("--help");
  EXPECT_EQ(top.code, 0);
  for (const auto& [sub, fs] : flags) {
    EXPECT_NE(top.output.find(sub), std::string::npos) << sub;
    const CliRun r = cli(sub + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    for (const auto& f : fs) EXPECT_NE(r.output.find(f), std::string::npos) << sub << " " << f;
  }
}

TEST(Cli, SimulateBundledSmokeScenario) {
  disco::testing::TempDir dir("cli");
  const CliRun r = cli("simulate --scenario " + kSource + "/scenarios/smoke-2client.json --out " + dir.path().string());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.csv"));
  std::ifstream in(dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["aggregations"].size(), 10u);
}

TEST(Cli, JoinUnreachableServerExitsNonzero) {
  disco::testing::TempDir dir("cli");
  write_file(dir / "d.csv", blob_csv());
  const auto t0 = std::chrono::steady_clock::now();
  const CliRun r = cli("join --server 127.0.0.1:1 --task x --data " + (dir / "d.csv").string() +
                    " --connect-attempts 2");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("unreachable"), std::string::npos) << r.output;
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(10));
}

TEST(Cli, CreateTaskInvalidSpecNamesInvariant) {
  disco::testing::TempDir dir("cli");
  write_file(dir / "bad.json", R"({"taskId":"x","model":{"inputDim":2,"outputDim":2},"totalRounds":0})");
  const CliRun r = cli("create-task --spec " + (dir / "bad.json").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("totalRounds"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("invalid-spec"), std::string::npos) << r.output;
}

TEST(Cli, CreateTaskIntoDataDir) {
  disco::testing::TempDir dir("cli");
  write_file(dir / "spec.json", kSpec);
  const std::string args = "create-task --spec " + (dir / "spec.json").string() + " --data-dir " + (dir / "state").string();
  EXPECT_EQ(cli(args).code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "state" / "tasks" / "cli" / "spec.json"));
  const CliRun dup = cli(args);
  EXPECT_NE(dup.code, 0);
  EXPECT_NE(dup.output.find("already exists"), std::string::npos);
}

TEST(Cli, SoloThenEvaluate) {
  disco::testing::TempDir dir("cli");
  write_file(dir / "d.csv", blob_csv());
  write_file(dir / "spec.json", kSpec);
  const CliRun solo = cli("solo --spec " + (dir / "spec.json").string() + " --data " + (dir / "d.csv").string() +
                       " --save-model " + (dir / "m.dsc").string() + " --metrics-out " + (dir / "m.csv").string());
  EXPECT_EQ(solo.code, 0) << solo.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "m.csv"));
  const CliRun eval = cli("evaluate --model " + (dir / "m.dsc").string() + " --data " + (dir / "d.csv").string());
  EXPECT_EQ(eval.code, 0) << eval.output;
  EXPECT_NE(eval.output.find("accuracy 1.0000"), std::string::npos) << eval.output;
}

TEST(Cli, BadInputsExitNonzero) {
  EXPECT_NE(cli("").code, 0);
  EXPECT_NE(cli("simulate --scenario /nonexistent.json --out /tmp/x").code, 0);
  EXPECT_NE(cli("evaluate --model /nonexistent.dsc --data /nonexistent.csv").code, 0);
  EXPECT_NE(cli("join --server 127.0.0.1:1 --task x --data y.csv --format xml").code, 0);
}
