#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "hyperset/diagnostics.hpp"

using namespace hyperset;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

std::filesystem::path scratch() {
  const auto dir = std::filesystem::temp_directory_path() / "hyperset_cli_test";
  std::filesystem::create_directories(dir);
  return dir;
}

CliRun run(const std::string& args) {
  const auto log = scratch() / "stdout.txt";
  const std::string cmd = std::string(HYPERSET_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

}  // namespace

TEST(Cli, GradCheckPassesAndFiltersVariant) {
  CliRun r = run("grad-check --instances 5");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("attn_bi_softmax"), std::string::npos);
  r = run("grad-check --instances 5 --variant linear");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("attn_linear"), std::string::npos);
  EXPECT_EQ(r.out.find("ff_relu"), std::string::npos);
}

TEST(Cli, InjectedSignFlipFails) {
  const CliRun r = run("grad-check --instances 2 --inject-sign-flip");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("worst seed"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("grad-check --no-such-flag").code, 2);
  EXPECT_EQ(run("param-count --set model.width=3").code, 2);
  EXPECT_EQ(run("grad-check --variant cosine --instances 1").code, 2);
}

TEST(Cli, HelpListsFlags) {
  const CliRun r = run("dynamics --help");
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--config", "--seed", "--out", "--threads", "--steps", "--alpha", "--gamma"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
}

TEST(Cli, ParamCountPaperPreset) {
  const CliRun r = run("param-count --config sudoku_paper");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("total"), std::string::npos);
  EXPECT_NE(r.out.find("5193216"), std::string::npos) << r.out;
}

TEST(Cli, DynamicsWritesDescendingTraceUnderOut) {
  const auto out = scratch() / "dyn";
  std::filesystem::remove_all(out);
  const CliRun r = run("dynamics --steps 24 --alpha 0.001 --gamma 0.001 --seed 7 --run-id d7 --out " + out.string());
  EXPECT_EQ(r.code, 0) << r.out;
  const EnergyTrace t = import_trace(out / "trace_d7.csv", TraceFormat::kCsv);
  EXPECT_EQ(t.rows.size(), 25u);
  EXPECT_TRUE(energy_nonincreasing(t));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(out)) ++files;
  EXPECT_EQ(files, 1u);
}

TEST(Cli, MissingDatasetIsIoError) {
  const CliRun r = run("train --data /nonexistent/puzzles.csv --out " + (scratch() / "t").string());
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST(Cli, TrainEvalTraceEndToEnd) {
  const auto out = scratch() / "e2e";
  std::filesystem::remove_all(out);
  const std::string common = " --out " + out.string() + " --run-id e2e";
  const std::string tiny = " --set model.d=16 --set model.heads=2 --set model.M=32 --set model.L=2 --set model.time_dim=16";
  ASSERT_EQ(run("make-sudoku --count 6 --min-givens 30 --seed 3" + common).code, 0);
  const auto data = (out / "sudoku.csv").string();
  CliRun r = run("train --data " + data + " --epochs 1 --batch-size 3" + tiny + common);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("relative_drop"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(out / "metrics_e2e.jsonl"));
  const auto ckpt = (out / "checkpoint_e2e.ckpt").string();
  r = run("eval --checkpoint " + ckpt + " --data " + data + " --iterations 2,3,4" + common);
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream csv(out / "eval_e2e.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 4u);
  r = run("trace --checkpoint " + ckpt + " --data " + data + " --count 2 --format json" + common);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(import_trace(out / "trace_e2e.json", TraceFormat::kJson).rows.size(), 3u);
}
