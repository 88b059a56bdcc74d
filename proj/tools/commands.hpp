#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hyperset/config.hpp"

namespace hyperset::cli {

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kUsageError = 2, kIoError = 3 };

// Flags shared by every subcommand, applied over defaults and the config file.
struct CommonOptions {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::string> run_id;
  std::vector<std::string> set;  // KEY=VALUE
  // Per-command flags, recorded as config keys in the order given.
  std::vector<std::pair<std::string, std::string>> overrides;
};

RunConfig resolve_config(const CommonOptions& opts);

struct GradCheckArgs {
  std::optional<std::string> variant;
  std::size_t instances = 50;
  bool inject_sign_flip = false;
};

struct EvalArgs {
  std::string checkpoint;
};

struct TraceArgs {
  std::string checkpoint;
  std::size_t index = 0;
  std::size_t count = 1;
  std::size_t iterations = 0;  // 0 means the model's L
  std::string format = "csv";
};

struct MakeSudokuArgs {
  std::size_t count = 1000;
  std::size_t min_givens = 17;
  std::size_t max_givens = 34;
  std::string file = "sudoku.csv";
};

int cmd_grad_check(const RunConfig& cfg, const GradCheckArgs& args);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg, const EvalArgs& args);
int cmd_trace(const RunConfig& cfg, const TraceArgs& args);
int cmd_param_count(const RunConfig& cfg);
int cmd_dynamics(const RunConfig& cfg);
int cmd_make_sudoku(const RunConfig& cfg, const MakeSudokuArgs& args);

}  // namespace hyperset::cli
