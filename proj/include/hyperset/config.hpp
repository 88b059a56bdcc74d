#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hyperset/model.hpp"
#include "hyperset/training.hpp"

namespace hyperset {

// Synthetic-token run used to watch energy descent under fixed step sizes.
struct DynamicsConfig {
  std::size_t tokens = 32;
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t M = 0;  // 0 means d
  std::size_t steps = 24;
  double alpha = 1e-3;
  double gamma = 1e-3;
  std::size_t trials = 1;
  std::string bases = "orthogonal";  // or "gaussian"
};

struct RunConfig {
  std::string run_id = "run";
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  ModelConfig model = ModelConfig::sudoku_desk();
  TrainConfig train;
  std::filesystem::path train_data;
  std::filesystem::path eval_data;
  std::vector<std::size_t> eval_iterations;  // empty means L times train.eval_iteration_multipliers
  DynamicsConfig dynamics;

  // Defaults, with out_dir taken from HYPERSET_OUT when set.
  static RunConfig defaults();

  // Sets one dotted key. Unknown keys and ill-typed values throw ConfigError.
  void set(std::string_view key, const nlohmann::json& value);
  // Parses `value` as JSON when possible, otherwise as a bare string.
  void set_from_string(std::string_view key, std::string_view value);
  // A flat JSON object of dotted keys. `source` is either a file path or a
  // model preset name such as "sudoku_paper".
  void merge_file(const std::string& source);

  static std::vector<std::string> keys();
  nlohmann::ordered_json to_json() const;
};

}  // namespace hyperset
