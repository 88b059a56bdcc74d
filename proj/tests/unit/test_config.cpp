#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "commands.hpp"
#include "hyperset/config.hpp"
#include "hyperset/errors.hpp"

using namespace hyperset;

namespace {

std::filesystem::path write_config(const std::string& name, const std::string& body) {
  const auto dir = std::filesystem::temp_directory_path() / "hyperset_unit";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST(Config, DefaultsAreDeskModel) {
  const RunConfig c;
  EXPECT_EQ(c.model, ModelConfig::sudoku_desk());
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.dynamics.steps, 24u);
}

TEST(Config, UnknownKeyIsAnError) {
  RunConfig c;
  EXPECT_THROW(c.set("model.depth", 3), ConfigError);
  EXPECT_THROW(c.set_from_string("train.lr", "0.1"), ConfigError);
  const auto path = write_config("unknown.json", R"({"model.d": 64, "model.width": 3})");
  EXPECT_THROW(c.merge_file(path.string()), ConfigError);
}

TEST(Config, TypeErrors) {
  RunConfig c;
  EXPECT_THROW(c.set_from_string("model.d", "-4"), ConfigError);
  EXPECT_THROW(c.set_from_string("model.d", "wide"), ConfigError);
  EXPECT_THROW(c.set_from_string("train.lr_max", "fast"), ConfigError);
  EXPECT_THROW(c.set_from_string("dynamics.bases", "random"), ConfigError);
  const auto nested = write_config("nested.json", R"({"model": {"d": 64}})");
  EXPECT_THROW(c.merge_file(nested.string()), ConfigError);
  EXPECT_THROW(c.merge_file("/nonexistent/config.json"), IoError);
}

TEST(Config, FileAndPresetMerging) {
  RunConfig c;
  const auto path = write_config("ok.json", R"({"model.d": 64, "model.preset": "sudoku_paper", "eval.iterations": "4,6"})");
  c.merge_file(path.string());
  // The preset is applied first, then the explicit key.
  EXPECT_EQ(c.model.d, 64u);
  EXPECT_EQ(c.model.heads, 12u);
  EXPECT_EQ(c.eval_iterations, (std::vector<std::size_t>{4, 6}));
  RunConfig p;
  p.merge_file("sudoku_paper");
  EXPECT_EQ(p.model, ModelConfig::sudoku_paper());
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.set_from_string("model.lora_rank", "4");
  c.set_from_string("train.eval_multipliers", "[1, 3]");
  c.set_from_string("data.train", "puzzles.csv");
  RunConfig d;
  const auto j = c.to_json();
  for (const auto& [key, value] : j.items()) d.set(key, value);
  EXPECT_EQ(d.to_json(), c.to_json());
  EXPECT_EQ(d.model.lora_rank, std::optional<std::size_t>(4));
}

TEST(Config, PrecedenceDefaultsFileSetFlags) {
  const auto path = write_config("prec.json", R"({"seed": 5, "train.epochs": 3, "model.L": 6, "out_dir": "from_file"})");
  cli::CommonOptions o;
  o.config = path.string();
  o.set = {"train.epochs=4", "model.L=7"};
  o.overrides = {{"model.L", "8"}};
  o.seed = 9;
  const RunConfig c = cli::resolve_config(o);
  EXPECT_EQ(c.train.epochs, 4u);
  EXPECT_EQ(c.model.L, 8u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.out_dir, "from_file");
  EXPECT_EQ(c.model.d, 128u);
  o.set = {"no_equals_sign"};
  EXPECT_THROW(cli::resolve_config(o), ConfigError);
}

TEST(Config, OutputDirectoryFromEnvironment) {
  ::setenv("HYPERSET_OUT", "/tmp/hyperset_env_out", 1);
  EXPECT_EQ(RunConfig::defaults().out_dir, "/tmp/hyperset_env_out");
  ::unsetenv("HYPERSET_OUT");
  EXPECT_EQ(RunConfig::defaults().out_dir, "out");
}
