#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "hyperset/errors.hpp"

using namespace hyperset;
using namespace hyperset::cli;

namespace {

void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--config", c.config, "Flat JSON config file, or a model preset name (sudoku_paper, sudoku_desk)");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--out", c.out, "Output directory (default $HYPERSET_OUT or ./out)");
  sub->add_option("--threads", c.threads, "Worker threads; 1 gives bitwise reproducible runs")
      ->check(CLI::PositiveNumber);
  sub->add_option("--run-id", c.run_id, "Name used in output file names");
  sub->add_option("--set", c.set, "Override a config key, KEY=VALUE (repeatable)");
}

// A flag that stands for one config key.
void add_key(CLI::App* sub, CommonOptions& c, const std::string& flag, const std::string& key,
             const std::string& help) {
  sub->add_option_function<std::string>(
         flag, [&c, key](const std::string& v) { c.overrides.emplace_back(key, v); }, help + " (" + key + ")")
      ->type_name("VALUE");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperset: hyperspherical energy transformer toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CommonOptions common;
  GradCheckArgs grad_args;
  EvalArgs eval_args;
  TraceArgs trace_args;
  MakeSudokuArgs sudoku_args;

  auto* grad = app.add_subcommand("grad-check", "Compare closed-form energy gradients with finite differences");
  add_common(grad, common);
  grad->add_option("--variant", grad_args.variant, "Only cases matching this name (e.g. linear, gated, attn_sigmoid)");
  grad->add_option("--instances", grad_args.instances, "Random instances per case")->check(CLI::PositiveNumber);
  grad->add_flag("--inject-sign-flip", grad_args.inject_sign_flip, "Negate the closed forms (negative control)");

  auto* train = app.add_subcommand("train", "Train a Sudoku model; writes checkpoint and JSON-lines metrics");
  add_common(train, common);
  add_key(train, common, "--data", "data.train", "Training CSV");
  add_key(train, common, "--epochs", "train.epochs", "Epochs");
  add_key(train, common, "--batch-size", "train.batch_size", "Batch size");
  add_key(train, common, "--lr", "train.lr_max", "Peak learning rate");
  add_key(train, common, "--preset", "model.preset", "Model preset");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint at several iteration counts");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  add_key(eval, common, "--data", "data.eval", "Evaluation CSV");
  add_key(eval, common, "--iterations", "eval.iterations", "Comma-separated iteration counts");

  auto* trace = app.add_subcommand("trace", "Write the mean energy/rank/angle trace of a checkpoint");
  add_common(trace, common);
  trace->add_option("--checkpoint", trace_args.checkpoint, "Checkpoint file")->required();
  add_key(trace, common, "--data", "data.eval", "Puzzle CSV");
  trace->add_option("--index", trace_args.index, "First board");
  trace->add_option("--count", trace_args.count, "Number of boards averaged")->check(CLI::PositiveNumber);
  trace->add_option("--iterations", trace_args.iterations, "Iterations (default L)");
  trace->add_option("--format", trace_args.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  auto* params = app.add_subcommand("param-count", "Print the learnable parameter breakdown");
  add_common(params, common);

  auto* dyn = app.add_subcommand("dynamics", "Fixed-step unroll on random normalized tokens");
  add_common(dyn, common);
  add_key(dyn, common, "--steps", "dynamics.steps", "Iterations");
  add_key(dyn, common, "--alpha", "dynamics.alpha", "Attention step");
  add_key(dyn, common, "--gamma", "dynamics.gamma", "Feedforward step");
  add_key(dyn, common, "--tokens", "dynamics.tokens", "Number of tokens N");
  add_key(dyn, common, "--dim", "dynamics.d", "Token dimension d");
  add_key(dyn, common, "--heads", "dynamics.heads", "Heads H");
  add_key(dyn, common, "--ff-width", "dynamics.M", "Feedforward bases M (0 means d)");
  add_key(dyn, common, "--trials", "dynamics.trials", "Independent seeds seed..seed+trials-1");
  add_key(dyn, common, "--bases", "dynamics.bases", "orthogonal or gaussian");

  auto* sudoku = app.add_subcommand("make-sudoku", "Generate unique-solution Sudoku puzzles as CSV");
  add_common(sudoku, common);
  sudoku->add_option("--count", sudoku_args.count, "Number of puzzles");
  sudoku->add_option("--min-givens", sudoku_args.min_givens, "Smallest target number of givens");
  sudoku->add_option("--max-givens", sudoku_args.max_givens, "Largest target number of givens");
  sudoku->add_option("--file", sudoku_args.file, "File name inside the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    const RunConfig cfg = resolve_config(common);
    if (grad->parsed()) return cmd_grad_check(cfg, grad_args);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, eval_args);
    if (trace->parsed()) return cmd_trace(cfg, trace_args);
    if (params->parsed()) return cmd_param_count(cfg);
    if (dyn->parsed()) return cmd_dynamics(cfg);
    if (sudoku->parsed()) return cmd_make_sudoku(cfg, sudoku_args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsageError;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIoError;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kIoError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kVerificationFailed;
  }
  return kUsageError;
}
