#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hyperset/checkpoint.hpp"
#include "hyperset/dynamics.hpp"
#include "hyperset/errors.hpp"
#include "hyperset/gradcheck.hpp"
#include "hyperset/sudoku.hpp"
#include "hyperset/training.hpp"

namespace hyperset::cli {

namespace {

constexpr double kPaperSudokuParams = 5'200'000.0;

std::filesystem::path prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir.string() + ": " + ec.message());
  return cfg.out_dir;
}

std::vector<SudokuSample> load_data(const std::filesystem::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("no ") + what + " dataset given (set data." + what + ")");
  SudokuSet set = load_sudoku_csv(path);
  for (const std::string& w : set.warnings) std::fprintf(stderr, "warning: %s: %s\n", path.c_str(), w.c_str());
  if (set.samples.empty()) throw IoError(path.string() + " holds no puzzles");
  return std::move(set.samples);
}

std::vector<std::size_t> depths(const RunConfig& cfg, const ModelConfig& model) {
  if (!cfg.eval_iterations.empty()) return cfg.eval_iterations;
  return eval_iterations(model.L, cfg.train.eval_iteration_multipliers);
}

}  // namespace

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig cfg = RunConfig::defaults();
  if (opts.config) cfg.merge_file(*opts.config);
  for (const std::string& kv : opts.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    cfg.set_from_string(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [key, value] : opts.overrides) cfg.set_from_string(key, value);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.out_dir = *opts.out;
  if (opts.threads) cfg.threads = *opts.threads;
  if (opts.run_id) cfg.run_id = *opts.run_id;
  if (cfg.threads == 0) throw ConfigError("threads must be at least 1");
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;
  return cfg;
}

int cmd_grad_check(const RunConfig& cfg, const GradCheckArgs& args) {
  GradCheckOptions options;
  options.instances = args.instances;
  options.seed = cfg.seed;
  options.variant = args.variant;
  options.flip_sign = args.inject_sign_flip;
  const auto rows = run_grad_check(options);
  std::printf("%-18s %9s %14s %14s  %s\n", "case", "instances", "closed_form", "autodiff", "status");
  bool ok = true;
  for (const GradCheckRow& r : rows) {
    std::printf("%-18s %9zu %14.3e %14.3e  %s\n", r.name.c_str(), r.instances, r.max_err_closed, r.max_err_autodiff,
                r.passed ? "ok" : "FAIL");
    if (!r.passed) {
      ok = false;
      std::fprintf(stderr, "grad-check failed: %s, worst seed %llu, %s, error %.3e > %.1e\n", r.name.c_str(),
                   static_cast<unsigned long long>(r.worst_seed), r.worst_shape.c_str(),
                   std::max(r.max_err_closed, r.max_err_autodiff), options.tolerance);
    }
  }
  return ok ? kOk : kVerificationFailed;
}

int cmd_train(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  const auto out = prepare_out(cfg);
  const auto data = load_data(cfg.train_data, "train");
  ModelParams params = init_model(cfg.model, cfg.seed);
  {
    std::ofstream f(out / ("config_" + cfg.run_id + ".json"));
    f << cfg.to_json().dump(2) << '\n';
  }
  TrainOutputs outputs;
  outputs.metrics_path = out / ("metrics_" + cfg.run_id + ".jsonl");
  outputs.checkpoint_path = out / ("checkpoint_" + cfg.run_id + ".ckpt");
  outputs.dump_dir = out;
  outputs.on_epoch = [&](const EpochMetrics& m, double seconds) {
    std::fprintf(stderr, "epoch %zu/%zu loss %.4f cell %.4f board %.4f lr %.3g (%.0f s)\n", m.epoch,
                 cfg.train.epochs, m.loss, m.cell_accuracy, m.board_accuracy, m.lr, seconds);
  };
  const TrainResult r = train(params, data, cfg.train, outputs);
  const double final_loss = r.history.back().loss;
  std::printf("initial_loss %.6f\nfinal_loss %.6f\nrelative_drop %.4f\ncheckpoint %s\nmetrics %s\n", r.initial_loss,
              final_loss, 1.0 - final_loss / r.initial_loss, outputs.checkpoint_path->c_str(),
              outputs.metrics_path->c_str());
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const EvalArgs& args) {
  const auto out = prepare_out(cfg);
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const auto data = load_data(cfg.eval_data, "eval");
  const auto iters = depths(cfg, ck.params.cfg);
  const auto rows = evaluate(ck.params, data, iters, cfg.threads, true);
  const auto csv = out / ("eval_" + cfg.run_id + ".csv");
  std::ofstream f(csv, std::ios::binary);
  if (!f) throw IoError("cannot write " + csv.string());
  f << "iterations,loss,cell_accuracy,board_accuracy,energy_nonincreasing\n";
  for (const EvalRow& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%d\n", r.iterations, r.loss, r.cell_accuracy,
                  r.board_accuracy, energy_nonincreasing(r.mean_trace) ? 1 : 0);
    f << line;
    export_trace(r.mean_trace, out / ("trace_" + cfg.run_id + "_it" + std::to_string(r.iterations) + ".csv"),
                 TraceFormat::kCsv);
    std::printf("iterations %zu cell_accuracy %.4f board_accuracy %.4f loss %.4f\n", r.iterations, r.cell_accuracy,
                r.board_accuracy, r.loss);
  }
  if (!f) throw IoError("failed writing " + csv.string());
  std::printf("metrics %s\n", csv.c_str());
  return kOk;
}

int cmd_trace(const RunConfig& cfg, const TraceArgs& args) {
  if (args.format != "csv" && args.format != "json") throw ConfigError("--format must be csv or json");
  const auto out = prepare_out(cfg);
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const auto data = load_data(cfg.eval_data.empty() ? cfg.train_data : cfg.eval_data, "eval");
  if (args.count == 0 || args.index + args.count > data.size()) {
    throw ConfigError("boards " + std::to_string(args.index) + ".." + std::to_string(args.index + args.count) +
                      " are outside a dataset of " + std::to_string(data.size()));
  }
  const std::size_t iters = args.iterations == 0 ? ck.params.cfg.L : args.iterations;
  std::vector<EnergyTrace> traces(args.count);
  parallel_for(args.count, cfg.threads, [&](std::size_t k) {
    traces[k] = forward_model(ck.params, data[args.index + k].tokens(), iters, true).trace;
  });
  const auto path = out / ("trace_" + cfg.run_id + "." + args.format);
  export_trace(mean_trace(traces), path, args.format == "csv" ? TraceFormat::kCsv : TraceFormat::kJson);
  std::printf("trace %s\n", path.c_str());
  return kOk;
}

int cmd_param_count(const RunConfig& cfg) {
  const ParamBreakdown b = param_count(cfg.model);
  for (const auto& [name, n] : b.parts) std::printf("%-18s %12zu\n", name.c_str(), n);
  std::printf("%-18s %12zu\n", "total", b.total);
  const double rel = (static_cast<double>(b.total) - kPaperSudokuParams) / kPaperSudokuParams;
  std::printf("reference 5.20M: %+.2f%%\n", 100.0 * rel);
  return kOk;
}

int cmd_dynamics(const RunConfig& cfg) {
  const auto out = prepare_out(cfg);
  const DynamicsConfig& d = cfg.dynamics;
  if (d.trials == 0) throw ConfigError("dynamics.trials must be at least 1");
  std::size_t descending = 0;
  for (std::size_t k = 0; k < d.trials; ++k) {
    const EnergyTrace trace = run_dynamics(d, cfg.seed + k);
    if (energy_nonincreasing(trace)) ++descending;
    if (k == 0) {
      const auto path = out / ("trace_" + cfg.run_id + ".csv");
      export_trace(trace, path, TraceFormat::kCsv);
      std::printf("trace %s\n", path.c_str());
    }
  }
  const double fraction = static_cast<double>(descending) / static_cast<double>(d.trials);
  std::printf("nonincreasing e_total in %zu of %zu trials\n", descending, d.trials);
  return fraction >= 0.95 ? kOk : kVerificationFailed;
}

int cmd_make_sudoku(const RunConfig& cfg, const MakeSudokuArgs& args) {
  if (std::filesystem::path(args.file).has_parent_path() || args.file.empty()) {
    throw ConfigError("--file must be a plain file name inside the output directory");
  }
  const auto out = prepare_out(cfg);
  const auto samples = generate_sudoku_set(args.count, cfg.seed, args.min_givens, args.max_givens);
  const auto path = out / args.file;
  save_sudoku_csv(path, samples);
  std::printf("wrote %zu puzzles to %s\n", samples.size(), path.c_str());
  return kOk;
}

}  // namespace hyperset::cli
