// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Criterion 8 trains the desk-scale Sudoku
// model; 9 and 10 reuse its checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hyperset/checkpoint.hpp"
#include "hyperset/diagnostics.hpp"
#include "hyperset/dynamics.hpp"
#include "hyperset/energy.hpp"
#include "hyperset/gradcheck.hpp"
#include "hyperset/model.hpp"
#include "hyperset/sudoku.hpp"
#include "hyperset/training.hpp"

using namespace hyperset;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr std::size_t kDescentSeeds = 100;
constexpr std::size_t kDescentRequired = 95;
constexpr double kUnconstrainedStep = 1e-4;
constexpr std::size_t kBoundInputs = 1000;
constexpr double kBoundSlack = 1e-9;  // relative, for rounding in the projections
constexpr double kRankTol = 1e-9;
constexpr double kSpectrumTol = 1e-5;
constexpr double kAngleTol = 1e-9;
constexpr double kParamTol = 0.02;
constexpr std::size_t kMchSets = 100;
constexpr double kMchConvergence = 1e-6;
constexpr double kMchRoundoff = 1e-12;
constexpr double kLossDrop = 0.60;
constexpr double kCellBaseline = 1.0 / 9.0;
constexpr double kTrainBudgetSeconds = 2.0 * 3600.0;

// Desk-scale run.
constexpr std::uint64_t kDataSeed = 20240601;
constexpr std::uint64_t kModelSeed = 1;
constexpr std::size_t kTrainPuzzles = 1000;
constexpr std::size_t kHeldOut = 100;

TrainConfig desk_train_config() {
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 8;
  tc.lr_max = 3e-3;
  tc.lr_min = 1e-5;
  tc.warmup_epochs = 0.5;
  tc.weight_decay = 0.1;
  tc.grad_clip = 1.0;
  tc.seed = kModelSeed;
  tc.threads = 1;
  return tc;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::map<int, Outcome> g_results;

void report(int id, const char* title, const Outcome& o) {
  g_results[id] = o;
  std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Tensor gaussian(Shape shape, std::mt19937_64& rng, double std = 1.0) {
  std::normal_distribution<double> n(0.0, std);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = n(rng);
  return t;
}

// Scales column j of rows [lo, hi) to Euclidean norm r.
void set_block_norm(Tensor& X, std::size_t j, std::size_t lo, std::size_t hi, double r) {
  double sq = 0.0;
  for (std::size_t i = lo; i < hi; ++i) sq += X(i, j) * X(i, j);
  const double f = r / std::sqrt(sq);
  for (std::size_t i = lo; i < hi; ++i) X(i, j) *= f;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracles() {
  const auto t0 = Clock::now();
  GradCheckOptions o;
  o.instances = 50;
  o.seed = 2024;
  o.tolerance = kGradTol;
  const auto rows = run_grad_check(o);
  const double secs = seconds_since(t0);
  bool ok = rows.size() == 6 && secs <= kGradBudgetSeconds;
  double worst = 0.0;
  std::string failed;
  for (const GradCheckRow& r : rows) {
    worst = std::max({worst, r.max_err_closed, r.max_err_autodiff});
    if (!r.passed) {
      ok = false;
      failed += " " + r.name;
    }
  }
  return {ok, fmt("%zu cases x 50 instances, worst relative error %.2e (limit %.0e), %.1f s (limit %.0f s)%s",
                  rows.size(), worst, kGradTol, secs, kGradBudgetSeconds,
                  failed.empty() ? "" : (" failing:" + failed).c_str())};
}

Outcome identity_at_init() {
  const ModelParams p = init_model(ModelConfig::sudoku_desk(), kModelSeed);
  const auto boards = generate_sudoku_set(1, 99, 30, 34);
  const Tensor X0 = embed(p, boards[0].tokens());
  bool ok = true;
  std::string detail;
  for (std::size_t depth : {1u, 12u, 24u, 48u}) {
    UnrollOptions opt;
    opt.record_trace = false;
    const Tensor X = forward_unroll(X0, p.block, p.cfg.block_config(), depth, opt).X;
    const bool same = X.shape() == X0.shape() &&
                      std::memcmp(X.data().data(), X0.data().data(), X0.data().size_bytes()) == 0;
    ok = ok && same;
    detail += fmt("%sdepth %zu %s", detail.empty() ? "" : "; ", depth, same ? "bitwise equal" : "DIFFERS");
  }
  return {ok, detail};
}

Outcome energy_descent() {
  DynamicsConfig cfg;  // N=32, d=64, H=4, M=d, 24 steps, alpha=gamma=1e-3, orthogonal bases
  std::size_t descending = 0;
  for (std::size_t s = 0; s < kDescentSeeds; ++s) {
    if (energy_nonincreasing(run_dynamics(cfg, 1000 + s))) ++descending;
  }
  // Unconstrained form: one step of size 1e-4 against the exact gradient of
  // the unnormalized energy from a random, unnormalized start.
  std::size_t single = 0;
  for (std::size_t s = 0; s < kDescentSeeds; ++s) {
    DynamicsSetup setup = make_dynamics_setup(cfg, 5000 + s);
    std::mt19937_64 rng(9000 + s);
    const Tensor X = gaussian({cfg.d, cfg.tokens}, rng);
    const EnergyConfig& e = setup.block.energy;
    const Bases& b = setup.params.bases;
    const double before = e_attn(X, b, e).e_attn + e_ff(X, b, e);
    const Tensor next = sub(X, scale(add(grad_e_attn(X, b, e), grad_e_ff(X, b, e)), kUnconstrainedStep));
    const double after = e_attn(next, b, e).e_attn + e_ff(next, b, e);
    if (after < before) ++single;
  }
  const bool ok = descending >= kDescentRequired && single == kDescentSeeds;
  return {ok, fmt("normalized 24-step runs nonincreasing in %zu/%zu seeds (need %zu); unconstrained single step "
                  "descends in %zu/%zu",
                  descending, kDescentSeeds, kDescentRequired, single, kDescentSeeds)};
}

Outcome energy_bounds() {
  std::size_t violations = 0;
  double min_attn_margin = INFINITY, min_ff_margin = INFINITY;
  for (std::size_t k = 0; k < kBoundInputs; ++k) {
    std::mt19937_64 rng(700000 + k);
    const std::size_t H = std::size_t{1} << (rng() % 3);
    const std::size_t p = 2 + rng() % 7;
    const std::size_t d = H * p;
    const std::size_t N = 1 + rng() % 16;
    const std::size_t M = d + rng() % (3 * d);
    const EnergyConfig cfg = EnergyConfig::make(d, H, M);
    // Orthogonal W and row-orthonormal D map constraint-satisfying inputs
    // to projections of exact norm sqrt(p) and sqrt(M).
    const Tensor Q = random_orthonormal(d, d, rng);
    const Tensor D = transpose(random_orthonormal(M, d, rng));
    Tensor Zs = gaussian({d, N}, rng);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t h = 0; h < H; ++h) set_block_norm(Zs, j, h * p, (h + 1) * p, std::sqrt(double(p)));
    Tensor Y = gaussian({d, N}, rng);
    for (std::size_t j = 0; j < N; ++j) set_block_norm(Y, j, 0, d, std::sqrt(double(M)));
    const Bases b{Q, D};
    const EnergyReport r = e_attn(matmul(Q, Zs), b, cfg);
    const double n = double(N), pd = double(p);
    const double lo = n * pd, hi = n * (pd + std::sqrt(pd) * std::log(n));
    for (double e : r.e_attn_per_head) {
      if (e < lo * (1 - kBoundSlack) || e > hi * (1 + kBoundSlack)) ++violations;
      min_attn_margin = std::min({min_attn_margin, (e - lo) / lo, (hi - e) / lo});
    }
    const double f = e_ff(Y, b, cfg);
    const double flo = -n * double(M) / 2.0;
    if (f > 0.0 || f < flo * (1 + kBoundSlack)) ++violations;
    min_ff_margin = std::min({min_ff_margin, -f / -flo, (f - flo) / -flo});
  }
  return {violations == 0, fmt("%zu inputs, %zu violations; smallest relative margins attn %.2e, ff %.2e",
                               kBoundInputs, violations, min_attn_margin, min_ff_margin)};
}

Outcome diagnostics_exact() {
  double worst_rank = 0.0;
  std::mt19937_64 rng(5);
  for (std::size_t k = 1; k <= 8; ++k) {
    const Tensor Q = random_orthonormal(k, k, rng);
    for (std::size_t N = 1; N <= 16; ++N) {
      // Equal-norm columns cycling through k orthonormal directions; the
      // spectrum is flat when N <= k or k divides N.
      if (N > k && N % k != 0) continue;
      Tensor X(Shape{k, N});
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t i = 0; i < k; ++i) X(i, j) = 3.0 * Q(i, j % k);
      worst_rank = std::max(worst_rank, std::abs(effective_rank(X) - double(std::min(k, N))));
    }
  }
  const double spectrum[] = {2.0, 1.0, 1.0};
  const double er = effective_rank_from_singular_values(spectrum);
  const Tensor pair = matmul(random_orthonormal(5, 2, rng), Tensor::matrix({{2.0, 0.0}, {0.0, 2.0}}));
  const double angle = average_angle(pair);
  const bool ok = worst_rank <= kRankTol && std::abs(er - 2.82843) <= kSpectrumTol && std::abs(angle - 90.0) <= kAngleTol;
  return {ok, fmt("orthogonal columns max |erank - min(k,N)| = %.1e; sigma=[2,1,1] -> %.6f; orthogonal pair %.12f deg",
                  worst_rank, er, angle)};
}

Outcome parameter_accounting() {
  const ParamBreakdown b = param_count(ModelConfig::sudoku_paper());
  const double rel = (double(b.total) - 5.2e6) / 5.2e6;
  const std::size_t lora = 2 * lora_param_count(512, 512, 4, 12);
  const double lora_m = std::round(double(lora) / 1e4) / 100.0;  // millions, two decimals
  const bool ok = std::abs(rel) <= kParamTol && lora == 98'304 && std::abs(lora_m - 0.10) < 1e-12;
  return {ok, fmt("paper config %zu parameters (%+.2f%% vs 5.20M, limit 2%%); LoRA d=512 r=4 x12 on W,D = %zu (%.2fM)",
                  b.total, 100 * rel, lora, lora_m)};
}

Outcome mch_baseline() {
  std::size_t monotone = 0, converged = 0;
  double worst_dist = 0.0;
  for (std::size_t s = 0; s < kMchSets; ++s) {
    std::mt19937_64 rng(300 + s);
    const std::size_t d = 8 + rng() % 9;
    const std::size_t P = 2 + rng() % (d - 1);
    // Orthogonal patterns with squared norms in [40, 80]: every pattern is
    // its own fixed point up to exp(-40).
    Tensor Xi = random_orthonormal(d, P, rng);
    std::uniform_real_distribution<double> u(40.0, 80.0);
    for (std::size_t j = 0; j < P; ++j) {
      const double r = std::sqrt(u(rng));
      for (std::size_t i = 0; i < d; ++i) Xi(i, j) *= r;
    }
    const std::size_t target = rng() % P;
    Tensor x(Shape{d});
    std::normal_distribution<double> noise(0.0, 0.3);
    for (std::size_t i = 0; i < d; ++i) x[i] = Xi(i, target) + noise(rng);
    bool mono = true;
    double e = e_mch(x, Xi);
    for (int t = 0; t < 50; ++t) {
      x = mch_update(x, Xi);
      const double next = e_mch(x, Xi);
      if (next > e + kMchRoundoff * std::max(1.0, std::abs(e))) mono = false;
      e = next;
    }
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) dist += (x[i] - Xi(i, target)) * (x[i] - Xi(i, target));
    dist = std::sqrt(dist);
    worst_dist = std::max(worst_dist, dist);
    monotone += mono;
    converged += dist <= kMchConvergence;
  }
  return {monotone == kMchSets && converged == kMchSets,
          fmt("%zu/%zu energy nonincreasing, %zu/%zu within %.0e of the stored pattern (worst %.2e)", monotone,
              kMchSets, converged, kMchSets, kMchConvergence, worst_dist)};
}

// ---------------------------------------------------------------------------

struct DeskRun {
  fs::path checkpoint;
  std::vector<SudokuSample> held_out;
  std::vector<EvalRow> eval;
};

std::optional<DeskRun> desk_sudoku(const fs::path& out, Outcome& outcome) {
  const auto all = generate_sudoku_set(kTrainPuzzles + kHeldOut, kDataSeed, kMinGivens, kMaxGivens);
  const std::vector<SudokuSample> train_set(all.begin(), all.begin() + kTrainPuzzles);
  DeskRun run;
  run.held_out.assign(all.begin() + kTrainPuzzles, all.end());
  save_sudoku_csv(out / "desk_train.csv", train_set);
  save_sudoku_csv(out / "desk_heldout.csv", run.held_out);

  ModelParams params = init_model(ModelConfig::sudoku_desk(), kModelSeed);
  const TrainConfig tc = desk_train_config();
  TrainOutputs outputs;
  outputs.metrics_path = out / "metrics_desk.jsonl";
  outputs.checkpoint_path = out / "checkpoint_desk.ckpt";
  outputs.dump_dir = out;
  outputs.on_epoch = [&](const EpochMetrics& m, double secs) {
    std::fprintf(stderr, "  desk epoch %2zu/%zu loss %.4f cell %.4f board %.3f lr %.2e (%.0f s)\n", m.epoch,
                 tc.epochs, m.loss, m.cell_accuracy, m.board_accuracy, m.lr, secs);
  };
  const auto t0 = Clock::now();
  TrainResult r;
  try {
    r = train(params, train_set, tc, outputs);
  } catch (const std::exception& e) {
    outcome = {false, std::string("training failed: ") + e.what()};
    return std::nullopt;
  }
  const double train_secs = seconds_since(t0);
  run.checkpoint = *outputs.checkpoint_path;

  const std::vector<std::size_t> depths{16, 24, 32};
  const auto e0 = Clock::now();
  run.eval = evaluate(params, run.held_out, depths, 1, true);
  const double eval_secs = seconds_since(e0);
  {
    std::ofstream csv(out / "eval_desk.csv");
    csv << "iterations,loss,cell_accuracy,board_accuracy,energy_nonincreasing\n";
    for (const EvalRow& row : run.eval) {
      csv << fmt("%zu,%.17g,%.17g,%.17g,%d\n", row.iterations, row.loss, row.cell_accuracy, row.board_accuracy,
                 energy_nonincreasing(row.mean_trace) ? 1 : 0);
      export_trace(row.mean_trace, out / fmt("trace_desk_it%zu.csv", row.iterations), TraceFormat::kCsv);
    }
  }

  const double final_loss = r.history.back().loss;
  const double drop = 1.0 - final_loss / r.initial_loss;
  const double cell = run.eval[0].cell_accuracy;
  std::string traces;
  bool all_descend = true;
  for (const EvalRow& row : run.eval) {
    const bool d = energy_nonincreasing(row.mean_trace);
    all_descend = all_descend && d;
    traces += fmt(" %zu:%s", row.iterations, d ? "nonincreasing" : "RISES");
  }
  const bool ok = drop >= kLossDrop && cell > 3.0 * kCellBaseline && all_descend && train_secs <= kTrainBudgetSeconds;
  outcome = {ok, fmt("loss %.4f -> %.4f (drop %.1f%%, need 60%%); held-out cell accuracy %.4f at L=16 (need > %.4f), "
                     "%.4f at 24, %.4f at 32; board %.2f; energy traces%s; train %.0f s, eval %.0f s",
                     r.initial_loss, final_loss, 100 * drop, cell, 3.0 * kCellBaseline, run.eval[1].cell_accuracy,
                     run.eval[2].cell_accuracy, run.eval[0].board_accuracy, traces.c_str(), train_secs, eval_secs)};
  return run;
}

Outcome uniformity(const DeskRun& run) {
  const EnergyTrace& t = run.eval[0].mean_trace;  // trained depth L = 16, averaged over held-out boards
  const TraceRow& first = t.rows.front();
  const TraceRow& last = t.rows.back();
  std::size_t widened = 0;
  std::string angles;
  for (std::size_t h = 0; h < t.heads; ++h) {
    if (last.head_angle[h] > first.head_angle[h]) ++widened;
    angles += fmt(" h%zu %.2f->%.2f", h, first.head_angle[h], last.head_angle[h]);
  }
  const bool ok = 2 * widened > t.heads && last.full_rank >= first.full_rank;
  return {ok, fmt("average angle grows in %zu/%zu heads (%s); full effective rank %.3f -> %.3f", widened, t.heads,
                  angles.c_str() + 1, first.full_rank, last.full_rank)};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& out, const DeskRun* run) {
  // Two short single-threaded trainings from the same seed.
  ModelConfig small = ModelConfig::sudoku_desk();
  small.d = 32;
  small.M = 128;
  small.L = 4;
  const auto data = generate_sudoku_set(16, 77, 26, 34);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 11;
  tc.threads = 1;
  for (int k = 0; k < 2; ++k) {
    ModelParams p = init_model(small, 11);
    TrainOutputs o;
    o.checkpoint_path = out / fmt("determinism_%d.ckpt", k);
    o.metrics_path = out / fmt("determinism_%d.jsonl", k);
    train(p, data, tc, o);
  }
  const bool same_ckpt = file_bytes(out / "determinism_0.ckpt") == file_bytes(out / "determinism_1.ckpt");
  const bool same_metrics = file_bytes(out / "determinism_0.jsonl") == file_bytes(out / "determinism_1.jsonl");

  // Checkpoint round trip: load, save again, compare bytes and tensors.
  const fs::path src = run ? run->checkpoint : out / "determinism_0.ckpt";
  const Checkpoint ck = load_checkpoint(src);
  save_checkpoint(out / "resaved.ckpt", ck.params, ck.seed);
  const bool ckpt_rt = file_bytes(src) == file_bytes(out / "resaved.ckpt") &&
                       params_bitwise_equal(load_checkpoint(out / "resaved.ckpt").params, ck.params);

  // Trace round trip in both formats.
  EnergyTrace trace;
  if (run) {
    trace = run->eval[0].mean_trace;
  } else {
    trace = run_dynamics(DynamicsConfig{}, 3);
  }
  export_trace(trace, out / "rt_trace.csv", TraceFormat::kCsv);
  export_trace(trace, out / "rt_trace.json", TraceFormat::kJson);
  const bool trace_rt = import_trace(out / "rt_trace.csv", TraceFormat::kCsv) == trace &&
                        import_trace(out / "rt_trace.json", TraceFormat::kJson) == trace;
  return {same_ckpt && same_metrics && ckpt_rt && trace_rt,
          fmt("repeat training: checkpoints %s, metrics %s; checkpoint round trip %s (%s); trace csv/json round trip %s",
              same_ckpt ? "identical" : "DIFFER", same_metrics ? "identical" : "DIFFER", ckpt_rt ? "lossless" : "LOSSY",
              run ? "desk checkpoint" : "small checkpoint", trace_rt ? "lossless" : "LOSSY")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = "acceptance_out";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: %s [--out DIR] [--only 1,2,...]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(out);
  const auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  const auto guarded = [&](int id, const char* title, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    try {
      report(id, title, f());
    } catch (const std::exception& e) {
      report(id, title, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "gradient oracles", gradient_oracles);
  guarded(2, "identity at initialization", identity_at_init);
  guarded(3, "energy descent", energy_descent);
  guarded(4, "energy bounds", energy_bounds);
  guarded(5, "diagnostics exactness", diagnostics_exact);
  guarded(6, "parameter accounting", parameter_accounting);
  guarded(7, "MCH baseline", mch_baseline);

  std::optional<DeskRun> desk;
  if (wanted(8) || wanted(9)) {
    Outcome o;
    try {
      desk = desk_sudoku(out, o);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (wanted(8)) report(8, "desk Sudoku sanity", o);
  }
  if (wanted(9)) {
    if (desk) {
      guarded(9, "uniformity dynamics", [&] { return uniformity(*desk); });
    } else {
      report(9, "uniformity dynamics", {false, "no desk checkpoint"});
    }
  }
  guarded(10, "determinism and round trips", [&] { return determinism(out, desk ? &*desk : nullptr); });

  std::size_t passed = 0;
  for (const auto& [id, o] : g_results) passed += o.pass;
  std::printf("%zu/%zu criteria passed\n", passed, g_results.size());
  return passed == g_results.size() ? 0 : 1;
}
