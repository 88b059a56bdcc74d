#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "hyperset/checkpoint.hpp"
#include "hyperset/errors.hpp"
#include "hyperset/training.hpp"
#include "test_util.hpp"

using namespace hyperset;
using hyperset::testing::random_tensor;

namespace {

const std::string kPuzzle =
    "530070000600195000098000060800060003400803001700020006060000280000419005000080079";
const std::string kSolution =
    "534678912672195348198342567859761423426853791713924856961537284287419635345286179";

SudokuSample known_board() { return parse_sudoku_line(kPuzzle + "," + kSolution, 1); }

ModelConfig small_model() {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.M = 32;
  c.L = 2;
  c.time_dim = 16;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "hyperset_unit" / name;
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Training, UniformLogitsGiveLogTen) {
  const Tensor logits(Shape{81, 10}, 0.25);
  EXPECT_NEAR(masked_cross_entropy(logits, known_board()), std::log(10.0), 1e-12);
}

TEST(Training, CrossEntropyMatchesCellLoop) {
  const SudokuSample s = known_board();
  const Tensor logits = random_tensor({81, 10}, 3, 2.0);
  double total = 0.0;
  std::size_t unknown = 0;
  for (std::size_t c = 0; c < 81; ++c) {
    if (s.given[c]) continue;
    double z = 0.0;
    for (std::size_t k = 0; k < 10; ++k) z += std::exp(logits(c, k));
    total += std::log(z) - logits(c, s.solution[c]);
    ++unknown;
  }
  EXPECT_NEAR(masked_cross_entropy(logits, s), total / double(unknown), 1e-12);
  Tape tape;
  EXPECT_NEAR(masked_cross_entropy(tape.constant(logits), s).value().item(), total / double(unknown), 1e-12);
}

TEST(Training, GivenCellsGetExactlyZeroGradient) {
  const SudokuSample s = known_board();
  Tape tape;
  const Var logits = tape.leaf(random_tensor({81, 10}, 4), true);
  tape.backward(masked_cross_entropy(logits, s));
  const Tensor g = tape.grad(logits);
  for (std::size_t c = 0; c < 81; ++c) {
    for (std::size_t k = 0; k < 10; ++k) {
      if (s.given[c]) EXPECT_EQ(g(c, k), 0.0);
    }
  }
}

TEST(Training, AllGivenBoardIsEmpty) {
  SudokuSample s = known_board();
  s.puzzle = s.solution;
  s.given.fill(true);
  bool empty = false;
  EXPECT_EQ(masked_cross_entropy(Tensor(Shape{81, 10}), s, &empty), 0.0);
  EXPECT_TRUE(empty);
}

TEST(Training, AdamWFirstStepAndDecay) {
  Tensor p = Tensor::vector({0.0, 1.0});
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor::vector({3.0, 0.0})};
  const bool decay[] = {true};
  OptimizerState st;
  adamw_step(params, grads, st, 0.1, 0.1, decay);
  // Bias-corrected first step moves by lr * sign(g); the zero-gradient entry only decays.
  EXPECT_NEAR(p[0], -0.1, 1e-8);
  EXPECT_NEAR(p[1], 0.99, 1e-15);
  EXPECT_EQ(st.step, 1u);
}

TEST(Training, AdamWSkipsDecayWhenDisabled) {
  Tensor p = Tensor::vector({2.0});
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor::vector({0.0})};
  const bool decay[] = {false};
  OptimizerState st;
  adamw_step(params, grads, st, 0.1, 0.1, decay);
  EXPECT_EQ(p[0], 2.0);
}

TEST(Training, LearningRateSchedule) {
  EXPECT_EQ(lr_schedule(0, 100, 10, 1e-3, 1e-5), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(5, 100, 10, 1e-3, 1e-5), 5e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(10, 100, 10, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(lr_schedule(55, 100, 10, 1e-3, 1e-5), 0.5 * (1e-3 + 1e-5), 1e-15);
  EXPECT_DOUBLE_EQ(lr_schedule(100, 100, 10, 1e-3, 1e-5), 1e-5);
  double prev = 1.0;
  for (std::size_t s = 10; s <= 100; ++s) {
    const double lr = lr_schedule(s, 100, 10, 1e-3, 1e-5);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Training, ClippingBoundsGlobalNorm) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> grads{random_tensor({3, 4}, rng, 10.0), random_tensor({5}, rng, 0.01)};
    const double before = clip_grad_norm(grads, 1.0);
    double sq = 0.0;
    for (const Tensor& g : grads)
      for (double v : g.data()) sq += v * v;
    EXPECT_LE(std::sqrt(sq), 1.0 + 1e-9);
    if (before <= 1.0) EXPECT_NEAR(std::sqrt(sq), before, 1e-15);
  }
}

TEST(Training, ScoreBoardDefinition) {
  const SudokuSample s = known_board();
  Tensor logits(Shape{81, 10});
  for (std::size_t c = 0; c < 81; ++c) logits(c, s.solution[c]) = 1.0;
  CellScore sc = score_board(logits, s);
  EXPECT_EQ(sc.unknown, 51u);
  EXPECT_EQ(sc.correct, 51u);
  EXPECT_TRUE(sc.solved);
  // A wrong guess at a given cell does not count; one at a blank cell does.
  logits(0, s.solution[0]) = 0.0;
  logits(0, 1) = 2.0;
  EXPECT_TRUE(score_board(logits, s).solved);
  logits(2, s.solution[2]) = 0.0;
  logits(2, 9) = 2.0;
  sc = score_board(logits, s);
  EXPECT_EQ(sc.correct, 50u);
  EXPECT_FALSE(sc.solved);
}

TEST(Training, SampleGradientMatchesFiniteDifferences) {
  ModelConfig c = small_model();
  c.L = 2;
  ModelParams p = init_model(c, 5);
  std::mt19937_64 rng(6);
  p.block.modnet.out = random_tensor(p.block.modnet.out.shape(), rng, 0.05);
  const SudokuSample s = known_board();
  const SampleGrad g = sample_gradient(p, s, 2);
  auto named = p.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor& t = *named[i].tensor;
    // Spot-check a few coordinates per tensor.
    for (std::size_t e = 0; e < t.numel(); e += 1 + t.numel() / 3) {
      const double keep = t[e];
      const double h = 1e-5;
      t[e] = keep + h;
      const double up = masked_cross_entropy(forward_model(p, s.tokens(), 2, false).logits, s);
      t[e] = keep - h;
      const double down = masked_cross_entropy(forward_model(p, s.tokens(), 2, false).logits, s);
      t[e] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(g.grads[i][e], fd, 1e-6 + 1e-4 * std::abs(fd)) << named[i].name << "[" << e << "]";
    }
  }
}

TEST(Training, ZeroLearningRateLeavesParametersUnchanged) {
  ModelParams p = init_model(small_model(), 1);
  const ModelParams before = p;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  tc.lr_max = 0.0;
  tc.lr_min = 0.0;
  tc.weight_decay = 0.0;
  const auto data = generate_sudoku_set(4, 2, 30, 34);
  train(p, data, tc);
  EXPECT_TRUE(params_bitwise_equal(p, before));
}

TEST(Training, OverfitsOneBoard) {
  ModelConfig c = ModelConfig::sudoku_desk();
  c.d = 64;
  c.M = 256;
  c.L = 8;
  ModelParams p = init_model(c, 0);
  const std::vector<SudokuSample> data{known_board()};
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 1;
  tc.lr_max = 3e-3;
  tc.lr_min = 3e-3;
  tc.warmup_epochs = 0.0;
  tc.weight_decay = 0.0;
  const TrainResult r = train(p, data, tc);
  ASSERT_EQ(r.history.size(), 50u);
  EXPECT_LT(r.history.back().loss, 0.5 * r.initial_loss);
  double best = r.history.front().loss;
  for (const EpochMetrics& m : r.history) best = std::min(best, m.loss);
  EXPECT_LT(best, 0.25 * r.initial_loss);
}

TEST(Training, SameSeedSameCheckpoint) {
  const auto data = generate_sudoku_set(6, 8, 30, 34);
  const auto dir = temp_dir("determinism");
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  tc.seed = 4;
  for (int run = 0; run < 2; ++run) {
    ModelParams p = init_model(small_model(), 4);
    TrainOutputs out;
    out.checkpoint_path = dir / ("ck" + std::to_string(run) + ".ckpt");
    out.metrics_path = dir / ("m" + std::to_string(run) + ".jsonl");
    train(p, data, tc, out);
  }
  EXPECT_TRUE(params_bitwise_equal(load_checkpoint(dir / "ck0.ckpt").params, load_checkpoint(dir / "ck1.ckpt").params));
  std::ifstream a(dir / "m0.jsonl"), b(dir / "m1.jsonl");
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(std::count(sa.begin(), sa.end(), '\n'), 2);
}

TEST(Training, ThreadCountDoesNotChangeResult) {
  const auto data = generate_sudoku_set(4, 9, 30, 34);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  ModelParams a = init_model(small_model(), 2), b = init_model(small_model(), 2);
  train(a, data, tc);
  tc.threads = 3;
  train(b, data, tc);
  EXPECT_TRUE(params_bitwise_equal(a, b));
}

TEST(Training, EvaluateReportsEachDepth) {
  const ModelParams p = init_model(small_model(), 3);
  const auto data = generate_sudoku_set(3, 10, 30, 34);
  const std::vector<std::size_t> iters = eval_iterations(16, std::vector<double>{1.0, 1.5, 2.0});
  EXPECT_EQ(iters, (std::vector<std::size_t>{16, 24, 32}));
  const auto rows = evaluate(p, data, iters);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(rows[k].iterations, iters[k]);
    EXPECT_EQ(rows[k].mean_trace.rows.size(), iters[k] + 1);
    EXPECT_GE(rows[k].cell_accuracy, 0.0);
    EXPECT_LE(rows[k].cell_accuracy, 1.0);
  }
}

TEST(Training, ConfigValidation) {
  TrainConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.lr_min = 1.0;
  EXPECT_THROW(tc.validate(), ConfigError);
}
