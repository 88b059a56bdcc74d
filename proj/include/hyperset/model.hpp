#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyperset/autodiff.hpp"
#include "hyperset/block.hpp"
#include "hyperset/diagnostics.hpp"
#include "hyperset/energy.hpp"
#include "hyperset/tensor.hpp"

namespace hyperset {

enum class PosEncoding { kLearnable, kSinusoidal };

std::string_view to_string(PosEncoding p);
PosEncoding parse_pos_encoding(std::string_view name);

struct ModelConfig {
  std::size_t vocab_size = 10;
  std::size_t seq_len = 81;
  std::size_t d = 128;
  std::size_t heads = 4;
  std::size_t M = 512;
  std::size_t L = 16;
  std::size_t head_dim = 10;
  PosEncoding pos_encoding = PosEncoding::kLearnable;
  bool use_cls = false;
  AttnVariant attn_variant = AttnVariant::kBiSoftmax;
  FfVariant ff_variant = FfVariant::kRelu;
  ConditionMode condition = ConditionMode::kInitialTokens;
  std::optional<std::size_t> lora_rank;
  double lora_scale = kDefaultLoraScale;
  std::size_t time_dim = kTimeEmbedDim;
  double init_std = 0.02;

  // d = 768, H = 12, M = 4d, L = 24, learnable positions over 81 cells.
  static ModelConfig sudoku_paper();
  // d = 128, H = 4, M = 4d, L = 16.
  static ModelConfig sudoku_desk();
  // "sudoku_paper" or "sudoku_desk".
  static ModelConfig preset(std::string_view name);

  EnergyConfig energy_config() const;
  BlockConfig block_config() const;
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelParams {
  ModelConfig cfg;
  Tensor token_table;  // vocab_size x d
  Tensor positions;    // seq_len x d; fixed sinusoids unless learnable
  std::optional<Tensor> cls;
  HyperSetParams block;
  Tensor head;  // d x head_dim, no bias

  struct Named {
    std::string name;
    Tensor* tensor;
  };
  // Learnable tensors in a fixed order; the order defines checkpoints and optimizer state.
  std::vector<Named> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> parts;
  std::size_t total = 0;
};

ParamBreakdown param_count(const ModelConfig& cfg);
// d*r + r*k per adapted d x k matrix, per iteration.
std::size_t lora_param_count(std::size_t d, std::size_t k, std::size_t r, std::size_t iterations);

// Interleaved sin/cos table, seq_len x d, base 10000.
Tensor sinusoidal_positions(std::size_t seq_len, std::size_t d);

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

struct ModelVars {
  Var token_table;
  Var positions;
  std::optional<Var> cls;
  Var head;
  BlockVars block;
};

ModelVars bind_model(Tape& tape, const ModelParams& params, bool requires_grad);
// Vars in the order of ModelParams::named().
std::vector<Var> learnable_vars(const ModelVars& v, const ModelConfig& cfg);

// d x N, or d x (N+1) with the class token in column 0.
Var embed(const ModelVars& v, const ModelConfig& cfg, std::span<const std::size_t> tokens);
Tensor embed(const ModelParams& params, std::span<const std::size_t> tokens);

// Per-token logits (N x head_dim) of the final state; the class token is excluded.
Var readout(const ModelVars& v, const ModelConfig& cfg, Var X);
// Embed, unroll and read out on one tape; used for training.
Var forward_logits(const ModelVars& v, const ModelParams& params, std::span<const std::size_t> tokens,
                   std::size_t iterations);

struct ModelOutput {
  Tensor logits;
  EnergyTrace trace;
};

ModelOutput forward_model(const ModelParams& params, std::span<const std::size_t> tokens, std::size_t iterations,
                          bool record_trace = true);

}  // namespace hyperset
