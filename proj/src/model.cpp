#include "hyperset/model.hpp"

#include <cmath>
#include <random>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

Tensor gaussian(Shape shape, double std, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::vector<std::size_t> checked_ids(std::span<const std::size_t> tokens, std::size_t vocab) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= vocab) {
      throw ContractError("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                          " is outside the vocabulary of " + std::to_string(vocab));
    }
  }
  return {tokens.begin(), tokens.end()};
}

}  // namespace

std::string_view to_string(PosEncoding p) { return p == PosEncoding::kLearnable ? "learnable" : "sinusoidal"; }

PosEncoding parse_pos_encoding(std::string_view name) {
  if (name == "learnable") return PosEncoding::kLearnable;
  if (name == "sinusoidal") return PosEncoding::kSinusoidal;
  throw ConfigError("unknown positional encoding '" + std::string(name) + "'");
}

ModelConfig ModelConfig::sudoku_paper() {
  ModelConfig c;
  c.d = 768;
  c.heads = 12;
  c.M = 4 * c.d;
  c.L = 24;
  return c;
}

ModelConfig ModelConfig::sudoku_desk() {
  ModelConfig c;
  c.d = 128;
  c.heads = 4;
  c.M = 4 * c.d;
  c.L = 16;
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "sudoku_paper") return sudoku_paper();
  if (name == "sudoku_desk") return sudoku_desk();
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

EnergyConfig ModelConfig::energy_config() const {
  EnergyConfig e = EnergyConfig::make(d, heads, M);
  e.attn_variant = attn_variant;
  e.ff_variant = ff_variant;
  return e;
}

BlockConfig ModelConfig::block_config() const {
  BlockConfig b;
  b.energy = energy_config();
  b.L = L;
  b.lora_rank = lora_rank;
  b.lora_scale = lora_scale;
  b.condition = condition;
  return b;
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (seq_len < 1) throw ConfigError("seq_len must be at least 1");
  if (head_dim < 1) throw ConfigError("head_dim must be at least 1");
  if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("time_dim must be even and positive");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  block_config().validate();
  if (lora_rank && *lora_rank > std::min(d, M)) {
    throw ConfigError("LoRA rank " + std::to_string(*lora_rank) + " exceeds min(d, M)");
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["seq_len"] = seq_len;
  j["d"] = d;
  j["heads"] = heads;
  j["M"] = M;
  j["L"] = L;
  j["head_dim"] = head_dim;
  j["pos_encoding"] = to_string(pos_encoding);
  j["use_cls"] = use_cls;
  j["attn_variant"] = to_string(attn_variant);
  j["ff_variant"] = to_string(ff_variant);
  j["condition"] = to_string(condition);
  j["lora_rank"] = lora_rank ? nlohmann::ordered_json(*lora_rank) : nlohmann::ordered_json(nullptr);
  j["lora_scale"] = lora_scale;
  j["time_dim"] = time_dim;
  j["init_std"] = init_std;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.M = j.at("M").get<std::size_t>();
  c.L = j.at("L").get<std::size_t>();
  c.head_dim = j.at("head_dim").get<std::size_t>();
  c.pos_encoding = parse_pos_encoding(j.at("pos_encoding").get<std::string>());
  c.use_cls = j.at("use_cls").get<bool>();
  c.attn_variant = parse_attn_variant(j.at("attn_variant").get<std::string>());
  c.ff_variant = parse_ff_variant(j.at("ff_variant").get<std::string>());
  c.condition = parse_condition_mode(j.at("condition").get<std::string>());
  if (!j.at("lora_rank").is_null()) c.lora_rank = j.at("lora_rank").get<std::size_t>();
  c.lora_scale = j.at("lora_scale").get<double>();
  c.time_dim = j.at("time_dim").get<std::size_t>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

std::vector<ModelParams::Named> ModelParams::named() {
  std::vector<Named> out;
  out.push_back({"token_table", &token_table});
  if (cfg.pos_encoding == PosEncoding::kLearnable) out.push_back({"positions", &positions});
  if (cls) out.push_back({"cls", &*cls});
  out.push_back({"block.W", &block.bases.W});
  out.push_back({"block.D", &block.bases.D});
  out.push_back({"block.attn_gain", &block.attn_gain});
  out.push_back({"block.ff_gain", &block.ff_gain});
  out.push_back({"block.modnet.time_proj", &block.modnet.time_proj});
  out.push_back({"block.modnet.hidden", &block.modnet.hidden});
  out.push_back({"block.modnet.out", &block.modnet.out});
  if (block.lora) {
    for (std::size_t t = 0; t < block.lora->W.size(); ++t) {
      out.push_back({"block.lora.W." + std::to_string(t) + ".A", &block.lora->W[t].A});
      out.push_back({"block.lora.W." + std::to_string(t) + ".B", &block.lora->W[t].B});
    }
    for (std::size_t t = 0; t < block.lora->D.size(); ++t) {
      out.push_back({"block.lora.D." + std::to_string(t) + ".A", &block.lora->D[t].A});
      out.push_back({"block.lora.D." + std::to_string(t) + ".B", &block.lora->D[t].B});
    }
  }
  out.push_back({"head", &head});
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const Named& n : const_cast<ModelParams*>(this)->named()) out.emplace_back(n.name, n.tensor);
  return out;
}

std::size_t lora_param_count(std::size_t d, std::size_t k, std::size_t r, std::size_t iterations) {
  return iterations * (d * r + r * k);
}

ParamBreakdown param_count(const ModelConfig& cfg) {
  cfg.validate();
  ParamBreakdown b;
  auto add_part = [&](std::string name, std::size_t n) {
    b.parts.emplace_back(std::move(name), n);
    b.total += n;
  };
  const std::size_t d = cfg.d;
  add_part("W", d * d);
  add_part("D", d * cfg.M);
  add_part("modnet.time_proj", cfg.time_dim * d);
  add_part("modnet.hidden", d * d);
  add_part("modnet.out", d * 2 * d);
  add_part("token_table", cfg.vocab_size * d);
  if (cfg.pos_encoding == PosEncoding::kLearnable) add_part("positions", cfg.seq_len * d);
  if (cfg.use_cls) add_part("cls", d);
  add_part("head", d * cfg.head_dim);
  add_part("attn_gain", d);
  add_part("ff_gain", cfg.M);
  if (cfg.lora_rank) {
    add_part("lora", lora_param_count(d, d, *cfg.lora_rank, cfg.L) + lora_param_count(d, cfg.M, *cfg.lora_rank, cfg.L));
  }
  return b;
}

Tensor sinusoidal_positions(std::size_t seq_len, std::size_t d) {
  Tensor out(Shape{seq_len, d});
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      out(pos, i) = std::sin(angle);
      if (i + 1 < d) out(pos, i + 1) = std::cos(angle);
    }
  }
  return out;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double s = cfg.init_std;
  const std::size_t d = cfg.d;
  ModelParams p;
  p.cfg = cfg;
  p.token_table = gaussian(Shape{cfg.vocab_size, d}, s, rng);
  p.positions = cfg.pos_encoding == PosEncoding::kLearnable ? gaussian(Shape{cfg.seq_len, d}, s, rng)
                                                           : sinusoidal_positions(cfg.seq_len, d);
  if (cfg.use_cls) p.cls = gaussian(Shape{d, 1}, s, rng);
  const BlockConfig bc = cfg.block_config();
  Bases bases{gaussian(Shape{d, d}, s, rng), gaussian(Shape{d, cfg.M}, s, rng)};
  p.block = make_block_params(std::move(bases), bc);
  p.block.modnet.time_dim = cfg.time_dim;
  p.block.modnet.time_proj = gaussian(Shape{d, cfg.time_dim}, s, rng);
  p.block.modnet.hidden = gaussian(Shape{d, d}, s, rng);
  // Final layer stays zero so the untrained block is the identity.
  if (cfg.lora_rank) {
    const std::size_t r = *cfg.lora_rank;
    LoraSet lora;
    lora.scale = cfg.lora_scale;
    for (std::size_t t = 0; t < cfg.L; ++t) {
      lora.W.push_back({gaussian(Shape{d, r}, s, rng), gaussian(Shape{r, d}, s, rng)});
    }
    for (std::size_t t = 0; t < cfg.L; ++t) {
      lora.D.push_back({gaussian(Shape{d, r}, s, rng), gaussian(Shape{r, cfg.M}, s, rng)});
    }
    p.block.lora = std::move(lora);
  }
  p.head = gaussian(Shape{d, cfg.head_dim}, s, rng);
  return p;
}

ModelVars bind_model(Tape& tape, const ModelParams& params, bool requires_grad) {
  const bool learnable_pos = params.cfg.pos_encoding == PosEncoding::kLearnable;
  ModelVars v;
  v.token_table = tape.leaf(params.token_table, requires_grad);
  v.positions = tape.leaf(params.positions, requires_grad && learnable_pos);
  if (params.cls) v.cls = tape.leaf(*params.cls, requires_grad);
  v.block = bind_block(tape, params.block, requires_grad);
  v.head = tape.leaf(params.head, requires_grad);
  return v;
}

std::vector<Var> learnable_vars(const ModelVars& v, const ModelConfig& cfg) {
  std::vector<Var> out{v.token_table};
  if (cfg.pos_encoding == PosEncoding::kLearnable) out.push_back(v.positions);
  if (v.cls) out.push_back(*v.cls);
  const BlockVars& b = v.block;
  out.insert(out.end(), {b.W, b.D, b.attn_gain, b.ff_gain, b.time_proj, b.hidden, b.out});
  for (std::size_t t = 0; t < b.lora_WA.size(); ++t) out.insert(out.end(), {b.lora_WA[t], b.lora_WB[t]});
  for (std::size_t t = 0; t < b.lora_DA.size(); ++t) out.insert(out.end(), {b.lora_DA[t], b.lora_DB[t]});
  out.push_back(v.head);
  return out;
}

Var embed(const ModelVars& v, const ModelConfig& cfg, std::span<const std::size_t> tokens) {
  if (tokens.size() != cfg.seq_len) {
    throw DimensionError("expected " + std::to_string(cfg.seq_len) + " tokens, got " + std::to_string(tokens.size()));
  }
  const std::vector<std::size_t> ids = checked_ids(tokens, cfg.vocab_size);
  Var rows = add(gather_rows(v.token_table, ids), v.positions);
  Var X = transpose(rows);
  if (cfg.use_cls) X = concat_cols({*v.cls, X});
  return X;
}

Tensor embed(const ModelParams& params, std::span<const std::size_t> tokens) {
  Tape tape;
  return embed(bind_model(tape, params, false), params.cfg, tokens).value();
}

Var readout(const ModelVars& v, const ModelConfig& cfg, Var X) {
  if (cfg.use_cls) X = slice_cols(X, 1, X.value().cols());
  return matmul(X, v.head, true, false);
}

Var forward_logits(const ModelVars& v, const ModelParams& params, std::span<const std::size_t> tokens,
                   std::size_t iterations) {
  Var X0 = embed(v, params.cfg, tokens);
  Var X = forward_unroll(X0, v.block, params.cfg.block_config(), iterations, std::nullopt, params.cfg.time_dim);
  return readout(v, params.cfg, X);
}

ModelOutput forward_model(const ModelParams& params, std::span<const std::size_t> tokens, std::size_t iterations,
                          bool record_trace) {
  if (iterations < 1) throw ContractError("forward_model needs at least one iteration");
  const Tensor X0 = embed(params, tokens);
  UnrollOptions options;
  options.record_trace = record_trace;
  UnrollResult r = forward_unroll(X0, params.block, params.cfg.block_config(), iterations, options);
  Tape tape;
  ModelVars v;
  v.head = tape.constant(params.head);
  ModelOutput out;
  out.logits = readout(v, params.cfg, tape.constant(r.X)).value();
  out.trace = std::move(r.trace);
  return out;
}

}  // namespace hyperset
