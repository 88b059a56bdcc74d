#include "hyperset/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

using json = nlohmann::json;

std::size_t as_count(const json& v, std::string_view key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string(key) + " expects a non-negative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

std::uint64_t as_u64(const json& v, std::string_view key) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError(std::string(key) + " expects an unsigned integer, got " + v.dump());
  }
  return v.get<std::uint64_t>();
}

double as_real(const json& v, std::string_view key) {
  if (!v.is_number()) throw ConfigError(std::string(key) + " expects a number, got " + v.dump());
  return v.get<double>();
}

bool as_bool(const json& v, std::string_view key) {
  if (!v.is_boolean()) throw ConfigError(std::string(key) + " expects true or false, got " + v.dump());
  return v.get<bool>();
}

std::string as_string(const json& v, std::string_view key) {
  if (!v.is_string()) throw ConfigError(std::string(key) + " expects a string, got " + v.dump());
  return v.get<std::string>();
}

template <typename T, typename F>
std::vector<T> as_list(const json& v, std::string_view key, F&& elem) {
  std::vector<T> out;
  if (v.is_array()) {
    for (const json& e : v) out.push_back(elem(e, key));
  } else if (v.is_string()) {
    // Comma-separated form, convenient on the command line.
    std::string s = v.get<std::string>();
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = s.find(',', start);
      const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      json parsed = json::parse(item, nullptr, false);
      if (parsed.is_discarded()) throw ConfigError(std::string(key) + ": cannot parse list item '" + item + "'");
      out.push_back(elem(parsed, key));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  } else {
    out.push_back(elem(v, key));
  }
  return out;
}

struct Field {
  std::string name;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

#define COUNT_FIELD(key, member) \
  Field{key, [](RunConfig& c, const json& v) { c.member = as_count(v, key); }, [](const RunConfig& c) { return json(c.member); }}
#define REAL_FIELD(key, member) \
  Field{key, [](RunConfig& c, const json& v) { c.member = as_real(v, key); }, [](const RunConfig& c) { return json(c.member); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run_id", [](RunConfig& c, const json& v) { c.run_id = as_string(v, "run_id"); },
            [](const RunConfig& c) { return json(c.run_id); }},
      Field{"out_dir", [](RunConfig& c, const json& v) { c.out_dir = as_string(v, "out_dir"); },
            [](const RunConfig& c) { return json(c.out_dir.string()); }},
      Field{"seed", [](RunConfig& c, const json& v) { c.seed = as_u64(v, "seed"); },
            [](const RunConfig& c) { return json(c.seed); }},
      COUNT_FIELD("threads", threads),
      Field{"model.preset", [](RunConfig& c, const json& v) { c.model = ModelConfig::preset(as_string(v, "model.preset")); },
            [](const RunConfig&) { return json(nullptr); }},
      COUNT_FIELD("model.vocab_size", model.vocab_size),
      COUNT_FIELD("model.seq_len", model.seq_len),
      COUNT_FIELD("model.d", model.d),
      COUNT_FIELD("model.heads", model.heads),
      COUNT_FIELD("model.M", model.M),
      COUNT_FIELD("model.L", model.L),
      COUNT_FIELD("model.head_dim", model.head_dim),
      Field{"model.pos_encoding",
            [](RunConfig& c, const json& v) { c.model.pos_encoding = parse_pos_encoding(as_string(v, "model.pos_encoding")); },
            [](const RunConfig& c) { return json(to_string(c.model.pos_encoding)); }},
      Field{"model.use_cls", [](RunConfig& c, const json& v) { c.model.use_cls = as_bool(v, "model.use_cls"); },
            [](const RunConfig& c) { return json(c.model.use_cls); }},
      Field{"model.attn_variant",
            [](RunConfig& c, const json& v) { c.model.attn_variant = parse_attn_variant(as_string(v, "model.attn_variant")); },
            [](const RunConfig& c) { return json(to_string(c.model.attn_variant)); }},
      Field{"model.ff_variant",
            [](RunConfig& c, const json& v) { c.model.ff_variant = parse_ff_variant(as_string(v, "model.ff_variant")); },
            [](const RunConfig& c) { return json(to_string(c.model.ff_variant)); }},
      Field{"model.condition",
            [](RunConfig& c, const json& v) { c.model.condition = parse_condition_mode(as_string(v, "model.condition")); },
            [](const RunConfig& c) { return json(to_string(c.model.condition)); }},
      Field{"model.lora_rank",
            [](RunConfig& c, const json& v) {
              const std::size_t r = v.is_null() ? 0 : as_count(v, "model.lora_rank");
              c.model.lora_rank = r == 0 ? std::nullopt : std::optional<std::size_t>(r);
            },
            [](const RunConfig& c) { return json(c.model.lora_rank.value_or(0)); }},
      REAL_FIELD("model.lora_scale", model.lora_scale),
      COUNT_FIELD("model.time_dim", model.time_dim),
      REAL_FIELD("model.init_std", model.init_std),
      COUNT_FIELD("train.epochs", train.epochs),
      COUNT_FIELD("train.batch_size", train.batch_size),
      REAL_FIELD("train.lr_max", train.lr_max),
      REAL_FIELD("train.lr_min", train.lr_min),
      REAL_FIELD("train.warmup_epochs", train.warmup_epochs),
      REAL_FIELD("train.weight_decay", train.weight_decay),
      REAL_FIELD("train.grad_clip", train.grad_clip),
      COUNT_FIELD("train.iterations", train.iterations_train),
      Field{"train.eval_multipliers",
            [](RunConfig& c, const json& v) {
              c.train.eval_iteration_multipliers = as_list<double>(v, "train.eval_multipliers", as_real);
            },
            [](const RunConfig& c) { return json(c.train.eval_iteration_multipliers); }},
      Field{"data.train", [](RunConfig& c, const json& v) { c.train_data = as_string(v, "data.train"); },
            [](const RunConfig& c) { return json(c.train_data.string()); }},
      Field{"data.eval", [](RunConfig& c, const json& v) { c.eval_data = as_string(v, "data.eval"); },
            [](const RunConfig& c) { return json(c.eval_data.string()); }},
      Field{"eval.iterations",
            [](RunConfig& c, const json& v) { c.eval_iterations = as_list<std::size_t>(v, "eval.iterations", as_count); },
            [](const RunConfig& c) { return json(c.eval_iterations); }},
      COUNT_FIELD("dynamics.tokens", dynamics.tokens),
      COUNT_FIELD("dynamics.d", dynamics.d),
      COUNT_FIELD("dynamics.heads", dynamics.heads),
      COUNT_FIELD("dynamics.M", dynamics.M),
      COUNT_FIELD("dynamics.steps", dynamics.steps),
      REAL_FIELD("dynamics.alpha", dynamics.alpha),
      REAL_FIELD("dynamics.gamma", dynamics.gamma),
      COUNT_FIELD("dynamics.trials", dynamics.trials),
      Field{"dynamics.bases",
            [](RunConfig& c, const json& v) {
              const std::string b = as_string(v, "dynamics.bases");
              if (b != "orthogonal" && b != "gaussian") throw ConfigError("dynamics.bases must be orthogonal or gaussian");
              c.dynamics.bases = b;
            },
            [](const RunConfig& c) { return json(c.dynamics.bases); }},
  };
  return table;
}

#undef COUNT_FIELD
#undef REAL_FIELD

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  if (const char* env = std::getenv("HYPERSET_OUT"); env && *env) c.out_dir = env;
  return c;
}

void RunConfig::set(std::string_view key, const nlohmann::json& value) {
  for (const Field& f : fields()) {
    if (f.name == key) {
      try {
        f.set(*this, value);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::set_from_string(std::string_view key, std::string_view value) {
  json parsed = json::parse(value, nullptr, false);
  set(key, parsed.is_discarded() ? json(std::string(value)) : parsed);
}

void RunConfig::merge_file(const std::string& source) {
  if (!std::filesystem::exists(source)) {
    if (source == "sudoku_paper" || source == "sudoku_desk") {
      model = ModelConfig::preset(source);
      return;
    }
    throw IoError("config file not found: " + source);
  }
  std::ifstream in(source, std::ios::binary);
  if (!in) throw IoError("cannot read config " + source);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ConfigError(source + ": expected a flat JSON object");
  // A preset replaces the whole model section, so it goes first.
  if (doc.contains("model.preset")) set("model.preset", doc.at("model.preset"));
  for (const auto& [key, value] : doc.items()) {
    if (key == "model.preset") continue;
    if (value.is_object()) throw ConfigError(source + ": nested objects are not allowed (key '" + key + "')");
    set(key, value);
  }
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.name);
  return out;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const Field& f : fields()) {
    if (f.name == "model.preset") continue;
    j[f.name] = f.get(*this);
  }
  return j;
}

}  // namespace hyperset
