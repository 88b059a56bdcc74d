#include "hyperset/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

constexpr const char* kFormat = "hyperset-checkpoint";
constexpr int kVersion = 1;

void write_le(std::ostream& out, std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void read_le(std::istream& in, std::span<double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("checkpoint data is truncated");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::uint64_t seed) {
  nlohmann::ordered_json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["seed"] = seed;
  header["config"] = params.cfg.to_json();
  header["tensors"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  const auto named = params.named();
  for (const auto& [name, tensor] : named) {
    header["tensors"].push_back({{"name", name}, {"shape", tensor->shape()}, {"offset", offset}});
    offset += tensor->numel() * 8;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto& [name, tensor] : named) write_le(out, tensor->data());
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != kFormat || header.value("version", 0) != kVersion) {
    throw IoError(path.string() + ": not a version " + std::to_string(kVersion) + " checkpoint");
  }
  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  // Build the parameter layout from the config, then fill it from the file.
  ck.params = init_model(ModelConfig::from_json(header.at("config")), 0);
  auto named = ck.params.named();
  const auto& entries = header.at("tensors");
  if (entries.size() != named.size()) {
    throw IoError(path.string() + ": checkpoint holds " + std::to_string(entries.size()) + " tensors, config expects " +
                  std::to_string(named.size()));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& e = entries[i];
    const auto shape = e.at("shape").get<Shape>();
    if (e.at("name").get<std::string>() != named[i].name || shape != named[i].tensor->shape() ||
        e.at("offset").get<std::size_t>() != offset) {
      throw IoError(path.string() + ": unexpected tensor entry '" + e.at("name").get<std::string>() + "'");
    }
    read_le(in, named[i].tensor->data());
    offset += named[i].tensor->numel() * 8;
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes after tensors");
  return ck;
}

bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  const auto na = a.named();
  const auto nb = b.named();
  if (na.size() != nb.size() || !(a.cfg == b.cfg)) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || na[i].second->shape() != nb[i].second->shape()) return false;
    const auto da = na[i].second->data();
    const auto db = nb[i].second->data();
    if (std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace hyperset
