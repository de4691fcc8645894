#include "chamae/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "chamae/harness/config.hpp"

namespace chamae {

namespace {

constexpr char kMagic[8] = {'C', 'H', 'M', 'C', 'K', 'P', 'T', '1'};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& params) {
  Json tensors = Json::array();
  std::size_t offset = 0;
  for (ParamId id = 0; id < params.count(); ++id) {
    const auto& t = params.tensor(id);
    tensors.push_back({{"name", params.name(id)}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += 4 * t.size();
  }
  Json norms = Json::array();
  for (const auto& [id, n] : params.channel_norms()) norms.push_back({{"id", id}, {"mean", n.mean}, {"std", n.stddev}});
  Json model = params.config();
  const Json manifest{{"format", 1},
                      {"model", model},
                      {"config_hash", config_hash(model)},
                      {"known_channels", params.known_channels()},
                      {"channel_norms", norms},
                      {"tensors", tensors},
                      {"blob_bytes", offset}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  for (int s = 0; s < 64; s += 8) out.push_back(static_cast<std::uint8_t>(len >> s));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : params.tensors()) {
    for (float f : t.storage()) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(bits >> s));
    }
  }
  return out;
}

ModelParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw std::runtime_error("not a checkpoint");
  std::uint64_t len = 0;
  for (int k = 0; k < 8; ++k) len |= static_cast<std::uint64_t>(bytes[8 + k]) << (8 * k);
  if (len > bytes.size() - 16) throw std::runtime_error("checkpoint manifest truncated");
  const Json manifest = Json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  const std::size_t blob = 16 + len;

  ModelConfig cfg;
  from_json(manifest.at("model"), cfg);
  if (manifest.at("config_hash").get<std::string>() != config_hash(Json(cfg))) {
    throw std::runtime_error("checkpoint config hash mismatch");
  }
  ModelParams<float> params(cfg, manifest.at("known_channels").get<std::vector<int>>());
  for (const auto& n : manifest.at("channel_norms")) {
    params.channel_norms()[n.at("id").get<int>()] = {n.at("mean").get<double>(), n.at("std").get<double>()};
  }
  const auto& entries = manifest.at("tensors");
  if (entries.size() != params.count()) throw std::runtime_error("checkpoint tensor count does not match its config");
  for (ParamId id = 0; id < params.count(); ++id) {
    const auto& e = entries[id];
    auto& t = params.tensor(id);
    if (e.at("name").get<std::string>() != params.name(id) || e.at("shape").get<Shape>() != t.shape() ||
        e.at("dtype").get<std::string>() != "f32") {
      throw std::runtime_error("checkpoint entry " + std::to_string(id) + " does not match parameter " + params.name(id));
    }
    const std::size_t at = blob + e.at("offset").get<std::size_t>();
    if (at + 4 * t.size() > bytes.size()) throw std::runtime_error("checkpoint blob truncated at " + params.name(id));
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[at + 4 * k + b]) << (8 * b);
      t[k] = std::bit_cast<float>(bits);
    }
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace chamae
