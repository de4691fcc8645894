#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "chamae/model.hpp"

namespace chamae {

// Container: "CHMCKPT1" | u64 manifest bytes | JSON manifest | tensor blobs.
// The manifest lists name, shape, dtype and byte offset (from the start of
// the blob section) of every tensor, plus the model config, its hash, the
// known channel ids and their standardization statistics. Blobs are f32 LE.

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& params);
ModelParams<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace chamae
