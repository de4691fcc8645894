#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

#include "chamae/encoder.hpp"
#include "chamae/masking.hpp"

namespace chamae {

/// Long-format CSV: query_channel,key,weight. Keys are channel ids, "cls"
/// and "mem<i>".
void write_attention_csv(std::ostream& out, const AttentionMap& map);

/// 8-bit grayscale PNG.
void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels);

struct ReconDump {
  MaskPlan plan;
  double pixel_loss = 0.0;  // L_pixel over masked slots
  std::vector<std::filesystem::path> files;
};

/// Masks `image`, reconstructs it and writes, per channel, the input, the
/// masked input and the reconstruction (visible patches passed through) as
/// PNGs, plus slots.csv with per-slot MSE and mask flag.
ReconDump recon_dump(const ModelParams<float>& params, const MultiChannelImage& image, const MaskPlan& plan,
                     const std::filesystem::path& dir);

}  // namespace chamae
