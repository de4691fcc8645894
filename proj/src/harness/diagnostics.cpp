#include "chamae/harness/diagnostics.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <zlib.h>

#include "chamae/decoder.hpp"
#include "chamae/harness/train.hpp"
#include "chamae/tokenizer.hpp"

namespace chamae {

void write_attention_csv(std::ostream& out, const AttentionMap& map) {
  const std::size_t c = map.channel_ids.size();
  out << "query_channel,key,weight\n";
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < map.full.cols(); ++j) {
      out << map.channel_ids[i] << ',';
      if (j < c) out << map.channel_ids[j];
      else if (j == c) out << "cls";
      else out << "mem" << (j - c - 1);
      out << ',' << map.full(i, j) << '\n';
    }
  }
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> to_gray(const MultiChannelImage& img, std::size_t ch, float lo, float hi) {
  const std::size_t plane = img.height * img.width;
  std::vector<std::uint8_t> out(plane);
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  for (std::size_t k = 0; k < plane; ++k) {
    const float v = (img.pixels[ch * plane + k] - lo) * scale;
    out[k] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f) + 0.5f);
  }
  return out;
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("png: pixel count does not match size");
  std::vector<std::uint8_t> raw;
  raw.reserve((width + 1) * height);
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), pixels.begin() + static_cast<std::ptrdiff_t>(y * width),
               pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * width));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size())) != Z_OK) {
    throw std::runtime_error("png: compression failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit gray, deflate, adaptive filter, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

ReconDump recon_dump(const ModelParams<float>& params, const MultiChannelImage& image, const MaskPlan& plan,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const ModelConfig& cfg = params.config();
  const MultiChannelImage x = prepare_image(params, image);

  Forward<float> fw(params, Forward<float>::Grad::kNone);
  TokenSequence<float> tokens = patchify(fw, x);
  EncodedSequence<float> enc = encode(fw, tokens, plan);
  ReconstructionOutput<float> rec = decode(fw, enc, plan);
  const Tensor<float>& preds = fw.graph().value(rec.patch_pixels);
  const Tensor<float> target = extract_patches<float>(x, cfg.patch);

  ReconDump dump{plan, pixel_loss_value(target.cast<double>(), preds.cast<double>(), plan), {}};

  const MultiChannelImage recon = reconstruct_image(preds, plan, x.height, x.width, cfg.patch, x.channel_ids,
                                                    ReconstructionMode::kPassthroughVisible, &x);
  Tensor<float> masked_patches = target;
  for (std::size_t slot : plan.masked_slots()) std::fill(masked_patches.row(slot).begin(), masked_patches.row(slot).end(), 0.0f);
  const MultiChannelImage masked = unpatchify(masked_patches, x.height, x.width, cfg.patch, x.channel_ids);

  for (std::size_t ch = 0; ch < x.channels(); ++ch) {
    const std::size_t plane = x.height * x.width;
    const auto first = x.pixels.storage().begin() + static_cast<std::ptrdiff_t>(ch * plane);
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(plane));
    const std::string stem = "ch" + std::to_string(x.channel_ids[ch]);
    for (const auto& [suffix, img] : {std::pair{"input", &x}, std::pair{"masked", &masked}, std::pair{"recon", &recon}}) {
      const auto path = dir / (stem + "_" + suffix + ".png");
      write_png_gray(path, x.width, x.height, to_gray(*img, ch, *lo, *hi));
      dump.files.push_back(path);
    }
  }

  const auto csv = dir / "slots.csv";
  std::ofstream f(csv);
  f << "channel,position,masked,mse\n";
  const std::size_t n = plan.n;
  for (std::size_t ch = 0; ch < plan.c; ++ch) {
    for (std::size_t pos = 0; pos < n; ++pos) {
      const std::size_t slot = ch * n + pos;
      double se = 0.0;
      for (std::size_t k = 0; k < target.cols(); ++k) {
        const double d = double(preds(slot, k)) - target(slot, k);
        se += d * d;
      }
      f << x.channel_ids[ch] << ',' << pos << ',' << int(plan.masked(pos, ch)) << ',' << se / double(target.cols()) << '\n';
    }
  }
  dump.files.push_back(csv);
  return dump;
}

}  // namespace chamae
