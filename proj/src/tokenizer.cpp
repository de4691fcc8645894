#include "chamae/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace chamae {

MultiChannelImage::MultiChannelImage(std::size_t h, std::size_t w, std::vector<int> ids)
    : height(h), width(w), channel_ids(std::move(ids)), pixels(Shape{channel_ids.size(), h, w}, 0.0f) {}

void MultiChannelImage::validate() const {
  if (channel_ids.empty()) throw std::invalid_argument("image has no channels");
  if (pixels.size() != channel_ids.size() * height * width) {
    throw std::invalid_argument("pixel count does not match " + std::to_string(channel_ids.size()) + "x" +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  std::set<int> seen;
  for (int id : channel_ids) {
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate channel id " + std::to_string(id));
  }
  for (float v : pixels.storage()) {
    if (!std::isfinite(v)) throw std::invalid_argument("image contains non-finite pixels");
  }
}

MultiChannelImage MultiChannelImage::select_channels(const std::vector<int>& ids) const {
  MultiChannelImage out(height, width, ids);
  const std::size_t plane = height * width;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    auto it = std::find(channel_ids.begin(), channel_ids.end(), ids[j]);
    if (it == channel_ids.end()) throw std::invalid_argument("image has no channel " + std::to_string(ids[j]));
    const auto src = static_cast<std::size_t>(it - channel_ids.begin());
    std::copy_n(pixels.data() + src * plane, plane, out.pixels.data() + j * plane);
  }
  return out;
}

template <typename T>
Tensor<T> extract_patches(const MultiChannelImage& image, std::size_t p) {
  if (p == 0 || image.height % p != 0 || image.width % p != 0) {
    throw std::invalid_argument("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " is not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gw = image.width / p;
  const std::size_t n = (image.height / p) * gw;
  const std::size_t c = image.channels();
  Tensor<T> out = Tensor<T>::matrix(n * c, p * p);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y0 = (i / gw) * p, x0 = (i % gw) * p;
      T* dst = out.data() + (j * n + i) * p * p;
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) dst[a * p + b] = static_cast<T>(image.at(j, y0 + a, x0 + b));
    }
  }
  return out;
}

MultiChannelImage unpatchify(const Tensor<float>& patches, std::size_t height, std::size_t width, std::size_t p,
                             std::vector<int> channel_ids) {
  if (p == 0 || height % p != 0 || width % p != 0) throw std::invalid_argument("unpatchify: geometry not divisible");
  const std::size_t gw = width / p;
  const std::size_t n = (height / p) * gw;
  const std::size_t c = channel_ids.size();
  if (patches.rows() != n * c || patches.cols() != p * p) {
    throw std::invalid_argument("unpatchify: expected " + std::to_string(n * c) + "x" + std::to_string(p * p) +
                                " patches, got " + shape_string(patches.shape()));
  }
  MultiChannelImage img(height, width, std::move(channel_ids));
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y0 = (i / gw) * p, x0 = (i % gw) * p;
      const float* src = patches.data() + (j * n + i) * p * p;
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) img.at(j, y0 + a, x0 + b) = src[a * p + b];
    }
  }
  return img;
}

namespace {

void check_geometry(const ModelConfig& cfg, const MultiChannelImage& image) {
  if (image.height % cfg.patch != 0 || image.width % cfg.patch != 0) {
    throw std::invalid_argument("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " is not divisible by patch size " + std::to_string(cfg.patch));
  }
  if (image.height != cfg.image_height || image.width != cfg.image_width) {
    throw std::invalid_argument("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " but the model expects " + std::to_string(cfg.image_height) + "x" +
                                std::to_string(cfg.image_width));
  }
}

}  // namespace

template <typename T>
ad::Var project_patches(Forward<T>& fw, const MultiChannelImage& image) {
  check_geometry(fw.config(), image);
  auto& g = fw.graph();
  const auto& L = fw.layout();
  ad::Var x = g.constant(extract_patches<T>(image, fw.config().patch));
  return g.linear(x, fw.param(L.patch_w), fw.param(L.patch_b));
}

template <typename T>
TokenSequence<T> patchify(Forward<T>& fw, const MultiChannelImage& image) {
  const auto& cfg = fw.config();
  const auto& L = fw.layout();
  for (int id : image.channel_ids) {
    if (!fw.params().knows_channel(id)) {
      throw std::invalid_argument("unknown channel id " + std::to_string(id) + " (no channel token)");
    }
  }
  auto& g = fw.graph();
  ad::Var proj = project_patches(fw, image);

  const std::size_t n = cfg.patches_per_channel();
  const std::size_t c = image.channels();
  std::vector<std::size_t> pos_index(n * c), chan_index(n * c);
  TokenSequence<T> seq;
  seq.positions = n;
  seq.memory = cfg.memory_tokens;
  seq.channel_ids = image.channel_ids;
  seq.meta.push_back({TokenKind::kCls, -1, -1, -1});
  for (std::size_t m = 0; m < cfg.memory_tokens; ++m) seq.meta.push_back({TokenKind::kMemory, -1, -1, -1});
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      pos_index[j * n + i] = i;
      chan_index[j * n + i] = static_cast<std::size_t>(image.channel_ids[j]);
      seq.meta.push_back({TokenKind::kPatch, static_cast<int>(i), image.channel_ids[j], static_cast<int>(j)});
    }
  }
  ad::Var pos = g.gather_rows(fw.param(L.pos_embed), std::move(pos_index));
  ad::Var chan = g.gather_rows(fw.param(L.channel_tokens), std::move(chan_index));
  ad::Var patches = g.add(g.add(proj, pos), chan);

  std::vector<ad::Var> parts{fw.param(L.cls_token)};
  if (cfg.memory_tokens > 0) parts.push_back(fw.param(L.memory_tokens));
  parts.push_back(patches);
  seq.embeddings = g.concat_rows(parts);
  return seq;
}

template Tensor<float> extract_patches<float>(const MultiChannelImage&, std::size_t);
template Tensor<double> extract_patches<double>(const MultiChannelImage&, std::size_t);
template ad::Var project_patches<float>(Forward<float>&, const MultiChannelImage&);
template ad::Var project_patches<double>(Forward<double>&, const MultiChannelImage&);
template TokenSequence<float> patchify<float>(Forward<float>&, const MultiChannelImage&);
template TokenSequence<double> patchify<double>(Forward<double>&, const MultiChannelImage&);

}  // namespace chamae
