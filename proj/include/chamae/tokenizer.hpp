#pragma once

#include <cstddef>
#include <vector>

#include "chamae/autodiff.hpp"
#include "chamae/model.hpp"
#include "chamae/tensor.hpp"

namespace chamae {

/// c x h x w pixels (channel-major, row-major within a channel) plus the
/// semantic id of each channel.
struct MultiChannelImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> channel_ids;
  Tensor<float> pixels;  // shape {c, h, w}

  MultiChannelImage() = default;
  MultiChannelImage(std::size_t h, std::size_t w, std::vector<int> ids);

  std::size_t channels() const { return channel_ids.size(); }
  float& at(std::size_t channel, std::size_t y, std::size_t x) { return pixels[(channel * height + y) * width + x]; }
  float at(std::size_t channel, std::size_t y, std::size_t x) const { return pixels[(channel * height + y) * width + x]; }

  /// Checks shape consistency, distinct ids and finite pixels.
  void validate() const;
  /// Subset of channels by id, in the order given.
  MultiChannelImage select_channels(const std::vector<int>& ids) const;

  friend bool operator==(const MultiChannelImage&, const MultiChannelImage&) = default;
};

enum class TokenKind { kCls, kMemory, kPatch };

struct TokenMeta {
  TokenKind kind = TokenKind::kPatch;
  int position = -1;       // spatial patch index, patches only
  int channel = -1;        // channel id, patches only
  int channel_index = -1;  // column in the image / mask plan, patches only

  friend bool operator==(const TokenMeta&, const TokenMeta&) = default;
};

/// [CLS | memory x l | t_{1,1} .. t_{n,1} .. t_{n,c}] with per-token metadata.
template <typename T>
struct TokenSequence {
  ad::Var embeddings;
  std::vector<TokenMeta> meta;
  std::size_t positions = 0;  // n
  std::size_t memory = 0;     // l
  std::vector<int> channel_ids;

  std::size_t length() const { return meta.size(); }
  std::size_t channels() const { return channel_ids.size(); }
};

/// (n*c) x p^2 patch pixels; row j*n + i is position i of channel j.
template <typename T>
Tensor<T> extract_patches(const MultiChannelImage& image, std::size_t patch);

/// Exact inverse of extract_patches.
MultiChannelImage unpatchify(const Tensor<float>& patches, std::size_t height, std::size_t width, std::size_t patch,
                             std::vector<int> channel_ids);

/// Shared linear projection of every patch, before positional or channel terms.
template <typename T>
ad::Var project_patches(Forward<T>& fw, const MultiChannelImage& image);

/// Full encoder input: projected patches plus positional embedding (by
/// spatial position) plus channel token (by channel id), with CLS and memory
/// tokens prepended.
template <typename T>
TokenSequence<T> patchify(Forward<T>& fw, const MultiChannelImage& image);

}  // namespace chamae
