#pragma once

#include <cstddef>
#include <vector>

#include "chamae/masking.hpp"
#include "chamae/model.hpp"
#include "chamae/tokenizer.hpp"

namespace chamae {

/// Encoder output: [CLS | memory x l | v visible patch tokens].
template <typename T>
struct EncodedSequence {
  ad::Var embeddings;
  std::vector<TokenMeta> meta;
  std::size_t memory = 0;
  std::size_t visible = 0;
  std::size_t positions = 0;  // n of the source image
  std::vector<int> channel_ids;

  std::size_t length() const { return meta.size(); }
  std::size_t first_patch_row() const { return 1 + memory; }
};

/// Per-layer attention weights, heads x L x L each, in layer order.
template <typename T>
struct AttentionTrace {
  std::vector<Tensor<T>> layers;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <typename T>
ad::Var transformer_block(Forward<T>& fw, ad::Var x, const BlockParams& b, std::size_t heads,
                          Tensor<T>* attention_out = nullptr);

/// Removes masked patch tokens; CLS and memory tokens are always kept.
template <typename T>
TokenSequence<T> drop_masked(Forward<T>& fw, const TokenSequence<T>& tokens, const MaskPlan& plan);

/// Runs the encoder blocks over a sequence as given (no masking).
template <typename T>
EncodedSequence<T> encode_tokens(Forward<T>& fw, const TokenSequence<T>& tokens, AttentionTrace<T>* trace = nullptr);

/// drop_masked followed by encode_tokens.
template <typename T>
EncodedSequence<T> encode(Forward<T>& fw, const TokenSequence<T>& tokens, const MaskPlan& plan,
                          AttentionTrace<T>* trace = nullptr);

/// Patch-to-channel attention averaged over layers, heads and the query
/// patches of each channel. Rows follow the image's channel order.
struct AttentionMap {
  std::vector<int> channel_ids;
  std::size_t memory = 0;
  // c x (c + 1): key channels, then CLS.
  Tensor<double> channel;
  // c x (c + 1 + l): key channels, CLS, then each memory token. Rows sum to 1.
  Tensor<double> full;
  // c x l: slice of `full` holding memory-token mass.
  Tensor<double> memory_mass;
};

template <typename T>
AttentionMap attention_map(const ModelParams<T>& params, const MultiChannelImage& image);

template <typename T>
Tensor<double> patch_channel_attention(const ModelParams<T>& params, const MultiChannelImage& image);

/// Channel x memory-token attention; requires at least one memory token.
template <typename T>
Tensor<double> memory_attention(const ModelParams<T>& params, const MultiChannelImage& image);

}  // namespace chamae
