#include "chamae/encoder.hpp"

#include <stdexcept>
#include <string>

namespace chamae {

template <typename T>
ad::Var transformer_block(Forward<T>& fw, ad::Var x, const BlockParams& b, std::size_t heads,
                          Tensor<T>* attention_out) {
  auto& g = fw.graph();
  ad::Var h = g.layer_norm(x, fw.param(b.norm1_gamma), fw.param(b.norm1_beta));
  ad::Var q = g.linear(h, fw.param(b.wq), fw.param(b.bq));
  ad::Var k = g.matmul(h, fw.param(b.wk));
  ad::Var v = g.linear(h, fw.param(b.wv), fw.param(b.bv));
  ad::Var a = g.attention(q, k, v, heads, attention_out);
  x = g.add(x, g.linear(a, fw.param(b.wo), fw.param(b.bo)));
  h = g.layer_norm(x, fw.param(b.norm2_gamma), fw.param(b.norm2_beta));
  h = g.gelu(g.linear(h, fw.param(b.fc1_w), fw.param(b.fc1_b)));
  return g.add(x, g.linear(h, fw.param(b.fc2_w), fw.param(b.fc2_b)));
}

template <typename T>
TokenSequence<T> drop_masked(Forward<T>& fw, const TokenSequence<T>& tokens, const MaskPlan& plan) {
  const std::size_t n = tokens.positions, c = tokens.channels();
  if (plan.n != n || plan.c != c) {
    throw std::invalid_argument("mask plan is " + std::to_string(plan.n) + "x" + std::to_string(plan.c) +
                                " but the sequence has " + std::to_string(n) + " positions x " +
                                std::to_string(c) + " channels");
  }
  if (c > 0 && plan.visible_count() == 0) throw std::invalid_argument("mask plan hides every patch");

  TokenSequence<T> out;
  out.positions = n;
  out.memory = tokens.memory;
  out.channel_ids = tokens.channel_ids;
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < tokens.meta.size(); ++r) {
    const TokenMeta& m = tokens.meta[r];
    if (m.kind == TokenKind::kPatch && plan.masked(static_cast<std::size_t>(m.position), static_cast<std::size_t>(m.channel_index))) {
      continue;
    }
    keep.push_back(r);
    out.meta.push_back(m);
  }
  out.embeddings = keep.size() == tokens.meta.size() ? tokens.embeddings
                                                       : fw.graph().gather_rows(tokens.embeddings, std::move(keep));
  return out;
}

template <typename T>
EncodedSequence<T> encode_tokens(Forward<T>& fw, const TokenSequence<T>& tokens, AttentionTrace<T>* trace) {
  const auto& cfg = fw.config();
  const auto& L = fw.layout();
  auto& g = fw.graph();
  ad::Var x = tokens.embeddings;
  for (const BlockParams& b : L.encoder) {
    Tensor<T> probs;
    x = transformer_block(fw, x, b, cfg.heads, trace ? &probs : nullptr);
    if (trace) trace->layers.push_back(std::move(probs));
  }
  EncodedSequence<T> enc;
  enc.embeddings = g.layer_norm(x, fw.param(L.encoder_norm_gamma), fw.param(L.encoder_norm_beta));
  enc.meta = tokens.meta;
  enc.memory = tokens.memory;
  enc.visible = tokens.meta.size() - 1 - tokens.memory;
  enc.positions = tokens.positions;
  enc.channel_ids = tokens.channel_ids;
  return enc;
}

template <typename T>
EncodedSequence<T> encode(Forward<T>& fw, const TokenSequence<T>& tokens, const MaskPlan& plan, AttentionTrace<T>* trace) {
  return encode_tokens(fw, drop_masked(fw, tokens, plan), trace);
}

template <typename T>
AttentionMap attention_map(const ModelParams<T>& params, const MultiChannelImage& image) {
  Forward<T> fw(params, Forward<T>::Grad::kNone);
  TokenSequence<T> tokens = patchify(fw, image);
  AttentionTrace<T> trace;
  encode_tokens(fw, tokens, &trace);

  const std::size_t c = image.channels(), l = tokens.memory;
  const std::size_t targets = c + 1 + l;
  // Column of each key token in the full map.
  std::vector<std::size_t> column(tokens.meta.size());
  for (std::size_t r = 0; r < tokens.meta.size(); ++r) {
    const TokenMeta& m = tokens.meta[r];
    if (m.kind == TokenKind::kCls) column[r] = c;
    else if (m.kind == TokenKind::kMemory) column[r] = c + r;  // memory rows are 1..l
    else column[r] = static_cast<std::size_t>(m.channel_index);
  }

  AttentionMap out;
  out.channel_ids = image.channel_ids;
  out.memory = l;
  out.full = Tensor<double>::matrix(c, targets);
  std::vector<double> queries(c, 0.0);
  const std::size_t len = tokens.meta.size();
  for (const Tensor<T>& layer : trace.layers) {
    const std::size_t heads = layer.shape()[0];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t q = 0; q < len; ++q) {
        const TokenMeta& qm = tokens.meta[q];
        if (qm.kind != TokenKind::kPatch) continue;
        const auto ci = static_cast<std::size_t>(qm.channel_index);
        const T* row = layer.data() + (h * len + q) * len;
        for (std::size_t k = 0; k < len; ++k) out.full(ci, column[k]) += static_cast<double>(row[k]);
        queries[ci] += 1.0;
      }
    }
  }
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < targets; ++j) out.full(i, j) /= queries[i];

  out.channel = Tensor<double>::matrix(c, c + 1);
  out.memory_mass = Tensor<double>::matrix(c, l);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j <= c; ++j) out.channel(i, j) = out.full(i, j);
    for (std::size_t m = 0; m < l; ++m) out.memory_mass(i, m) = out.full(i, c + 1 + m);
  }
  return out;
}

template <typename T>
Tensor<double> patch_channel_attention(const ModelParams<T>& params, const MultiChannelImage& image) {
  return attention_map(params, image).channel;
}

template <typename T>
Tensor<double> memory_attention(const ModelParams<T>& params, const MultiChannelImage& image) {
  if (params.config().memory_tokens == 0) throw std::invalid_argument("memory attention needs at least one memory token");
  return attention_map(params, image).memory_mass;
}

#define CHAMAE_INSTANTIATE(T)                                                                                    \
  template ad::Var transformer_block<T>(Forward<T>&, ad::Var, const BlockParams&, std::size_t, Tensor<T>*);     \
  template TokenSequence<T> drop_masked<T>(Forward<T>&, const TokenSequence<T>&, const MaskPlan&);              \
  template EncodedSequence<T> encode_tokens<T>(Forward<T>&, const TokenSequence<T>&, AttentionTrace<T>*);       \
  template EncodedSequence<T> encode<T>(Forward<T>&, const TokenSequence<T>&, const MaskPlan&, AttentionTrace<T>*); \
  template AttentionMap attention_map<T>(const ModelParams<T>&, const MultiChannelImage&);                      \
  template Tensor<double> patch_channel_attention<T>(const ModelParams<T>&, const MultiChannelImage&);          \
  template Tensor<double> memory_attention<T>(const ModelParams<T>&, const MultiChannelImage&);

CHAMAE_INSTANTIATE(float)
CHAMAE_INSTANTIATE(double)
#undef CHAMAE_INSTANTIATE

}  // namespace chamae
