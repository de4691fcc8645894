#include "chamae/decoder.hpp"

#include <stdexcept>
#include <string>

namespace chamae {

template <typename T>
ReconstructionOutput<T> decode(Forward<T>& fw, const EncodedSequence<T>& enc, const MaskPlan& plan) {
  const auto& cfg = fw.config();
  const auto& L = fw.layout();
  auto& g = fw.graph();
  const std::size_t n = enc.positions, c = enc.channel_ids.size(), l = enc.memory;
  if (plan.n != n || plan.c != c || plan.visible_count() != enc.visible) {
    throw std::invalid_argument("decode: mask plan (" + std::to_string(plan.n) + "x" + std::to_string(plan.c) + ", " +
                                std::to_string(plan.visible_count()) + " visible) does not match the encoding (" +
                                std::to_string(n) + "x" + std::to_string(c) + ", " + std::to_string(enc.visible) +
                                " visible)");
  }

  // Source rows: encoder output rows, then the shared mask token at row `mask_row`.
  const std::size_t mask_row = enc.length();
  std::vector<std::size_t> slot_source(n * c, mask_row);
  for (std::size_t r = enc.first_patch_row(); r < enc.length(); ++r) {
    const TokenMeta& m = enc.meta[r];
    slot_source[static_cast<std::size_t>(m.channel_index) * n + static_cast<std::size_t>(m.position)] = r;
  }
  std::vector<std::size_t> order;
  order.reserve(1 + l + n * c);
  for (std::size_t r = 0; r < 1 + l; ++r) order.push_back(r);
  order.insert(order.end(), slot_source.begin(), slot_source.end());

  std::vector<ad::Var> sources{enc.embeddings, fw.param(L.mask_token)};
  ad::Var seq = g.gather_rows(g.concat_rows(sources), std::move(order));

  // Positional embedding (shared with the encoder) and channel token for every slot.
  std::vector<std::size_t> pos_index(n * c), chan_index(n * c);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      pos_index[j * n + i] = i;
      chan_index[j * n + i] = static_cast<std::size_t>(enc.channel_ids[j]);
    }
  }
  ad::Var slot_extra = g.gather_rows(fw.param(L.pos_embed), std::move(pos_index));
  if (cfg.channel_aware_decoder) {
    slot_extra = g.add(slot_extra, g.gather_rows(fw.param(L.channel_tokens), std::move(chan_index)));
  }
  std::vector<ad::Var> extra_parts{g.constant(Tensor<T>::matrix(1 + l, cfg.dim)), slot_extra};
  ad::Var x = g.add(seq, g.concat_rows(extra_parts));

  for (const BlockParams& b : L.decoder) x = transformer_block(fw, x, b, cfg.decoder_heads);
  x = g.layer_norm(x, fw.param(L.decoder_norm_gamma), fw.param(L.decoder_norm_beta));

  ReconstructionOutput<T> out;
  out.decoder_input_length = 1 + l + n * c;
  out.mask_tokens = n * c - enc.visible;
  out.plan = plan;
  out.channel_ids = enc.channel_ids;
  ad::Var slots = g.slice_rows(x, 1 + l, n * c);
  out.patch_pixels = g.linear(slots, fw.param(L.decoder_head_w), fw.param(L.decoder_head_b));
  return out;
}

MultiChannelImage reconstruct_image(const Tensor<float>& predictions, const MaskPlan& plan, std::size_t height,
                                    std::size_t width, std::size_t patch, const std::vector<int>& channel_ids,
                                    ReconstructionMode mode, const MultiChannelImage* ground_truth) {
  Tensor<float> patches = predictions;
  if (mode == ReconstructionMode::kPassthroughVisible) {
    if (!ground_truth) throw std::invalid_argument("passthrough reconstruction needs the ground-truth image");
    const Tensor<float> truth = extract_patches<float>(*ground_truth, patch);
    if (truth.shape() != patches.shape()) throw std::invalid_argument("ground truth does not match predictions");
    for (std::size_t s : plan.visible_slots()) {
      std::copy_n(truth.data() + s * truth.cols(), truth.cols(), patches.data() + s * patches.cols());
    }
  }
  return unpatchify(patches, height, width, patch, channel_ids);
}

template ReconstructionOutput<float> decode<float>(Forward<float>&, const EncodedSequence<float>&, const MaskPlan&);
template ReconstructionOutput<double> decode<double>(Forward<double>&, const EncodedSequence<double>&, const MaskPlan&);

}  // namespace chamae
