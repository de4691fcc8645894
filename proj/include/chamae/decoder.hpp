#pragma once

#include <cstddef>
#include <vector>

#include "chamae/encoder.hpp"

namespace chamae {

/// One prediction per (position, channel) slot, visible slots included.
template <typename T>
struct ReconstructionOutput {
  ad::Var patch_pixels;  // (n*c) x p^2, row = slot (channel * n + position)
  MaskPlan plan;
  std::size_t decoder_input_length = 0;
  std::size_t mask_tokens = 0;  // u = n*c - v
  std::vector<int> channel_ids;
};

/// Rebuilds the full-length sequence (shared mask token at masked slots),
/// adds channel token and positional embedding to every patch slot, runs the
/// decoder blocks and maps each slot through the linear decoder head.
template <typename T>
ReconstructionOutput<T> decode(Forward<T>& fw, const EncodedSequence<T>& enc, const MaskPlan& plan);

enum class ReconstructionMode {
  kPredictionsOnly,
  kPassthroughVisible,  // visible slots take ground-truth pixels
};

/// Predicted patches laid back out as an image. `ground_truth` is required
/// for kPassthroughVisible.
MultiChannelImage reconstruct_image(const Tensor<float>& predictions, const MaskPlan& plan, std::size_t height,
                                    std::size_t width, std::size_t patch, const std::vector<int>& channel_ids,
                                    ReconstructionMode mode = ReconstructionMode::kPredictionsOnly,
                                    const MultiChannelImage* ground_truth = nullptr);

}  // namespace chamae
