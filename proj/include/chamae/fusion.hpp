#pragma once

#include "chamae/encoder.hpp"

namespace chamae {

template <typename T>
struct FusionOutput {
  ad::Var gate;    // sigma(CrossAttention(q_patch, patch tokens)), 1 x d
  ad::Var fused;   // CLS * gate
  ad::Var output;  // Linear(GELU(Linear(fused)))
};

/// Hybrid token fusion. Only patch tokens are attended; memory tokens never
/// reach the fused representation.
template <typename T>
FusionOutput<T> fuse(Forward<T>& fw, const EncodedSequence<T>& enc);

/// 1 x d representation for the classifier under the given pooling mode.
template <typename T>
ad::Var pool(Forward<T>& fw, const EncodedSequence<T>& enc, PoolMode mode);

/// Linear classifier over a pooled representation; 1 x num_classes logits.
template <typename T>
ad::Var classify(Forward<T>& fw, ad::Var representation);

}  // namespace chamae
