#include "chamae/fusion.hpp"

#include <stdexcept>

namespace chamae {

namespace {

template <typename T>
ad::Var patch_rows(Forward<T>& fw, const EncodedSequence<T>& enc) {
  if (enc.visible == 0) throw std::invalid_argument("pooling needs at least one patch token");
  return fw.graph().slice_rows(enc.embeddings, enc.first_patch_row(), enc.visible);
}

}  // namespace

template <typename T>
FusionOutput<T> fuse(Forward<T>& fw, const EncodedSequence<T>& enc) {
  const auto& L = fw.layout();
  auto& g = fw.graph();
  ad::Var patches = patch_rows(fw, enc);
  ad::Var cls = g.slice_rows(enc.embeddings, 0, 1);

  ad::Var q = g.linear(fw.param(L.fusion_query), fw.param(L.fusion_wq), fw.param(L.fusion_bq));
  ad::Var k = g.matmul(patches, fw.param(L.fusion_wk));
  ad::Var v = g.linear(patches, fw.param(L.fusion_wv), fw.param(L.fusion_bv));
  ad::Var attended = g.linear(g.attention(q, k, v, 1), fw.param(L.fusion_wo), fw.param(L.fusion_bo));

  FusionOutput<T> out;
  out.gate = g.sigmoid(attended);
  out.fused = g.mul(cls, out.gate);
  ad::Var h = g.gelu(g.linear(out.fused, fw.param(L.fusion_fc1_w), fw.param(L.fusion_fc1_b)));
  out.output = g.linear(h, fw.param(L.fusion_fc2_w), fw.param(L.fusion_fc2_b));
  return out;
}

template <typename T>
ad::Var pool(Forward<T>& fw, const EncodedSequence<T>& enc, PoolMode mode) {
  auto& g = fw.graph();
  switch (mode) {
    case PoolMode::kCls:
      return g.slice_rows(enc.embeddings, 0, 1);
    case PoolMode::kAvg:
      return g.mean_rows(patch_rows(fw, enc));
    case PoolMode::kClsPlusAvg:
      return g.add(g.slice_rows(enc.embeddings, 0, 1), g.mean_rows(patch_rows(fw, enc)));
    case PoolMode::kHybrid:
      return fuse(fw, enc).output;
  }
  throw std::invalid_argument("unknown pool mode");
}

template <typename T>
ad::Var classify(Forward<T>& fw, ad::Var representation) {
  const auto& L = fw.layout();
  return fw.graph().linear(representation, fw.param(L.head_w), fw.param(L.head_b));
}

template FusionOutput<float> fuse<float>(Forward<float>&, const EncodedSequence<float>&);
template FusionOutput<double> fuse<double>(Forward<double>&, const EncodedSequence<double>&);
template ad::Var pool<float>(Forward<float>&, const EncodedSequence<float>&, PoolMode);
template ad::Var pool<double>(Forward<double>&, const EncodedSequence<double>&, PoolMode);
template ad::Var classify<float>(Forward<float>&, ad::Var);
template ad::Var classify<double>(Forward<double>&, ad::Var);

}  // namespace chamae
