#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "chamae/decoder.hpp"
#include "chamae/fusion.hpp"
#include "chamae/rng.hpp"

using namespace chamae;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.decoder_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.memory_tokens = 2;
  cfg.max_channels = 5;
  return cfg;
}

MultiChannelImage random_image(const ModelConfig& cfg, std::vector<int> ids, std::uint64_t seed) {
  MultiChannelImage img(cfg.image_height, cfg.image_width, std::move(ids));
  Philox r(seed);
  for (auto& v : img.pixels.storage()) v = static_cast<float>(r.normal());
  return img;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Params, DescribeParamsIsConsistent) {
  const ModelConfig cfg = small_config();
  ParamLayout layout;
  const auto specs = describe_params(cfg, layout);
  std::set<std::string> names;
  for (const auto& s : specs) EXPECT_TRUE(names.insert(s.name).second) << s.name;
  EXPECT_EQ(layout.encoder.size(), cfg.depth);
  EXPECT_EQ(layout.decoder.size(), cfg.decoder_depth);
  for (const auto& s : specs) EXPECT_EQ(s.name.find("bk"), std::string::npos) << "key projection must be bias-free";

  const auto params = ModelParams<float>::initialize(cfg, 0, {0});
  EXPECT_EQ(params.tensor(params.layout().pos_embed).shape(), (Shape{cfg.patches_per_channel(), cfg.dim}));
  EXPECT_EQ(params.tensor(params.layout().channel_tokens).shape(), (Shape{cfg.max_channels, cfg.dim}));
  EXPECT_EQ(params.tensor(params.layout().memory_tokens).shape(), (Shape{cfg.memory_tokens, cfg.dim}));
  EXPECT_TRUE(params.decays(params.layout().encoder[0].wq));
  EXPECT_FALSE(params.decays(params.layout().encoder[0].bq));
  EXPECT_FALSE(params.decays(params.layout().encoder[0].norm1_gamma));
  EXPECT_FALSE(params.decays(params.layout().channel_tokens));
}

TEST(Params, InitializationIsSeeded) {
  const ModelConfig cfg = small_config();
  EXPECT_EQ(ModelParams<float>::initialize(cfg, 3, {0, 1}), ModelParams<float>::initialize(cfg, 3, {0, 1}));
  EXPECT_FALSE(ModelParams<float>::initialize(cfg, 3, {0, 1}) == ModelParams<float>::initialize(cfg, 4, {0, 1}));
}

TEST(Params, ConfigValidation) {
  ModelConfig cfg = small_config();
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.image_width = 10;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_NO_THROW(ModelConfig::toy().validate());
  EXPECT_NO_THROW(ModelConfig::vit_small().validate());
}

TEST(Encoder, OutputLengthIsOnePlusMemoryPlusVisible) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<double>::initialize(cfg, 1, {0, 1, 2, 3});
  const MultiChannelImage img = random_image(cfg, {0, 1, 2, 3}, 2);
  const MaskConfig mc = MaskConfig::dcp_combination();
  for (std::uint64_t s = 0; s < 20; ++s) {
    const MaskPlan plan = draw_mask(cfg.patches_per_channel(), 4, mc, Philox(9, s));
    if (plan.visible_count() == 0) continue;
    Forward<double> fw(params, Forward<double>::Grad::kNone);
    const auto enc = encode(fw, patchify(fw, img), plan);
    EXPECT_EQ(enc.length(), 1 + cfg.memory_tokens + plan.visible_count());
    EXPECT_EQ(enc.visible, plan.visible_count());
    EXPECT_EQ(fw.graph().value(enc.embeddings).rows(), enc.length());
    // Kept patches are exactly the visible slots, in slot order.
    const auto visible = plan.visible_slots();
    for (std::size_t k = 0; k < visible.size(); ++k) {
      const TokenMeta& m = enc.meta[enc.first_patch_row() + k];
      EXPECT_EQ(std::size_t(m.channel_index) * plan.n + std::size_t(m.position), visible[k]);
    }
  }
}

TEST(Encoder, FullyMaskedImageThrows) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<double>::initialize(cfg, 1, {0});
  const MultiChannelImage img = random_image(cfg, {0}, 2);
  MaskPlan plan = MaskPlan::empty(cfg.patches_per_channel(), 1);
  std::fill(plan.mask.begin(), plan.mask.end(), 1);
  Forward<double> fw(params, Forward<double>::Grad::kNone);
  EXPECT_THROW(encode(fw, patchify(fw, img), plan), std::invalid_argument);
}

// Without masking, permuting the input channels permutes the patch outputs
// and leaves CLS, memory and the classifier output unchanged.
TEST(Encoder, ChannelPermutationEquivariance) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<double>::initialize(cfg, 5, {0, 1, 2, 3});
  const MultiChannelImage img = random_image(cfg, {0, 1, 2, 3}, 6);
  const std::vector<int> order{3, 1, 0, 2};
  const MultiChannelImage perm = img.select_channels(order);
  const std::size_t n = cfg.patches_per_channel();
  const MaskPlan none = MaskPlan::empty(n, 4);

  Forward<double> fa(params, Forward<double>::Grad::kNone), fb(params, Forward<double>::Grad::kNone);
  const auto ea = encode(fa, patchify(fa, img), none);
  const auto eb = encode(fb, patchify(fb, perm), none);
  const auto& a = fa.graph().value(ea.embeddings);
  const auto& b = fb.graph().value(eb.embeddings);
  const std::size_t off = ea.first_patch_row();
  for (std::size_t r = 0; r < off; ++r) EXPECT_LE(max_abs_diff(a.row(r), b.row(r)), 1e-5);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < n; ++i)
      EXPECT_LE(max_abs_diff(b.row(off + j * n + i), a.row(off + std::size_t(order[j]) * n + i)), 1e-5);

  const auto& la = fa.graph().value(classify(fa, pool(fa, ea, PoolMode::kHybrid)));
  const auto& lb = fb.graph().value(classify(fb, pool(fb, eb, PoolMode::kHybrid)));
  EXPECT_LE(max_abs_diff(la.values(), lb.values()), 1e-5);
}

// Overwriting the memory-token rows of the encoder output must not change
// the fused representation at all.
TEST(Fusion, IgnoresMemoryTokensBitExactly) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<double>::initialize(cfg, 7, {0, 1, 2});
  const MultiChannelImage img = random_image(cfg, {0, 1, 2}, 8);
  Forward<double> fw(params, Forward<double>::Grad::kNone);
  const auto enc = encode(fw, patchify(fw, img), MaskPlan::empty(cfg.patches_per_channel(), 3));
  auto& g = fw.graph();

  Tensor<double> altered = g.value(enc.embeddings);
  Philox r(99);
  for (std::size_t m = 0; m < cfg.memory_tokens; ++m)
    for (auto& v : altered.row(1 + m)) v = 100.0 * r.normal();
  EncodedSequence<double> enc2 = enc;
  enc2.embeddings = g.constant(altered);

  const auto f1 = fuse(fw, enc), f2 = fuse(fw, enc2);
  EXPECT_EQ(g.value(f1.output), g.value(f2.output));
  EXPECT_EQ(g.value(f1.gate), g.value(f2.gate));

  // Sanity: the patch rows do matter.
  Tensor<double> patched = g.value(enc.embeddings);
  patched(enc.first_patch_row(), 0) += 1.0;
  EncodedSequence<double> enc3 = enc;
  enc3.embeddings = g.constant(patched);
  EXPECT_FALSE(g.value(fuse(fw, enc3).output) == g.value(f1.output));
}

TEST(Fusion, PoolModesShapes) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<double>::initialize(cfg, 7, {0, 1});
  const MultiChannelImage img = random_image(cfg, {0, 1}, 8);
  for (PoolMode m : {PoolMode::kCls, PoolMode::kAvg, PoolMode::kClsPlusAvg, PoolMode::kHybrid}) {
    Forward<double> fw(params, Forward<double>::Grad::kNone);
    const auto enc = encode(fw, patchify(fw, img), MaskPlan::empty(cfg.patches_per_channel(), 2));
    const ad::Var rep = pool(fw, enc, m);
    EXPECT_EQ(fw.graph().value(rep).shape(), (Shape{1, cfg.dim})) << to_string(m);
    EXPECT_EQ(fw.graph().value(classify(fw, rep)).shape(), (Shape{1, cfg.num_classes}));
    EXPECT_EQ(pool_mode_from_string(to_string(m)), m);
  }
}

TEST(Decoder, InputLengthAndOutputShape) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<double>::initialize(cfg, 2, {0, 1, 2});
  const MultiChannelImage img = random_image(cfg, {0, 1, 2}, 3);
  const std::size_t n = cfg.patches_per_channel();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const MaskPlan plan = random_patch_mask(n, 3, 0.5, true, Philox(s));
    Forward<double> fw(params, Forward<double>::Grad::kNone);
    const auto enc = encode(fw, patchify(fw, img), plan);
    const auto rec = decode(fw, enc, plan);
    EXPECT_EQ(rec.decoder_input_length, 1 + cfg.memory_tokens + n * 3);
    EXPECT_EQ(rec.mask_tokens, n * 3 - plan.visible_count());
    EXPECT_EQ(fw.graph().value(rec.patch_pixels).shape(), (Shape{n * 3, cfg.patch_pixels()}));
  }
}

// Without channel-aware decoding, masked slots that share a position in a
// fully masked pair of channels are indistinguishable.
TEST(Decoder, ChannelTokensDistinguishMaskedSlots) {
  ModelConfig cfg = small_config();
  const std::size_t n = cfg.patches_per_channel();
  MaskPlan plan = MaskPlan::empty(n, 3);
  for (std::size_t i = 0; i < n; ++i) plan.mask[i * 3 + 1] = plan.mask[i * 3 + 2] = 1;

  auto run = [&](bool aware) {
    cfg.channel_aware_decoder = aware;
    const auto params = ModelParams<double>::initialize(cfg, 4, {0, 1, 2});
    const MultiChannelImage img = random_image(cfg, {0, 1, 2}, 5);
    Forward<double> fw(params, Forward<double>::Grad::kNone);
    const auto rec = decode(fw, encode(fw, patchify(fw, img), plan), plan);
    const auto& p = fw.graph().value(rec.patch_pixels);
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff = std::max(diff, max_abs_diff(p.row(n + i), p.row(2 * n + i)));
    return diff;
  };
  EXPECT_EQ(run(false), 0.0);
  EXPECT_GT(run(true), 1e-6);
}

TEST(Decoder, ReconstructImagePassthrough) {
  const ModelConfig cfg = small_config();
  const MultiChannelImage img = random_image(cfg, {0, 1}, 3);
  const std::size_t n = cfg.patches_per_channel();
  const MaskPlan plan = random_patch_mask(n, 2, 0.5, true, Philox(1));
  Tensor<float> preds = Tensor<float>::matrix(n * 2, cfg.patch_pixels(), 7.0f);

  const auto pass = reconstruct_image(preds, plan, 8, 8, 4, img.channel_ids, ReconstructionMode::kPassthroughVisible, &img);
  const auto only = reconstruct_image(preds, plan, 8, 8, 4, img.channel_ids);
  const Tensor<float> tp = extract_patches<float>(pass, 4), ti = extract_patches<float>(img, 4);
  for (std::size_t slot = 0; slot < n * 2; ++slot) {
    const bool masked = plan.masked(slot % n, slot / n);
    for (std::size_t k = 0; k < cfg.patch_pixels(); ++k) EXPECT_EQ(tp(slot, k), masked ? 7.0f : ti(slot, k));
  }
  for (float v : only.pixels.storage()) EXPECT_EQ(v, 7.0f);
  EXPECT_THROW(reconstruct_image(preds, plan, 8, 8, 4, img.channel_ids, ReconstructionMode::kPassthroughVisible),
               std::invalid_argument);
}

TEST(Attention, FullRowsSumToOne) {
  const ModelConfig cfg = small_config();
  const auto params = ModelParams<float>::initialize(cfg, 2, {0, 1, 2});
  const MultiChannelImage img = random_image(cfg, {2, 0, 1}, 3);
  const AttentionMap map = attention_map(params, img);
  EXPECT_EQ(map.channel_ids, img.channel_ids);
  ASSERT_EQ(map.full.shape(), (Shape{3, 3 + 1 + cfg.memory_tokens}));
  ASSERT_EQ(map.channel.shape(), (Shape{3, 4}));
  ASSERT_EQ(map.memory_mass.shape(), (Shape{3, cfg.memory_tokens}));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (double v : map.full.row(i)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
    for (std::size_t m = 0; m < cfg.memory_tokens; ++m) EXPECT_EQ(map.memory_mass(i, m), map.full(i, 4 + m));
  }
}

TEST(Attention, MemoryAttentionNeedsMemoryTokens) {
  ModelConfig cfg = small_config();
  cfg.memory_tokens = 0;
  const auto params = ModelParams<float>::initialize(cfg, 2, {0});
  EXPECT_THROW(memory_attention(params, random_image(cfg, {0}, 1)), std::invalid_argument);
}
