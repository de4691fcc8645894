#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chamae/autodiff.hpp"
#include "chamae/tensor.hpp"

namespace chamae {

using ParamId = std::size_t;

enum class PoolMode { kCls, kAvg, kClsPlusAvg, kHybrid };

std::string to_string(PoolMode mode);
PoolMode pool_mode_from_string(const std::string& s);

/// Architecture hyperparameters. Every learnable shape derives from these.
struct ModelConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t memory_tokens = 4;
  std::size_t max_channels = 8;  // rows in the channel-token table
  std::size_t decoder_depth = 1;
  std::size_t decoder_heads = 4;
  std::size_t num_classes = 3;
  bool channel_aware_decoder = true;
  PoolMode pool = PoolMode::kHybrid;

  std::size_t patches_per_channel() const { return (image_height / patch) * (image_width / patch); }
  std::size_t patch_pixels() const { return patch * patch; }

  void validate() const;

  /// depth 4, heads 4, d 64, mlp_ratio 4, 4 memory tokens, 1 decoder block.
  static ModelConfig toy();
  /// ViT-S sized: 11 encoder blocks + 1 decoder block, d 384, 6 heads.
  static ModelConfig vit_small();
};

struct BlockParams {
  ParamId norm1_gamma, norm1_beta;
  ParamId wq, bq, wk, wv, bv, wo, bo;  // key projection is bias-free
  ParamId norm2_gamma, norm2_beta;
  ParamId fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Indices of every named parameter, in storage order.
struct ParamLayout {
  ParamId patch_w, patch_b, pos_embed, channel_tokens, memory_tokens, cls_token;
  std::vector<BlockParams> encoder;
  ParamId encoder_norm_gamma, encoder_norm_beta;
  ParamId mask_token;
  std::vector<BlockParams> decoder;
  ParamId decoder_norm_gamma, decoder_norm_beta, decoder_head_w, decoder_head_b;
  ParamId fusion_query, fusion_wq, fusion_bq, fusion_wk, fusion_wv, fusion_bv, fusion_wo, fusion_bo;
  ParamId fusion_fc1_w, fusion_fc1_b, fusion_fc2_w, fusion_fc2_b;
  ParamId head_w, head_b;
};

enum class ParamRole { kWeight, kBias, kNorm, kEmbedding };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role;
};

/// Names, shapes and roles of all parameters for a config; fills `layout`.
std::vector<ParamSpec> describe_params(const ModelConfig& cfg, ParamLayout& layout);

/// Per-channel standardization statistics, keyed by channel id.
struct ChannelNorm {
  double mean = 0.0;
  double stddev = 1.0;
  friend bool operator==(const ChannelNorm&, const ChannelNorm&) = default;
};

/// All learnable tensors plus the channel metadata needed to use them.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(const ModelConfig& cfg, std::vector<int> known_channels);

  /// Xavier-uniform linear weights, zero biases, unit norm gains, tokens and
  /// embeddings from N(0, 1) scaled by 0.02.
  static ModelParams initialize(const ModelConfig& cfg, std::uint64_t seed, std::vector<int> known_channels);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }

  std::size_t count() const { return tensors_.size(); }
  std::size_t total_elements() const;
  const std::string& name(ParamId id) const { return specs_.at(id).name; }
  ParamRole role(ParamId id) const { return specs_.at(id).role; }
  bool decays(ParamId id) const { return specs_.at(id).role == ParamRole::kWeight; }
  std::optional<ParamId> find(const std::string& name) const;

  Tensor<T>& tensor(ParamId id) { return tensors_.at(id); }
  const Tensor<T>& tensor(ParamId id) const { return tensors_.at(id); }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  const std::vector<int>& known_channels() const { return known_channels_; }
  bool knows_channel(int id) const;
  void add_known_channel(int id);

  std::map<int, ChannelNorm>& channel_norms() { return channel_norms_; }
  const std::map<int, ChannelNorm>& channel_norms() const { return channel_norms_; }

  /// Zero tensors shaped like every parameter.
  std::vector<Tensor<T>> zeros_like() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out(config_, known_channels_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.tensor(i) = tensors_[i].template cast<U>();
    out.channel_norms() = channel_norms_;
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.tensors_ == b.tensors_ && a.known_channels_ == b.known_channels_ && a.channel_norms_ == b.channel_norms_;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_{};
  std::vector<ParamSpec> specs_;
  std::vector<Tensor<T>> tensors_;
  std::vector<int> known_channels_;
  std::map<int, ChannelNorm> channel_norms_;
};

/// One forward pass: a tape plus lazily-bound parameter leaves.
template <typename T>
class Forward {
 public:
  enum class Grad { kAll, kNone, kSelected };

  /// kAll: every parameter requires grad. kNone: inference, no tape closures.
  explicit Forward(const ModelParams<T>& params, Grad mode = Grad::kAll);
  /// Only parameters flagged in `trainable` receive gradients.
  Forward(const ModelParams<T>& params, std::vector<bool> trainable);

  ad::Graph<T>& graph() { return graph_; }
  const ModelParams<T>& params() const { return params_; }
  const ModelConfig& config() const { return params_.config(); }
  const ParamLayout& layout() const { return params_.layout(); }

  ad::Var param(ParamId id);

  /// Adds the gradients reaching each bound parameter into `grads`.
  void accumulate_gradients(std::vector<Tensor<T>>& grads) const;

 private:
  const ModelParams<T>& params_;
  Grad mode_;
  std::vector<bool> trainable_;
  std::vector<ad::Var> bound_;
  ad::Graph<T> graph_;
};

extern template class ModelParams<float>;
extern template class ModelParams<double>;
extern template class Forward<float>;
extern template class Forward<double>;

}  // namespace chamae
