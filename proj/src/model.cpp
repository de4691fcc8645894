#include "chamae/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "chamae/rng.hpp"

namespace chamae {

std::string to_string(PoolMode mode) {
  switch (mode) {
    case PoolMode::kCls: return "cls";
    case PoolMode::kAvg: return "avg";
    case PoolMode::kClsPlusAvg: return "cls+avg";
    case PoolMode::kHybrid: return "hybrid";
  }
  return "hybrid";
}

PoolMode pool_mode_from_string(const std::string& s) {
  if (s == "cls") return PoolMode::kCls;
  if (s == "avg") return PoolMode::kAvg;
  if (s == "cls+avg" || s == "cls_plus_avg") return PoolMode::kClsPlusAvg;
  if (s == "hybrid") return PoolMode::kHybrid;
  throw std::invalid_argument("unknown pool mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (patch < 1) throw std::invalid_argument("patch size must be >= 1");
  if (dim < 4) throw std::invalid_argument("embedding width must be >= 4");
  if (image_height % patch != 0 || image_width % patch != 0) {
    throw std::invalid_argument("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                                " is not divisible by patch size " + std::to_string(patch));
  }
  if (depth < 1 || decoder_depth < 1) throw std::invalid_argument("encoder and decoder need at least one block");
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("dim must be divisible by heads");
  if (decoder_heads == 0 || dim % decoder_heads != 0) throw std::invalid_argument("dim must be divisible by decoder heads");
  if (mlp_ratio < 1) throw std::invalid_argument("mlp_ratio must be >= 1");
  if (max_channels < 1) throw std::invalid_argument("channel table must have at least one row");
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::vit_small() {
  ModelConfig cfg;
  cfg.image_height = cfg.image_width = 224;
  cfg.patch = 16;
  cfg.dim = 384;
  cfg.depth = 11;
  cfg.heads = 6;
  cfg.decoder_heads = 6;
  cfg.decoder_depth = 1;
  cfg.max_channels = 18;
  return cfg;
}

namespace {

void add_block(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t d, std::size_t hidden,
               BlockParams& b) {
  auto add = [&](const std::string& name, Shape shape, ParamRole role) {
    specs.push_back({prefix + name, std::move(shape), role});
    return specs.size() - 1;
  };
  b.norm1_gamma = add("norm1.weight", {1, d}, ParamRole::kNorm);
  b.norm1_beta = add("norm1.bias", {1, d}, ParamRole::kNorm);
  b.wq = add("attn.q.weight", {d, d}, ParamRole::kWeight);
  b.bq = add("attn.q.bias", {1, d}, ParamRole::kBias);
  b.wk = add("attn.k.weight", {d, d}, ParamRole::kWeight);
  b.wv = add("attn.v.weight", {d, d}, ParamRole::kWeight);
  b.bv = add("attn.v.bias", {1, d}, ParamRole::kBias);
  b.wo = add("attn.proj.weight", {d, d}, ParamRole::kWeight);
  b.bo = add("attn.proj.bias", {1, d}, ParamRole::kBias);
  b.norm2_gamma = add("norm2.weight", {1, d}, ParamRole::kNorm);
  b.norm2_beta = add("norm2.bias", {1, d}, ParamRole::kNorm);
  b.fc1_w = add("mlp.fc1.weight", {d, hidden}, ParamRole::kWeight);
  b.fc1_b = add("mlp.fc1.bias", {1, hidden}, ParamRole::kBias);
  b.fc2_w = add("mlp.fc2.weight", {hidden, d}, ParamRole::kWeight);
  b.fc2_b = add("mlp.fc2.bias", {1, d}, ParamRole::kBias);
}

}  // namespace

std::vector<ParamSpec> describe_params(const ModelConfig& cfg, ParamLayout& L) {
  cfg.validate();
  const std::size_t d = cfg.dim, pp = cfg.patch_pixels(), hidden = cfg.dim * cfg.mlp_ratio;
  std::vector<ParamSpec> specs;
  auto add = [&](const std::string& name, Shape shape, ParamRole role) {
    specs.push_back({name, std::move(shape), role});
    return specs.size() - 1;
  };
  L.patch_w = add("patch_embed.weight", {pp, d}, ParamRole::kWeight);
  L.patch_b = add("patch_embed.bias", {1, d}, ParamRole::kBias);
  L.pos_embed = add("pos_embed", {cfg.patches_per_channel(), d}, ParamRole::kEmbedding);
  L.channel_tokens = add("channel_tokens", {cfg.max_channels, d}, ParamRole::kEmbedding);
  L.memory_tokens = add("memory_tokens", {cfg.memory_tokens, d}, ParamRole::kEmbedding);
  L.cls_token = add("cls_token", {1, d}, ParamRole::kEmbedding);
  L.encoder.resize(cfg.depth);
  for (std::size_t i = 0; i < cfg.depth; ++i)
    add_block(specs, "encoder.blocks." + std::to_string(i) + ".", d, hidden, L.encoder[i]);
  L.encoder_norm_gamma = add("encoder.norm.weight", {1, d}, ParamRole::kNorm);
  L.encoder_norm_beta = add("encoder.norm.bias", {1, d}, ParamRole::kNorm);
  L.mask_token = add("decoder.mask_token", {1, d}, ParamRole::kEmbedding);
  L.decoder.resize(cfg.decoder_depth);
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i)
    add_block(specs, "decoder.blocks." + std::to_string(i) + ".", d, hidden, L.decoder[i]);
  L.decoder_norm_gamma = add("decoder.norm.weight", {1, d}, ParamRole::kNorm);
  L.decoder_norm_beta = add("decoder.norm.bias", {1, d}, ParamRole::kNorm);
  L.decoder_head_w = add("decoder.head.weight", {d, pp}, ParamRole::kWeight);
  L.decoder_head_b = add("decoder.head.bias", {1, pp}, ParamRole::kBias);
  L.fusion_query = add("fusion.query", {1, d}, ParamRole::kEmbedding);
  L.fusion_wq = add("fusion.attn.q.weight", {d, d}, ParamRole::kWeight);
  L.fusion_bq = add("fusion.attn.q.bias", {1, d}, ParamRole::kBias);
  L.fusion_wk = add("fusion.attn.k.weight", {d, d}, ParamRole::kWeight);
  L.fusion_wv = add("fusion.attn.v.weight", {d, d}, ParamRole::kWeight);
  L.fusion_bv = add("fusion.attn.v.bias", {1, d}, ParamRole::kBias);
  L.fusion_wo = add("fusion.attn.proj.weight", {d, d}, ParamRole::kWeight);
  L.fusion_bo = add("fusion.attn.proj.bias", {1, d}, ParamRole::kBias);
  L.fusion_fc1_w = add("fusion.mlp.fc1.weight", {d, d}, ParamRole::kWeight);
  L.fusion_fc1_b = add("fusion.mlp.fc1.bias", {1, d}, ParamRole::kBias);
  L.fusion_fc2_w = add("fusion.mlp.fc2.weight", {d, d}, ParamRole::kWeight);
  L.fusion_fc2_b = add("fusion.mlp.fc2.bias", {1, d}, ParamRole::kBias);
  L.head_w = add("head.weight", {d, cfg.num_classes}, ParamRole::kWeight);
  L.head_b = add("head.bias", {1, cfg.num_classes}, ParamRole::kBias);
  return specs;
}

template <typename T>
ModelParams<T>::ModelParams(const ModelConfig& cfg, std::vector<int> known_channels)
    : config_(cfg), specs_(describe_params(cfg, layout_)) {
  tensors_.reserve(specs_.size());
  for (const auto& s : specs_) tensors_.emplace_back(s.shape, T{0});
  for (int id : known_channels) add_known_channel(id);
}

namespace {

// Fixed 2-D sine-cosine table as the starting point of the learnable
// positional embedding: first half of the width encodes the row, second
// half the column.
template <typename T>
void sincos_2d(Tensor<T>& t, std::size_t grid_h, std::size_t grid_w) {
  const std::size_t d = t.cols(), half = d / 2, quarter = half / 2;
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      auto row = t.row(r * grid_w + c);
      std::fill(row.begin(), row.end(), T{0});
      for (std::size_t k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
        row[k] = static_cast<T>(std::sin(r * omega));
        row[quarter + k] = static_cast<T>(std::cos(r * omega));
        row[half + k] = static_cast<T>(std::sin(c * omega));
        row[half + quarter + k] = static_cast<T>(std::cos(c * omega));
      }
    }
  }
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::initialize(const ModelConfig& cfg, std::uint64_t seed, std::vector<int> known_channels) {
  ModelParams p(cfg, std::move(known_channels));
  Philox root(seed, 0x696e6974ULL);
  const ParamId pos = p.layout_.pos_embed;
  for (ParamId id = 0; id < p.count(); ++id) {
    Philox rng = root.derive(id);
    Tensor<T>& t = p.tensors_[id];
    switch (p.specs_[id].role) {
      case ParamRole::kWeight: {
        const double fan_in = static_cast<double>(t.rows()), fan_out = static_cast<double>(t.cols());
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& x : t.storage()) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
        break;
      }
      case ParamRole::kBias: t.fill(T{0}); break;
      case ParamRole::kNorm:
        t.fill(p.specs_[id].name.ends_with(".weight") ? T{1} : T{0});
        break;
      case ParamRole::kEmbedding:
        if (id == pos) {
          sincos_2d(t, cfg.image_height / cfg.patch, cfg.image_width / cfg.patch);
          break;
        }
        for (auto& x : t.storage()) x = static_cast<T>(0.02 * rng.normal());
        break;
    }
  }
  return p;
}

template <typename T>
std::size_t ModelParams<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
std::optional<ParamId> ModelParams<T>::find(const std::string& name) const {
  for (ParamId i = 0; i < specs_.size(); ++i)
    if (specs_[i].name == name) return i;
  return std::nullopt;
}

template <typename T>
bool ModelParams<T>::knows_channel(int id) const {
  return std::find(known_channels_.begin(), known_channels_.end(), id) != known_channels_.end();
}

template <typename T>
void ModelParams<T>::add_known_channel(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= config_.max_channels) {
    throw std::out_of_range("channel id " + std::to_string(id) + " outside the channel-token table (size " +
                            std::to_string(config_.max_channels) + ")");
  }
  if (!knows_channel(id)) {
    known_channels_.push_back(id);
    std::sort(known_channels_.begin(), known_channels_.end());
  }
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::zeros_like() const {
  std::vector<Tensor<T>> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.emplace_back(t.shape(), T{0});
  return out;
}

template <typename T>
Forward<T>::Forward(const ModelParams<T>& params, Grad mode)
    : params_(params), mode_(mode), bound_(params.count()) {}

template <typename T>
Forward<T>::Forward(const ModelParams<T>& params, std::vector<bool> trainable)
    : params_(params), mode_(Grad::kSelected), trainable_(std::move(trainable)), bound_(params.count()) {
  if (trainable_.size() != params.count()) throw std::invalid_argument("trainable mask size mismatch");
}

template <typename T>
ad::Var Forward<T>::param(ParamId id) {
  ad::Var& v = bound_.at(id);
  if (!v.valid()) {
    const bool rg = mode_ == Grad::kAll || (mode_ == Grad::kSelected && trainable_[id]);
    v = graph_.leaf(params_.tensor(id), rg);
  }
  return v;
}

template <typename T>
void Forward<T>::accumulate_gradients(std::vector<Tensor<T>>& grads) const {
  for (ParamId id = 0; id < bound_.size(); ++id) {
    if (!bound_[id].valid()) continue;
    const auto& g = graph_.grad(bound_[id]);
    if (g.empty()) continue;
    auto& dst = grads.at(id);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

template class ModelParams<float>;
template class ModelParams<double>;
template class Forward<float>;
template class Forward<double>;

}  // namespace chamae
