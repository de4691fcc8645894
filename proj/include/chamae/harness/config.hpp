#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "chamae/data.hpp"
#include "chamae/losses.hpp"
#include "chamae/masking.hpp"
#include "chamae/model.hpp"

namespace chamae {

using Json = nlohmann::json;

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double peak_lr = 4e-4;
  std::size_t warmup_epochs = 3;
  double min_lr = 1e-6;
  double weight_decay = 0.04;  // weights only; biases, norms, tokens and embeddings are exempt
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;   // 0 = epochs * steps_per_epoch
  std::size_t threads = 0;     // 0 = OpenMP default; results do not depend on it
  MaskConfig mask;
  LossWeights weights;
  std::string preset = "toy";

  void validate() const;
};

struct FinetuneConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  MaskConfig mask;

  void validate() const;
};

/// Everything a CLI run needs, loaded from one JSON file.
struct RunConfig {
  SynthSpec data;
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
};

/// "toy" (d 64, depth 4), "small" (d 32, depth 2; the CPU experiment preset)
/// and "vit_s" (ViT-S sized).
ModelConfig model_preset(const std::string& name);

void to_json(Json& j, const SynthSpec& s);
void from_json(const Json& j, SynthSpec& s);
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const MaskConfig& c);
void from_json(const Json& j, MaskConfig& c);
void to_json(Json& j, const LossWeights& w);
void from_json(const Json& j, LossWeights& w);
void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);
void to_json(Json& j, const FinetuneConfig& c);
void from_json(const Json& j, FinetuneConfig& c);
void to_json(Json& j, const RunConfig& c);
void from_json(const Json& j, RunConfig& c);

/// Reads a config file; a "model.preset" (or "train.preset") seeds the model
/// section before explicit model keys are applied.
RunConfig load_run_config(const std::string& path);

/// Applies "a.b.c=value" overrides; values parse as JSON, else as strings.
void apply_overrides(Json& j, const std::vector<std::string>& overrides);
RunConfig run_config_from_json(const Json& j);

/// FNV-1a over the compact JSON dump.
std::uint64_t fnv1a(const std::string& bytes);
std::string config_hash(const Json& j);

}  // namespace chamae
