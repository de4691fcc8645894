#include "chamae/harness/config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace chamae {

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (warmup_epochs >= epochs) throw std::invalid_argument("warmup_epochs must be < epochs");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(peak_lr > 0.0)) throw std::invalid_argument("peak_lr must be > 0");
  if (!(min_lr >= 0.0 && min_lr <= peak_lr)) throw std::invalid_argument("min_lr must lie in [0, peak_lr]");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  mask.validate();
  weights.validate();
}

void FinetuneConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("finetune batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("finetune lr must be > 0");
  mask.validate();
}

ModelConfig model_preset(const std::string& name) {
  if (name == "toy") return ModelConfig::toy();
  if (name == "vit_s") return ModelConfig::vit_small();
  if (name == "small") {
    ModelConfig c;
    c.dim = 32;
    c.depth = 2;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.memory_tokens = 2;
    c.decoder_heads = 2;
    return c;
  }
  throw std::invalid_argument("unknown model preset '" + name + "' (toy, small, vit_s)");
}

// Missing keys keep their defaults.
#define GET(field) \
  if (j.contains(#field)) j.at(#field).get_to(s.field)

void to_json(Json& j, const SynthSpec& s) {
  j = Json{{"height", s.height},   {"width", s.width},
           {"patch", s.patch},     {"channels", s.channels},
           {"num_classes", s.num_classes}, {"pair", s.pair},
           {"texture_channel", s.texture_channel}, {"texture_agreement", s.texture_agreement},
           {"noise_sigma", s.noise_sigma}, {"train", s.train},
           {"val", s.val},         {"test", s.test},
           {"seed", s.seed},       {"shared_cell", s.shared_cell}};
}

void from_json(const Json& j, SynthSpec& s) {
  GET(height); GET(width); GET(patch); GET(channels); GET(num_classes); GET(pair);
  GET(texture_channel); GET(texture_agreement); GET(noise_sigma); GET(train); GET(val); GET(test); GET(seed);
  GET(shared_cell);
}

void to_json(Json& j, const ModelConfig& s) {
  j = Json{{"image_height", s.image_height}, {"image_width", s.image_width},
           {"patch", s.patch},               {"dim", s.dim},
           {"depth", s.depth},               {"heads", s.heads},
           {"mlp_ratio", s.mlp_ratio},       {"memory_tokens", s.memory_tokens},
           {"max_channels", s.max_channels}, {"decoder_depth", s.decoder_depth},
           {"decoder_heads", s.decoder_heads}, {"num_classes", s.num_classes},
           {"channel_aware_decoder", s.channel_aware_decoder}, {"pool", to_string(s.pool)}};
}

void from_json(const Json& j, ModelConfig& s) {
  GET(image_height); GET(image_width); GET(patch); GET(dim); GET(depth); GET(heads); GET(mlp_ratio);
  GET(memory_tokens); GET(max_channels); GET(decoder_depth); GET(decoder_heads); GET(num_classes);
  GET(channel_aware_decoder);
  if (j.contains("pool")) s.pool = pool_mode_from_string(j.at("pool").get<std::string>());
}

void to_json(Json& j, const MaskConfig& s) {
  j = Json{{"strategy", to_string(s.strategy)}, {"patch_ratio", s.patch_ratio},
           {"p_patch", s.p_patch},             {"p_channel", s.p_channel},
           {"channel_ratio", s.channel_ratio}, {"independent_spatial", s.independent_spatial},
           {"dynamic_ratios", s.dynamic_ratios}};
}

void from_json(const Json& j, MaskConfig& s) {
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name == "dcp_alternate") s = MaskConfig::dcp_alternate();
    else if (name == "dcp_combination") s = MaskConfig::dcp_combination();
    else if (name == "random_patch") s = MaskConfig::random_patch();
    else throw std::invalid_argument("unknown mask preset '" + name + "'");
  }
  if (j.contains("strategy")) s.strategy = mask_strategy_from_string(j.at("strategy").get<std::string>());
  GET(patch_ratio); GET(p_patch); GET(p_channel); GET(channel_ratio); GET(independent_spatial); GET(dynamic_ratios);
}

void to_json(Json& j, const LossWeights& s) {
  j = Json{{"lambda_f", s.lambda_f}, {"lambda_recon", s.lambda_recon}, {"lambda_d", s.lambda_d}};
}

void from_json(const Json& j, LossWeights& s) { GET(lambda_f); GET(lambda_recon); GET(lambda_d); }

void to_json(Json& j, const TrainConfig& s) {
  j = Json{{"epochs", s.epochs},       {"batch_size", s.batch_size}, {"peak_lr", s.peak_lr},
           {"warmup_epochs", s.warmup_epochs}, {"min_lr", s.min_lr}, {"weight_decay", s.weight_decay},
           {"seed", s.seed},           {"max_steps", s.max_steps},   {"threads", s.threads},
           {"mask", s.mask},           {"weights", s.weights},       {"preset", s.preset}};
}

void from_json(const Json& j, TrainConfig& s) {
  GET(epochs); GET(batch_size); GET(peak_lr); GET(warmup_epochs); GET(min_lr); GET(weight_decay); GET(seed);
  GET(max_steps); GET(threads); GET(preset);
  if (j.contains("mask")) from_json(j.at("mask"), s.mask);
  if (j.contains("weights")) from_json(j.at("weights"), s.weights);
}

void to_json(Json& j, const FinetuneConfig& s) {
  j = Json{{"steps", s.steps}, {"batch_size", s.batch_size}, {"lr", s.lr}, {"seed", s.seed}, {"mask", s.mask}};
}

void from_json(const Json& j, FinetuneConfig& s) {
  GET(steps); GET(batch_size); GET(lr); GET(seed);
  if (j.contains("mask")) from_json(j.at("mask"), s.mask);
}

#undef GET

void to_json(Json& j, const RunConfig& c) {
  j = Json{{"data", c.data}, {"model", c.model}, {"train", c.train}, {"finetune", c.finetune}};
}

void from_json(const Json& j, RunConfig& c) { c = run_config_from_json(j); }

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  if (j.contains("data")) from_json(j.at("data"), c.data);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  std::string preset = c.train.preset;
  if (j.contains("model") && j.at("model").contains("preset")) preset = j.at("model").at("preset").get<std::string>();
  c.train.preset = preset;
  c.model = model_preset(preset);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("finetune")) from_json(j.at("finetune"), c.finetune);
  c.data.validate();
  c.model.validate();
  c.train.validate();
  c.finetune.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  return run_config_from_json(Json::parse(f));
}

void apply_overrides(Json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const Json::parse_error&) {
      value = raw;
    }
    Json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const Json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

}  // namespace chamae
