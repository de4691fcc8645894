#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "chamae/data.hpp"
#include "chamae/harness/config.hpp"
#include "chamae/model.hpp"

namespace chamae {

/// Predicted class for one image fed with exactly the channels it carries.
std::size_t predict(const ModelParams<float>& params, const MultiChannelImage& image);

/// Top-1 accuracy with only `subset` channels tokenized. Absent channels are
/// simply not fed: no mask tokens, no renormalization. Read-only on params.
double evaluate(const ModelParams<float>& params, std::span<const LabeledSample> data, const std::vector<int>& subset);

struct EvalRow {
  std::vector<int> channel_ids;
  double accuracy = 0.0;
};

struct EvalReport {
  std::size_t k = 0;  // channels left out per row
  std::vector<EvalRow> rows;
  double mean = 0.0;
  double stddev = 0.0;  // population std across rows
  std::string config_hash;
};

/// Every subset of size c - k of the dataset's channels, lexicographic order.
EvalReport leave_k_out_sweep(const ModelParams<float>& params, std::span<const LabeledSample> data, std::size_t k);

void write_csv(std::ostream& out, const EvalReport& report);
Json to_json(const EvalReport& report);

struct FinetuneResult {
  ModelParams<float> params;
  std::vector<int> novel_channels;
  std::vector<double> loss_curve;  // mean L_recon of each step's batch
};

/// Adds channel tokens for every channel id in `images` the model does not
/// know, initialized at random, and trains only those rows on L_recon.
/// Every other parameter is returned bit-identical.
FinetuneResult finetune_channel_tokens(const ModelParams<float>& params, std::span<const MultiChannelImage> images,
                                       const FinetuneConfig& cfg);

/// Mean L_recon over `images` with masks drawn from (seed, image index).
double mean_recon_loss(const ModelParams<float>& params, std::span<const MultiChannelImage> images,
                       const MaskConfig& mask, std::uint64_t seed, const LossWeights& weights = {});

}  // namespace chamae
