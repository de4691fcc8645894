#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "chamae/data.hpp"
#include "chamae/harness/config.hpp"
#include "chamae/losses.hpp"
#include "chamae/masking.hpp"
#include "chamae/model.hpp"

namespace chamae {

/// Nodes of one sample's objective plus their values.
struct SampleObjective {
  ad::Var final;
  ad::Var pixel, fourier, recon, task, reg;
  LossBreakdown breakdown;
};

/// encode -> (decode -> L_recon) and (pool -> classify -> L_task), blended
/// into L_final. The decoder is skipped when lambda_recon = 0 and the
/// classifier when lambda_recon = 1 or the sample has no label.
template <typename T>
SampleObjective sample_objective(Forward<T>& fw, const MultiChannelImage& image, std::optional<std::size_t> label,
                                 const MaskPlan& plan, const LossWeights& weights,
                                 const RegularizerHook<T>& regularizer = {});

/// Per-channel standardization with the statistics stored in the model.
template <typename T>
MultiChannelImage prepare_image(const ModelParams<T>& params, const MultiChannelImage& image) {
  return standardize(image, params.channel_norms());
}

enum class Execution { kSerial, kParallel };

struct BatchItem {
  const MultiChannelImage* image;  // already standardized
  std::optional<std::size_t> label;
  MaskPlan plan;
};

template <typename T>
struct BatchGradients {
  std::vector<Tensor<T>> grads;  // mean over the batch
  LossBreakdown mean;
};

/// Per-sample tapes with private gradient buffers, reduced in sample order,
/// so both execution modes give bit-identical results for any thread count.
template <typename T>
BatchGradients<T> compute_batch_gradients(const ModelParams<T>& params, std::span<const BatchItem> batch,
                                          const LossWeights& weights, const std::vector<bool>* trainable = nullptr,
                                          Execution execution = Execution::kParallel,
                                          const RegularizerHook<T>& regularizer = {});

/// Decoupled weight decay Adam.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamW(const ModelParams<float>& params);

  /// Weight decay applies only where params.decays(id); untrainable entries are skipped.
  void step(ModelParams<float>& params, const std::vector<Tensor<float>>& grads, double lr, double weight_decay,
            const std::vector<bool>* trainable = nullptr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor<float>> m_, v_;
  std::size_t t_ = 0;
};

/// Linear warmup to peak, then cosine decay to min_lr.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total_steps, std::size_t warmup_steps);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

Json to_json(const StepLog& s);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainOptions {
  std::ostream* jsonl = nullptr;  // one LossBreakdown line per step
  std::function<void(const StepLog&)> on_step;
  Execution execution = Execution::kParallel;
  RegularizerHook<float> regularizer;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<StepLog> log;
};

/// Mask per image per step from (seed, step, index).
Philox mask_rng(std::uint64_t seed, std::size_t step, std::size_t index);

/// Fresh parameters for the channels present in `data`, with channel
/// statistics from `data`.
ModelParams<float> init_model(const ModelConfig& cfg, std::uint64_t seed, std::span<const LabeledSample> data);

TrainResult train(const TrainConfig& cfg, std::span<const LabeledSample> data, ModelParams<float> params,
                  const TrainOptions& options = {});

}  // namespace chamae
