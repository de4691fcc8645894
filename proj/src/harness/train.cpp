#include "chamae/harness/train.hpp"

#include <cmath>
#include <numbers>

#include <omp.h>

#include "chamae/decoder.hpp"
#include "chamae/encoder.hpp"
#include "chamae/fusion.hpp"
#include "chamae/tokenizer.hpp"

namespace chamae {

template <typename T>
SampleObjective sample_objective(Forward<T>& fw, const MultiChannelImage& image, std::optional<std::size_t> label,
                                 const MaskPlan& plan, const LossWeights& w, const RegularizerHook<T>& regularizer) {
  auto& g = fw.graph();
  const ModelConfig& cfg = fw.config();
  const auto zero = [&g] { return g.constant(Tensor<T>::matrix(1, 1)); };

  TokenSequence<T> tokens = patchify(fw, image);
  EncodedSequence<T> enc = encode(fw, tokens, plan);

  SampleObjective obj;
  obj.breakdown.masked = plan.masked_count();
  if (w.lambda_recon > 0.0) {
    ReconstructionOutput<T> rec = decode(fw, enc, plan);
    ReconTerms terms = recon_loss(g, rec.patch_pixels, extract_patches<T>(image, cfg.patch), plan, w);
    obj.pixel = terms.pixel;
    obj.fourier = terms.fourier;
    obj.recon = terms.recon;
  } else {
    obj.pixel = obj.fourier = obj.recon = zero();
  }

  const bool supervised = label.has_value() && w.lambda_recon < 1.0;
  if (supervised) {
    obj.task = task_loss(g, classify(fw, pool(fw, enc, cfg.pool)), *label);
  } else {
    obj.task = zero();
  }
  if (supervised && regularizer && w.lambda_d > 0.0) {
    std::vector<std::size_t> rows(image.channel_ids.begin(), image.channel_ids.end());
    ad::Var channel_tokens = g.gather_rows(fw.param(fw.layout().channel_tokens), rows);
    ad::Var patches = g.slice_rows(enc.embeddings, enc.first_patch_row(), enc.visible);
    obj.reg = regularizer(g, channel_tokens, patches);
  } else {
    obj.reg = zero();
  }
  obj.final = final_loss(g, obj.task, obj.reg, obj.recon, w);

  auto& b = obj.breakdown;
  b.pixel = g.scalar(obj.pixel);
  b.fourier = g.scalar(obj.fourier);
  b.recon = g.scalar(obj.recon);
  b.task = g.scalar(obj.task);
  b.reg = g.scalar(obj.reg);
  b.final = g.scalar(obj.final);
  return obj;
}

template <typename T>
BatchGradients<T> compute_batch_gradients(const ModelParams<T>& params, std::span<const BatchItem> batch,
                                          const LossWeights& weights, const std::vector<bool>* trainable,
                                          Execution execution, const RegularizerHook<T>& regularizer) {
  const std::size_t count = batch.size();
  std::vector<std::vector<Tensor<T>>> per_sample(count);
  std::vector<LossBreakdown> losses(count);

  auto run = [&](std::size_t i) {
    const BatchItem& item = batch[i];
    std::optional<Forward<T>> fw;
    if (trainable) fw.emplace(params, *trainable);
    else fw.emplace(params, Forward<T>::Grad::kAll);
    SampleObjective obj = sample_objective(*fw, *item.image, item.label, item.plan, weights, regularizer);
    fw->graph().backward(obj.final);
    per_sample[i] = params.zeros_like();
    fw->accumulate_gradients(per_sample[i]);
    losses[i] = obj.breakdown;
  };

  if (execution == Execution::kParallel) {
    // Exceptions may not cross the OpenMP region; keep the first and rethrow.
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < static_cast<long>(count); ++i) {
      try {
        run(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t i = 0; i < count; ++i) run(i);
  }

  BatchGradients<T> out{params.zeros_like(), {}};
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      T* dst = out.grads[p].data();
      const T* src = per_sample[i][p].data();
      for (std::size_t k = 0; k < out.grads[p].size(); ++k) dst[k] += src[k];
    }
    const auto& l = losses[i];
    out.mean.pixel += l.pixel;
    out.mean.fourier += l.fourier;
    out.mean.recon += l.recon;
    out.mean.task += l.task;
    out.mean.reg += l.reg;
    out.mean.final += l.final;
    out.mean.masked += l.masked;
  }
  if (count > 0) {
    const T inv = T(1) / T(count);
    for (auto& g : out.grads)
      for (auto& x : g.storage()) x *= inv;
    const double n = static_cast<double>(count);
    out.mean.pixel /= n;
    out.mean.fourier /= n;
    out.mean.recon /= n;
    out.mean.task /= n;
    out.mean.reg /= n;
    out.mean.final /= n;
  }
  return out;
}

AdamW::AdamW(const ModelParams<float>& params) : m_(params.zeros_like()), v_(params.zeros_like()) {}

void AdamW::step(ModelParams<float>& params, const std::vector<Tensor<float>>& grads, double lr, double weight_decay,
                 const std::vector<bool>* trainable) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (ParamId id = 0; id < params.count(); ++id) {
    if (trainable && !(*trainable)[id]) continue;
    float* p = params.tensor(id).data();
    const float* g = grads[id].data();
    float* m = m_[id].data();
    float* v = v_[id].data();
    const double decay = params.decays(id) ? lr * weight_decay : 0.0;
    for (std::size_t k = 0; k < params.tensor(id).size(); ++k) {
      m[k] = static_cast<float>(beta1 * m[k] + (1.0 - beta1) * g[k]);
      v[k] = static_cast<float>(beta2 * v[k] + (1.0 - beta2) * double(g[k]) * g[k]);
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      p[k] = static_cast<float>(p[k] * (1.0 - decay) - lr * update);
    }
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total, std::size_t warmup) {
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t span = total > warmup + 1 ? total - warmup - 1 : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

Json to_json(const StepLog& s) {
  const auto& l = s.loss;
  return Json{{"step", s.step},     {"epoch", s.epoch},   {"lr", s.lr},       {"pixel", l.pixel},
              {"fourier", l.fourier}, {"recon", l.recon}, {"task", l.task},   {"reg", l.reg},
              {"final", l.final},   {"masked", l.masked}};
}

Philox mask_rng(std::uint64_t seed, std::size_t step, std::size_t index) {
  return Philox(seed, 0x6d61736bULL).derive(step).derive(index);
}

ModelParams<float> init_model(const ModelConfig& cfg, std::uint64_t seed, std::span<const LabeledSample> data) {
  if (data.empty()) throw std::invalid_argument("cannot initialize a model from an empty dataset");
  auto params = ModelParams<float>::initialize(cfg, seed, data.front().image.channel_ids);
  params.channel_norms() = channel_statistics(data);
  return params;
}

TrainResult train(const TrainConfig& cfg, std::span<const LabeledSample> data, ModelParams<float> params,
                  const TrainOptions& options) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("training set is empty");
  if (cfg.threads > 0) omp_set_num_threads(static_cast<int>(cfg.threads));

  const ModelConfig& mc = params.config();
  std::vector<MultiChannelImage> images;
  images.reserve(data.size());
  for (const auto& s : data) {
    if (s.label >= mc.num_classes) throw std::invalid_argument("label out of range for the model");
    images.push_back(prepare_image(params, s.image));
  }

  const std::size_t n = mc.patches_per_channel();
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total = cfg.epochs * per_epoch;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  const std::size_t warmup = std::min(cfg.warmup_epochs * per_epoch, total > 0 ? total - 1 : 0);

  AdamW opt(params);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; step < total; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Philox shuffle = Philox(cfg.seed, 0x6f72646572ULL).derive(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t start = 0; start < order.size() && step < total; start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<BatchItem> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const MultiChannelImage& img = images[idx];
        batch.push_back({&img, data[idx].label, draw_mask(n, img.channels(), cfg.mask, mask_rng(cfg.seed, step, idx))});
      }
      BatchGradients<float> bg =
          compute_batch_gradients(params, std::span<const BatchItem>(batch), cfg.weights, nullptr, options.execution,
                                  options.regularizer);
      if (!std::isfinite(bg.mean.final)) {
        throw TrainingDiverged(step, "non-finite loss at step " + std::to_string(step));
      }
      const double lr = learning_rate(cfg, step, total, warmup);
      opt.step(params, bg.grads, lr, cfg.weight_decay);

      StepLog entry{step, epoch, lr, bg.mean};
      if (options.jsonl) *options.jsonl << to_json(entry).dump() << '\n';
      if (options.on_step) options.on_step(entry);
      result.log.push_back(entry);
    }
  }
  result.params = std::move(params);
  return result;
}

template SampleObjective sample_objective<float>(Forward<float>&, const MultiChannelImage&, std::optional<std::size_t>,
                                                 const MaskPlan&, const LossWeights&, const RegularizerHook<float>&);
template SampleObjective sample_objective<double>(Forward<double>&, const MultiChannelImage&, std::optional<std::size_t>,
                                                  const MaskPlan&, const LossWeights&, const RegularizerHook<double>&);
template BatchGradients<float> compute_batch_gradients<float>(const ModelParams<float>&, std::span<const BatchItem>,
                                                              const LossWeights&, const std::vector<bool>*, Execution,
                                                              const RegularizerHook<float>&);
template BatchGradients<double> compute_batch_gradients<double>(const ModelParams<double>&, std::span<const BatchItem>,
                                                                const LossWeights&, const std::vector<bool>*, Execution,
                                                                const RegularizerHook<double>&);

}  // namespace chamae
