#pragma once

#include <cstddef>
#include <functional>

#include "chamae/autodiff.hpp"
#include "chamae/masking.hpp"
#include "chamae/tensor.hpp"

namespace chamae {

struct LossWeights {
  double lambda_f = 0.01;       // Fourier share of the reconstruction loss
  double lambda_recon = 0.99;   // reconstruction share of the final loss
  double lambda_d = 0.001;      // regularizer weight inside the supervised term

  void validate() const;
};

struct LossBreakdown {
  double pixel = 0.0;
  double fourier = 0.0;
  double recon = 0.0;
  double task = 0.0;
  double reg = 0.0;
  double final = 0.0;
  std::size_t masked = 0;  // P
};

/// Optional diversification-style regularizer. Receives the channel tokens of
/// the channels present and the encoder's patch outputs; returns a 1 x 1 node.
/// An empty hook means L_d = 0.
template <typename T>
using RegularizerHook = std::function<ad::Var(ad::Graph<T>&, ad::Var channel_tokens, ad::Var patch_tokens)>;

// All masked losses take predictions and targets as (n*c) x p^2 in slot order
// (row = channel * n + position) and only read rows of masked slots.

/// (1/P) sum over masked slots of the per-patch mean squared error.
template <typename T>
ad::Var pixel_loss(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan);

/// (1/P) sum over masked slots of the mean absolute difference of 2-D DFT
/// amplitudes, each patch reshaped to p x p.
template <typename T>
ad::Var fourier_loss(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan);

struct ReconTerms {
  ad::Var pixel;
  ad::Var fourier;
  ad::Var recon;
};

/// (1 - lambda_f) * pixel + lambda_f * fourier.
template <typename T>
ReconTerms recon_loss(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan,
                      const LossWeights& w);

/// Softmax cross-entropy.
template <typename T>
ad::Var task_loss(ad::Graph<T>& g, ad::Var logits, std::size_t label);

/// (1 - lambda_recon) * (task + lambda_d * reg) + lambda_recon * recon.
template <typename T>
ad::Var final_loss(ad::Graph<T>& g, ad::Var task, ad::Var reg, ad::Var recon, const LossWeights& w);

/// Default regularizer: contributes nothing.
template <typename T>
ad::Var zero_regularizer(ad::Graph<T>& g, ad::Var channel_tokens, ad::Var patch_tokens);

/// Example hook: mean pairwise cosine similarity between channel tokens.
template <typename T>
ad::Var channel_token_cosine(ad::Graph<T>& g, ad::Var channel_tokens, ad::Var patch_tokens);

// Scalar forms of the blends.
double recon_loss(double pixel, double fourier, const LossWeights& w);
double final_loss(double task, double reg, double recon, const LossWeights& w);

/// Value-only evaluation for oracles and reports.
double pixel_loss_value(const Tensor<double>& targets, const Tensor<double>& preds, const MaskPlan& plan);
double fourier_loss_value(const Tensor<double>& targets, const Tensor<double>& preds, const MaskPlan& plan);

/// Number of masked-loss evaluations that saw no masked patches. Only the
/// first one prints a warning.
std::size_t empty_mask_warnings();

}  // namespace chamae
