#include "chamae/losses.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

#include "chamae/dft.hpp"

namespace chamae {

namespace {

std::atomic<std::size_t> g_empty_mask_warnings{0};

void warn_empty_mask(const char* which) {
  if (g_empty_mask_warnings.fetch_add(1) == 0) {
    std::cerr << "warning: " << which << " called with no masked patches; loss defined as 0\n";
  }
}

std::size_t patch_side(std::size_t pixels) {
  const auto p = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(pixels))));
  if (p * p != pixels) throw std::invalid_argument("patch rows must hold p*p pixels, got " + std::to_string(pixels));
  return p;
}

template <typename T>
void check_slots(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan) {
  const auto& pv = g.value(preds);
  if (pv.shape() != targets.shape()) {
    throw std::invalid_argument("predictions " + shape_string(pv.shape()) + " and targets " +
                                shape_string(targets.shape()) + " differ");
  }
  if (pv.rows() != plan.n * plan.c) {
    throw std::invalid_argument("prediction rows (" + std::to_string(pv.rows()) + ") != n*c (" +
                                std::to_string(plan.n * plan.c) + ")");
  }
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& src, const std::vector<std::size_t>& rows) {
  Tensor<T> out = Tensor<T>::matrix(rows.size(), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(src.data() + rows[r] * src.cols(), src.cols(), out.data() + r * src.cols());
  return out;
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_f >= 0.0 && lambda_f <= 1.0)) throw std::invalid_argument("lambda_f must lie in [0, 1]");
  if (!(lambda_recon >= 0.0 && lambda_recon <= 1.0)) throw std::invalid_argument("lambda_recon must lie in [0, 1]");
  if (!(lambda_d >= 0.0)) throw std::invalid_argument("lambda_d must be >= 0");
}

template <typename T>
ad::Var pixel_loss(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan) {
  check_slots(g, preds, targets, plan);
  const auto slots = plan.masked_slots();
  if (slots.empty()) {
    warn_empty_mask("pixel_loss");
    return g.constant(Tensor<T>::matrix(1, 1));
  }
  const T norm = T(1) / (T(slots.size()) * T(targets.cols()));
  ad::Var diff = g.sub(g.gather_rows(preds, slots), g.constant(select_rows(targets, slots)));
  return g.scale(g.sum(g.mul(diff, diff)), norm);
}

template <typename T>
ad::Var fourier_loss(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan) {
  check_slots(g, preds, targets, plan);
  const auto slots = plan.masked_slots();
  if (slots.empty()) {
    warn_empty_mask("fourier_loss");
    return g.constant(Tensor<T>::matrix(1, 1));
  }
  const std::size_t pp = targets.cols();
  const std::size_t p = patch_side(pp);
  const Dft2<T> dft(p);
  Tensor<T> target_amp = Tensor<T>::matrix(slots.size(), pp);
  for (std::size_t r = 0; r < slots.size(); ++r) dft.amplitude(targets.row(slots[r]), target_amp.row(r));

  ad::Var pred_amp = g.dft_amplitude(g.gather_rows(preds, slots), p);
  const T norm = T(1) / (T(slots.size()) * T(pp));
  return g.scale(g.sum(g.abs(g.sub(pred_amp, g.constant(std::move(target_amp))))), norm);
}

template <typename T>
ReconTerms recon_loss(ad::Graph<T>& g, ad::Var preds, const Tensor<T>& targets, const MaskPlan& plan,
                      const LossWeights& w) {
  ReconTerms t;
  t.pixel = pixel_loss(g, preds, targets, plan);
  t.fourier = fourier_loss(g, preds, targets, plan);
  t.recon = g.add(g.scale(t.pixel, T(1.0 - w.lambda_f)), g.scale(t.fourier, T(w.lambda_f)));
  return t;
}

template <typename T>
ad::Var task_loss(ad::Graph<T>& g, ad::Var logits, std::size_t label) {
  // Non-finite logits propagate; the training loop reports the step.
  return g.cross_entropy(logits, label);
}

template <typename T>
ad::Var final_loss(ad::Graph<T>& g, ad::Var task, ad::Var reg, ad::Var recon, const LossWeights& w) {
  ad::Var supervised = g.add(task, g.scale(reg, T(w.lambda_d)));
  return g.add(g.scale(supervised, T(1.0 - w.lambda_recon)), g.scale(recon, T(w.lambda_recon)));
}

template <typename T>
ad::Var zero_regularizer(ad::Graph<T>& g, ad::Var, ad::Var) {
  return g.constant(Tensor<T>::matrix(1, 1));
}

template <typename T>
ad::Var channel_token_cosine(ad::Graph<T>& g, ad::Var channel_tokens, ad::Var) {
  const std::size_t c = g.value(channel_tokens).rows();
  if (c < 2) return g.constant(Tensor<T>::matrix(1, 1));
  ad::Var u = g.l2_normalize_rows(channel_tokens);
  ad::Var sim = g.matmul(u, u, /*transpose_b=*/true);
  // Off-diagonal mean; the diagonal of a normalized Gram matrix is all ones.
  return g.scale(g.add_scalar(g.sum(sim), -T(c)), T(1) / T(c * (c - 1)));
}

double recon_loss(double pixel, double fourier, const LossWeights& w) {
  return (1.0 - w.lambda_f) * pixel + w.lambda_f * fourier;
}

double final_loss(double task, double reg, double recon, const LossWeights& w) {
  return (1.0 - w.lambda_recon) * (task + w.lambda_d * reg) + w.lambda_recon * recon;
}

double pixel_loss_value(const Tensor<double>& targets, const Tensor<double>& preds, const MaskPlan& plan) {
  ad::Graph<double> g;
  return g.scalar(pixel_loss(g, g.constant(preds), targets, plan));
}

double fourier_loss_value(const Tensor<double>& targets, const Tensor<double>& preds, const MaskPlan& plan) {
  ad::Graph<double> g;
  return g.scalar(fourier_loss(g, g.constant(preds), targets, plan));
}

std::size_t empty_mask_warnings() { return g_empty_mask_warnings.load(); }

#define CHAMAE_INSTANTIATE(T)                                                                                  \
  template ad::Var pixel_loss<T>(ad::Graph<T>&, ad::Var, const Tensor<T>&, const MaskPlan&);                  \
  template ad::Var fourier_loss<T>(ad::Graph<T>&, ad::Var, const Tensor<T>&, const MaskPlan&);                \
  template ReconTerms recon_loss<T>(ad::Graph<T>&, ad::Var, const Tensor<T>&, const MaskPlan&, const LossWeights&); \
  template ad::Var task_loss<T>(ad::Graph<T>&, ad::Var, std::size_t);                                          \
  template ad::Var final_loss<T>(ad::Graph<T>&, ad::Var, ad::Var, ad::Var, const LossWeights&);                \
  template ad::Var zero_regularizer<T>(ad::Graph<T>&, ad::Var, ad::Var);                                       \
  template ad::Var channel_token_cosine<T>(ad::Graph<T>&, ad::Var, ad::Var);

CHAMAE_INSTANTIATE(float)
CHAMAE_INSTANTIATE(double)
#undef CHAMAE_INSTANTIATE

}  // namespace chamae
