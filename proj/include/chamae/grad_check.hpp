#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chamae/tensor.hpp"

namespace chamae {

struct NamedParam {
  std::string name;
  Tensor<double>* tensor;
};

/// Evaluates the loss at the current parameter values. When `grads` is not
/// null it must also fill one analytic gradient per parameter, same order.
using LossFn = std::function<double(std::vector<Tensor<double>>* grads)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Coordinates sampled per parameter; parameters at or below this size are checked exhaustively.
  std::size_t max_coords_per_param = 24;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  bool finite = true;
  std::string failure;  // offending parameter path when a loss evaluation was non-finite

  bool passed(double tolerance) const { return finite && max_rel_error <= tolerance; }
};

/// Central-difference check of analytic gradients:
/// max over sampled coordinates of |analytic - fd| / (|fd| + 1e-12).
/// Parameters are perturbed in place and restored bit-exactly.
GradCheckResult grad_check(const LossFn& loss_fn, std::span<const NamedParam> params,
                           const GradCheckOptions& options = {});

}  // namespace chamae
