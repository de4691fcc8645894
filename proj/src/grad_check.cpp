#include "chamae/grad_check.hpp"

#include <cmath>
#include <stdexcept>

#include "chamae/rng.hpp"

namespace chamae {

GradCheckResult grad_check(const LossFn& loss_fn, std::span<const NamedParam> params,
                           const GradCheckOptions& options) {
  if (!(options.epsilon >= 1e-6 && options.epsilon <= 1e-4)) {
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-6, 1e-4]");
  }
  GradCheckResult result;
  std::vector<Tensor<double>> analytic;
  const double base = loss_fn(&analytic);
  if (!std::isfinite(base)) {
    result.finite = false;
    result.failure = "loss is non-finite at the unperturbed point";
    return result;
  }
  if (analytic.size() != params.size()) throw std::logic_error("grad_check: loss_fn returned wrong gradient count");

  Philox rng(options.seed, 0x67726164ULL);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& t = *params[p].tensor;
    if (analytic[p].size() != t.size()) {
      throw std::logic_error("grad_check: gradient shape mismatch for " + params[p].name);
    }
    std::vector<std::size_t> coords;
    if (t.size() <= options.max_coords_per_param) {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t s = 0; s < options.max_coords_per_param; ++s) coords.push_back(rng.below(t.size()));
    }
    for (std::size_t i : coords) {
      const double saved = t[i];
      t[i] = saved + options.epsilon;
      const double up = loss_fn(nullptr);
      t[i] = saved - options.epsilon;
      const double down = loss_fn(nullptr);
      t[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.finite = false;
        result.failure = params[p].name + "[" + std::to_string(i) + "]";
        return result;
      }
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double rel = std::abs(analytic[p][i] - numeric) / (std::abs(numeric) + 1e-12);
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_param = params[p].name;
          result.worst_index = i;
          result.worst_analytic = analytic[p][i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace chamae
