#include "chamae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace chamae {

std::string to_string(MaskBranch branch) {
  switch (branch) {
    case MaskBranch::kPatchOnly: return "patch_only";
    case MaskBranch::kChannelOnly: return "channel_only";
    case MaskBranch::kCombined: return "combined";
  }
  return "?";
}

std::string to_string(MaskStrategy strategy) {
  switch (strategy) {
    case MaskStrategy::kDcp: return "dcp";
    case MaskStrategy::kRandomPatchFixed: return "random_patch_fixed";
    case MaskStrategy::kRandomPatchDynamic: return "random_patch_dynamic";
    case MaskStrategy::kChannelFixed: return "channel_fixed";
    case MaskStrategy::kHcsDynamic: return "hcs_dynamic";
    case MaskStrategy::kChannelPlusPatchFixed: return "channel_plus_patch_fixed";
  }
  return "?";
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
  for (auto st : {MaskStrategy::kDcp, MaskStrategy::kRandomPatchFixed, MaskStrategy::kRandomPatchDynamic,
                  MaskStrategy::kChannelFixed, MaskStrategy::kHcsDynamic, MaskStrategy::kChannelPlusPatchFixed}) {
    if (to_string(st) == s) return st;
  }
  throw std::invalid_argument("unknown mask strategy '" + s + "'");
}

MaskPlan MaskPlan::empty(std::size_t n, std::size_t c) {
  MaskPlan p;
  p.n = n;
  p.c = c;
  p.mask.assign(n * c, 0);
  return p;
}

std::size_t MaskPlan::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::size_t MaskPlan::column_sum(std::size_t channel) const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < n; ++i) s += mask[i * c + channel];
  return s;
}

std::vector<std::size_t> MaskPlan::masked_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < n; ++i)
      if (masked(i, j)) out.push_back(j * n + i);
  return out;
}

std::vector<std::size_t> MaskPlan::visible_slots() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < n; ++i)
      if (!masked(i, j)) out.push_back(j * n + i);
  return out;
}

void MaskConfig::validate() const {
  if (!(patch_ratio >= 0.0 && patch_ratio < 1.0)) throw std::invalid_argument("patch mask ratio must lie in [0, 1)");
  if (p_patch < 0.0 || p_channel < 0.0 || p_patch > 1.0 || p_channel > 1.0 || p_patch + p_channel > 1.0) {
    throw std::invalid_argument("p_patch and p_channel must be in [0, 1] with p_patch + p_channel <= 1");
  }
  if (!(channel_ratio >= 0.0 && channel_ratio < 1.0)) throw std::invalid_argument("channel mask ratio must lie in [0, 1)");
  for (double r : dynamic_ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("dynamic patch ratios must lie in [0, 1)");
  }
  if (strategy == MaskStrategy::kRandomPatchDynamic && dynamic_ratios.empty()) {
    throw std::invalid_argument("dynamic patch masking needs at least one ratio");
  }
}

MaskConfig MaskConfig::dcp_combination() {
  MaskConfig cfg;
  cfg.p_patch = 0.0;
  cfg.p_channel = 0.0;
  cfg.patch_ratio = 0.25;
  return cfg;
}

MaskConfig MaskConfig::dcp_alternate() {
  MaskConfig cfg;
  cfg.p_patch = 0.5;
  cfg.p_channel = 0.5;
  cfg.patch_ratio = 0.75;
  return cfg;
}

MaskConfig MaskConfig::random_patch(double ratio) {
  MaskConfig cfg;
  cfg.strategy = MaskStrategy::kRandomPatchFixed;
  cfg.patch_ratio = ratio;
  return cfg;
}

namespace {

// First k entries of a partial Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Philox& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

std::size_t floor_count(std::size_t total, double ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratio + 1e-9));
}

MaskPlan channel_plan(std::size_t n, std::size_t c, const std::vector<std::size_t>& channels, Philox& rng) {
  MaskPlan plan = MaskPlan::empty(n, c);
  plan.branch = MaskBranch::kChannelOnly;
  for (std::size_t j : channels) {
    for (std::size_t i = 0; i < n; ++i) plan.mask[i * c + j] = 1;
    plan.masked_channels.push_back(static_cast<int>(j));
  }
  std::sort(plan.masked_channels.begin(), plan.masked_channels.end());
  plan.seed_trace = rng.trace();
  return plan;
}

MaskPlan union_of(const MaskPlan& patch, const MaskPlan& channel) {
  MaskPlan plan = MaskPlan::empty(patch.n, patch.c);
  plan.branch = MaskBranch::kCombined;
  for (std::size_t i = 0; i < plan.mask.size(); ++i) plan.mask[i] = patch.mask[i] | channel.mask[i];
  plan.masked_channels = channel.masked_channels;
  plan.patch_ratio = patch.patch_ratio;
  plan.patch_component = patch.mask;
  plan.channel_component = channel.mask;
  plan.seed_trace = patch.seed_trace + "|" + channel.seed_trace;
  return plan;
}

}  // namespace

MaskPlan random_patch_mask(std::size_t n, std::size_t c, double ratio, bool independent_spatial, Philox rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("patch mask ratio must lie in [0, 1); got " + std::to_string(ratio));
  }
  MaskPlan plan = MaskPlan::empty(n, c);
  plan.branch = MaskBranch::kPatchOnly;
  plan.strategy = MaskStrategy::kRandomPatchFixed;
  plan.patch_ratio = ratio;
  const std::size_t k = floor_count(n, ratio);
  std::vector<std::size_t> shared;
  for (std::size_t j = 0; j < c; ++j) {
    if (independent_spatial || j == 0) shared = sample_without_replacement(n, k, rng);
    for (std::size_t i : shared) plan.mask[i * c + j] = 1;
  }
  plan.seed_trace = rng.trace();
  return plan;
}

MaskPlan dynamic_channel_mask(std::size_t n, std::size_t c, Philox rng) {
  if (c == 0) throw std::invalid_argument("dynamic channel mask needs at least one channel");
  const std::size_t k = static_cast<std::size_t>(rng.below(c));  // k ~ U{0, ..., c-1}
  auto channels = sample_without_replacement(c, k, rng);
  MaskPlan plan = channel_plan(n, c, channels, rng);
  plan.strategy = MaskStrategy::kHcsDynamic;
  return plan;
}

MaskPlan fixed_channel_mask(std::size_t n, std::size_t c, double channel_ratio, Philox rng) {
  if (!(channel_ratio >= 0.0 && channel_ratio < 1.0)) throw std::invalid_argument("channel mask ratio must lie in [0, 1)");
  const std::size_t k = std::min(floor_count(c, channel_ratio), c == 0 ? 0 : c - 1);
  auto channels = sample_without_replacement(c, k, rng);
  MaskPlan plan = channel_plan(n, c, channels, rng);
  plan.strategy = MaskStrategy::kChannelFixed;
  return plan;
}

MaskPlan dcp_mask_with_selection(std::size_t n, std::size_t c, const MaskConfig& cfg, double s, Philox rng) {
  cfg.validate();
  MaskPlan patch = random_patch_mask(n, c, cfg.patch_ratio, cfg.independent_spatial, rng.derive(kPatchStream));
  MaskPlan channel = dynamic_channel_mask(n, c, rng.derive(kChannelStream));
  MaskPlan out;
  if (s < cfg.p_patch) {
    out = std::move(patch);
  } else if (s < cfg.p_patch + cfg.p_channel) {
    out = std::move(channel);
  } else {
    out = union_of(patch, channel);
  }
  out.strategy = MaskStrategy::kDcp;
  return out;
}

MaskPlan dcp_mask(std::size_t n, std::size_t c, const MaskConfig& cfg, Philox rng) {
  Philox select = rng.derive(kSelectStream);
  return dcp_mask_with_selection(n, c, cfg, select.uniform(), rng);
}

MaskPlan baseline_mask(std::size_t n, std::size_t c, const MaskConfig& cfg, Philox rng) {
  cfg.validate();
  switch (cfg.strategy) {
    case MaskStrategy::kRandomPatchFixed:
      return random_patch_mask(n, c, cfg.patch_ratio, cfg.independent_spatial, rng.derive(kPatchStream));
    case MaskStrategy::kRandomPatchDynamic: {
      Philox pick = rng.derive(kRatioStream);
      const double ratio = cfg.dynamic_ratios[pick.below(cfg.dynamic_ratios.size())];
      MaskPlan plan = random_patch_mask(n, c, ratio, cfg.independent_spatial, rng.derive(kPatchStream));
      plan.strategy = MaskStrategy::kRandomPatchDynamic;
      return plan;
    }
    case MaskStrategy::kChannelFixed:
      return fixed_channel_mask(n, c, cfg.channel_ratio, rng.derive(kChannelStream));
    case MaskStrategy::kHcsDynamic:
      return dynamic_channel_mask(n, c, rng.derive(kChannelStream));
    case MaskStrategy::kChannelPlusPatchFixed: {
      MaskPlan channel = fixed_channel_mask(n, c, cfg.channel_ratio, rng.derive(kChannelStream));
      MaskPlan patch = random_patch_mask(n, c, cfg.patch_ratio, cfg.independent_spatial, rng.derive(kPatchStream));
      MaskPlan plan = union_of(patch, channel);
      plan.strategy = MaskStrategy::kChannelPlusPatchFixed;
      return plan;
    }
    case MaskStrategy::kDcp:
      break;
  }
  throw std::invalid_argument("baseline_mask: strategy " + to_string(cfg.strategy) + " is not a baseline");
}

MaskPlan draw_mask(std::size_t n, std::size_t c, const MaskConfig& cfg, Philox rng) {
  return cfg.strategy == MaskStrategy::kDcp ? dcp_mask(n, c, cfg, rng) : baseline_mask(n, c, cfg, rng);
}

}  // namespace chamae
