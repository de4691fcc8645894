#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "chamae/rng.hpp"

namespace chamae {

enum class MaskBranch { kPatchOnly, kChannelOnly, kCombined };

enum class MaskStrategy {
  kDcp,
  kRandomPatchFixed,
  kRandomPatchDynamic,
  kChannelFixed,
  kHcsDynamic,
  kChannelPlusPatchFixed,
};

std::string to_string(MaskBranch branch);
std::string to_string(MaskStrategy strategy);
MaskStrategy mask_strategy_from_string(const std::string& s);

/// n x c binary mask (1 = masked) with the provenance of how it was drawn.
struct MaskPlan {
  std::size_t n = 0;
  std::size_t c = 0;
  std::vector<std::uint8_t> mask;  // row-major n x c: mask[i * c + j]
  MaskBranch branch = MaskBranch::kPatchOnly;
  MaskStrategy strategy = MaskStrategy::kDcp;
  std::vector<int> masked_channels;  // column indices masked in full by the channel component
  double patch_ratio = 0.0;          // r_p used by the patch component, if any
  std::string seed_trace;
  // Constituents of a combined plan, kept so the union can be audited.
  std::vector<std::uint8_t> patch_component;
  std::vector<std::uint8_t> channel_component;

  static MaskPlan empty(std::size_t n, std::size_t c);

  bool masked(std::size_t position, std::size_t channel) const { return mask[position * c + channel] != 0; }
  std::size_t masked_count() const;
  std::size_t visible_count() const { return n * c - masked_count(); }
  std::size_t column_sum(std::size_t channel) const;

  /// Slot ids (channel * n + position) in slot order.
  std::vector<std::size_t> masked_slots() const;
  std::vector<std::size_t> visible_slots() const;

  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

struct MaskConfig {
  MaskStrategy strategy = MaskStrategy::kDcp;
  double patch_ratio = 0.75;    // r_p
  double p_patch = 0.5;
  double p_channel = 0.5;
  double channel_ratio = 0.5;   // r_c for the fixed-ratio channel baselines
  bool independent_spatial = true;
  std::vector<double> dynamic_ratios{0.25, 0.5, 0.75};

  void validate() const;

  /// p_patch = p_channel = 0 (always the union), r_p = 0.25.
  static MaskConfig dcp_combination();
  /// p_patch = p_channel = 0.5 (switch per input), r_p = 0.75.
  static MaskConfig dcp_alternate();
  static MaskConfig random_patch(double ratio = 0.75);
};

// Sub-stream tags used by the composite strategies; exposed so a caller can
// regenerate a constituent from the same generator.
inline constexpr std::uint64_t kPatchStream = 1;
inline constexpr std::uint64_t kChannelStream = 2;
inline constexpr std::uint64_t kSelectStream = 3;
inline constexpr std::uint64_t kRatioStream = 4;

MaskPlan random_patch_mask(std::size_t n, std::size_t c, double ratio, bool independent_spatial, Philox rng);
MaskPlan dynamic_channel_mask(std::size_t n, std::size_t c, Philox rng);
MaskPlan fixed_channel_mask(std::size_t n, std::size_t c, double channel_ratio, Philox rng);

/// Three-way rule on s ~ U(0,1): patch mask if s < p_patch, channel mask if
/// s < p_patch + p_channel, otherwise their union.
MaskPlan dcp_mask(std::size_t n, std::size_t c, const MaskConfig& cfg, Philox rng);
/// Same rule with the selection value supplied by the caller.
MaskPlan dcp_mask_with_selection(std::size_t n, std::size_t c, const MaskConfig& cfg, double s, Philox rng);

MaskPlan baseline_mask(std::size_t n, std::size_t c, const MaskConfig& cfg, Philox rng);

/// Dispatches on cfg.strategy.
MaskPlan draw_mask(std::size_t n, std::size_t c, const MaskConfig& cfg, Philox rng);

}  // namespace chamae
