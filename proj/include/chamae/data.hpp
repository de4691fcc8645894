#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "chamae/model.hpp"
#include "chamae/tokenizer.hpp"

namespace chamae {

/// Synthetic multi-channel set whose label needs two channels at once.
///
/// The two `pair` channels each hold an oriented grating whose orientation
/// index a, b is uniform on {0..K-1}; the label is (a + b) mod K, so either
/// channel alone carries no label information (K = 2 is plain XOR). The
/// `texture_channel` holds a checker texture whose scale matches the label
/// with probability `texture_agreement` and is another class otherwise.
/// Remaining channels are gratings with random orientation.
struct SynthSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 8;
  std::size_t channels = 4;
  std::size_t num_classes = 3;
  std::vector<int> pair{0, 1};  // channel indices carrying the label
  int texture_channel = 2;      // -1 disables the texture cue
  double texture_agreement = 0.55;
  double noise_sigma = 0.1;
  bool shared_cell = false;  // one cell centre per image, channel-specific envelope shapes
  std::size_t train = 2048;
  std::size_t val = 512;
  std::size_t test = 512;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledSample {
  MultiChannelImage image;
  std::size_t label = 0;
  std::vector<int> attributes;  // latent attribute per channel; empty when loaded from disk
};

struct Dataset {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
  std::vector<LabeledSample> test;
};

enum class Split : std::uint64_t { kTrain = 1, kVal = 2, kTest = 3 };

Dataset generate(const SynthSpec& spec);
std::vector<LabeledSample> generate_split(const SynthSpec& spec, Split split, std::size_t count);

/// Mean and standard deviation per channel id over a set of images.
std::map<int, ChannelNorm> channel_statistics(std::span<const LabeledSample> samples);
/// Per-channel standardization; channels without statistics pass through.
MultiChannelImage standardize(const MultiChannelImage& image, const std::map<int, ChannelNorm>& stats);

// ------------------------------------------------------------------ MCIF
//
// "MCIF" | u8 version (1) | u8 flags (bit 0: label present) | u16 h | u16 w |
// u16 c | c x u16 channel id | h*w*c f32 (channel-major, row-major) |
// [u16 label]. All integers and floats little-endian.

enum class McifErrorKind { kIo, kBadMagic, kBadVersion, kTruncated, kChannelCount };

class McifError : public std::runtime_error {
 public:
  McifError(McifErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  McifErrorKind kind() const { return kind_; }

 private:
  McifErrorKind kind_;
};

struct McifRecord {
  MultiChannelImage image;
  std::optional<std::uint16_t> label;
};

std::vector<std::uint8_t> encode_mcif(const MultiChannelImage& image, std::optional<std::uint16_t> label = std::nullopt);
McifRecord decode_mcif(std::span<const std::uint8_t> bytes);

void save_mcif(const std::filesystem::path& path, const MultiChannelImage& image,
               std::optional<std::uint16_t> label = std::nullopt);
MultiChannelImage load_mcif(const std::filesystem::path& path);
McifRecord load_mcif_record(const std::filesystem::path& path);

/// One labeled MCIF file per sample, named by index.
void save_split(const std::filesystem::path& dir, std::span<const LabeledSample> samples);
std::vector<LabeledSample> load_split(const std::filesystem::path& dir);

}  // namespace chamae
