#include "chamae/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>

#include "chamae/rng.hpp"

namespace chamae {

void SynthSpec::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw std::invalid_argument("synthetic image size must be divisible by the patch size");
  }
  if (channels < 2) throw std::invalid_argument("synthetic data needs at least two channels");
  if (num_classes < 2) throw std::invalid_argument("synthetic data needs at least two classes");
  if (pair.size() != 2 || pair[0] == pair[1]) throw std::invalid_argument("pair must name two distinct channels");
  for (int ch : pair) {
    if (ch < 0 || static_cast<std::size_t>(ch) >= channels) throw std::invalid_argument("pair channel out of range");
  }
  if (texture_channel >= 0) {
    if (static_cast<std::size_t>(texture_channel) >= channels || texture_channel == pair[0] || texture_channel == pair[1]) {
      throw std::invalid_argument("texture channel must be a channel outside the pair");
    }
  }
  if (!(texture_agreement >= 0.0 && texture_agreement <= 1.0)) throw std::invalid_argument("texture agreement must be in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
}

namespace {

enum class Role { kPair, kTexture, kDistractor };

Role role_of(const SynthSpec& spec, std::size_t ch) {
  const int c = static_cast<int>(ch);
  if (c == spec.pair[0] || c == spec.pair[1]) return Role::kPair;
  if (c == spec.texture_channel) return Role::kTexture;
  return Role::kDistractor;
}

// Envelope that carries the pattern. By default each channel gets its own
// randomly placed blob with a floor that keeps the pattern visible in every
// patch. With a shared cell, all channels are centred on one point and the
// radial profile depends on the channel index (compact, ring, broad, ...);
// the pattern rides on the envelope at half depth so the shape dominates.
struct Blob {
  double cy, cx, radius, spread, floor;
  double depth = 1.0;  // modulation depth of the carried pattern

  Blob(const MultiChannelImage& img, Philox& rng)
      : cy(rng.uniform() * static_cast<double>(img.height)),
        cx(rng.uniform() * static_cast<double>(img.width)),
        radius(0.0),
        spread(0.35 * static_cast<double>(std::max(img.height, img.width))),
        floor(0.3) {}

  Blob(const MultiChannelImage& img, std::size_t ch, double cell_y, double cell_x)
      : cy(cell_y), cx(cell_x), floor(0.0), depth(0.5) {
    // {radius, spread} as fractions of the image size, cycled by channel index.
    static constexpr double kProfiles[4][2] = {{0.0, 0.12}, {0.28, 0.06}, {0.0, 0.30}, {0.16, 0.05}};
    const double size = static_cast<double>(std::max(img.height, img.width));
    radius = kProfiles[ch % 4][0] * size;
    spread = kProfiles[ch % 4][1] * size;
  }

  double operator()(std::size_t y, std::size_t x) const {
    const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
    double r2 = dx * dx + dy * dy;
    if (radius > 0.0) r2 = (std::sqrt(r2) - radius) * (std::sqrt(r2) - radius);
    return floor + (1.0 - floor) * std::exp(-r2 / (2.0 * spread * spread));
  }
};

// Oriented grating; orientation index `attribute` of `classes`.
void render_grating(MultiChannelImage& img, std::size_t ch, int attribute, std::size_t classes, Philox& rng,
                    const std::optional<Blob>& cell) {
  const double theta = std::numbers::pi * attribute / static_cast<double>(classes);
  const double period = 6.0;
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  const Blob blob = cell ? *cell : Blob(img, rng);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
      const double wave = std::sin(2.0 * std::numbers::pi * u / period + phase);
      img.at(ch, y, x) = static_cast<float>(blob(y, x) * 0.5 * (1.0 + blob.depth * wave));
    }
  }
}

// Checker texture whose cell period encodes the attribute.
void render_texture(MultiChannelImage& img, std::size_t ch, int attribute, Philox& rng, const std::optional<Blob>& cell) {
  const double period = 3.0 + 2.0 * attribute;
  const double px = 2.0 * std::numbers::pi * rng.uniform();
  const double py = 2.0 * std::numbers::pi * rng.uniform();
  const Blob blob = cell ? *cell : Blob(img, rng);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = std::sin(2.0 * std::numbers::pi * static_cast<double>(x) / period + px) *
                       std::sin(2.0 * std::numbers::pi * static_cast<double>(y) / period + py);
      img.at(ch, y, x) = static_cast<float>(blob(y, x) * 0.5 * (1.0 + blob.depth * v));
    }
  }
}

LabeledSample make_sample(const SynthSpec& spec, std::size_t label, Philox rng) {
  const auto K = static_cast<int>(spec.num_classes);
  std::vector<int> ids(spec.channels);
  for (std::size_t j = 0; j < spec.channels; ++j) ids[j] = static_cast<int>(j);
  LabeledSample s{MultiChannelImage(spec.height, spec.width, ids), label, std::vector<int>(spec.channels, 0)};

  const int a = static_cast<int>(rng.below(spec.num_classes));
  double cell_y = 0.0, cell_x = 0.0;
  if (spec.shared_cell) {
    cell_y = (0.3 + 0.4 * rng.uniform()) * static_cast<double>(spec.height);
    cell_x = (0.3 + 0.4 * rng.uniform()) * static_cast<double>(spec.width);
  }
  auto cell = [&](std::size_t ch) {
    return spec.shared_cell ? std::optional<Blob>(Blob(s.image, ch, cell_y, cell_x)) : std::nullopt;
  };
  const int b = ((static_cast<int>(label) - a) % K + K) % K;
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    switch (role_of(spec, ch)) {
      case Role::kPair:
        s.attributes[ch] = static_cast<int>(ch) == spec.pair[0] ? a : b;
        render_grating(s.image, ch, s.attributes[ch], spec.num_classes, rng, cell(ch));
        break;
      case Role::kTexture: {
        int t = static_cast<int>(label);
        if (rng.uniform() >= spec.texture_agreement) {
          t = (t + 1 + static_cast<int>(rng.below(spec.num_classes - 1))) % K;
        }
        s.attributes[ch] = t;
        render_texture(s.image, ch, t, rng, cell(ch));
        break;
      }
      case Role::kDistractor:
        s.attributes[ch] = static_cast<int>(rng.below(spec.num_classes));
        render_grating(s.image, ch, s.attributes[ch], spec.num_classes, rng, cell(ch));
        break;
    }
  }
  if (spec.noise_sigma > 0.0) {
    for (auto& v : s.image.pixels.storage()) v += static_cast<float>(spec.noise_sigma * rng.normal());
  }
  return s;
}

}  // namespace

std::vector<LabeledSample> generate_split(const SynthSpec& spec, Split split, std::size_t count) {
  spec.validate();
  Philox root(spec.seed, static_cast<std::uint64_t>(split));
  // Stratified labels, then shuffled: class counts differ by at most one.
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % spec.num_classes;
  Philox shuffle = root.derive(0x73687566ULL);
  for (std::size_t i = count; i > 1; --i) std::swap(labels[i - 1], labels[shuffle.below(i)]);

  std::vector<LabeledSample> out(count);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(count); ++i) {
    out[i] = make_sample(spec, labels[i], root.derive(static_cast<std::uint64_t>(i) + 1));
  }
  return out;
}

Dataset generate(const SynthSpec& spec) {
  return {generate_split(spec, Split::kTrain, spec.train), generate_split(spec, Split::kVal, spec.val),
          generate_split(spec, Split::kTest, spec.test)};
}

std::map<int, ChannelNorm> channel_statistics(std::span<const LabeledSample> samples) {
  std::map<int, std::pair<double, double>> sums;
  std::map<int, std::size_t> counts;
  for (const auto& s : samples) {
    const auto& img = s.image;
    const std::size_t plane = img.height * img.width;
    for (std::size_t j = 0; j < img.channels(); ++j) {
      auto& acc = sums[img.channel_ids[j]];
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = img.pixels[j * plane + k];
        acc.first += v;
        acc.second += v * v;
      }
      counts[img.channel_ids[j]] += plane;
    }
  }
  std::map<int, ChannelNorm> out;
  for (const auto& [id, acc] : sums) {
    const double n = static_cast<double>(counts[id]);
    const double mean = acc.first / n;
    const double var = std::max(acc.second / n - mean * mean, 0.0);
    out[id] = {mean, std::max(std::sqrt(var), 1e-6)};
  }
  return out;
}

MultiChannelImage standardize(const MultiChannelImage& image, const std::map<int, ChannelNorm>& stats) {
  MultiChannelImage out = image;
  const std::size_t plane = image.height * image.width;
  for (std::size_t j = 0; j < image.channels(); ++j) {
    auto it = stats.find(image.channel_ids[j]);
    if (it == stats.end()) continue;
    const double mean = it->second.mean, inv = 1.0 / it->second.stddev;
    for (std::size_t k = 0; k < plane; ++k) {
      float& v = out.pixels[j * plane + k];
      v = static_cast<float>((v - mean) * inv);
    }
  }
  return out;
}

}  // namespace chamae
