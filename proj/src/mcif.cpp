#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "chamae/data.hpp"

namespace chamae {

namespace {

constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFlagLabel = 0x01;
constexpr std::size_t kHeaderBytes = 4 + 1 + 1 + 2 + 2 + 2;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(bits >> s));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

float get_f32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t bits = 0;
  for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(b[at + k]) << (8 * k);
  return std::bit_cast<float>(bits);
}

std::uint16_t checked_u16(std::size_t v, const char* what) {
  if (v > 0xFFFF) throw std::invalid_argument(std::string("MCIF: ") + what + " exceeds 65535");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_mcif(const MultiChannelImage& image, std::optional<std::uint16_t> label) {
  image.validate();
  std::vector<std::uint8_t> out;
  const std::size_t count = image.channels() * image.height * image.width;
  out.reserve(kHeaderBytes + 2 * image.channels() + 4 * count + 2);
  out.insert(out.end(), {'M', 'C', 'I', 'F'});
  out.push_back(kVersion);
  out.push_back(label ? kFlagLabel : 0);
  put_u16(out, checked_u16(image.height, "height"));
  put_u16(out, checked_u16(image.width, "width"));
  put_u16(out, checked_u16(image.channels(), "channel count"));
  for (int id : image.channel_ids) {
    if (id < 0) throw std::invalid_argument("MCIF: channel ids must be non-negative");
    put_u16(out, checked_u16(static_cast<std::size_t>(id), "channel id"));
  }
  for (float v : image.pixels.storage()) put_f32(out, v);
  if (label) put_u16(out, *label);
  return out;
}

McifRecord decode_mcif(std::span<const std::uint8_t> b) {
  if (b.size() < 4) throw McifError(McifErrorKind::kTruncated, "MCIF: file shorter than its magic");
  if (std::memcmp(b.data(), "MCIF", 4) != 0) throw McifError(McifErrorKind::kBadMagic, "MCIF: bad magic");
  if (b.size() < kHeaderBytes) throw McifError(McifErrorKind::kTruncated, "MCIF: truncated header");
  if (b[4] != kVersion) {
    throw McifError(McifErrorKind::kBadVersion, "MCIF: unsupported version " + std::to_string(b[4]));
  }
  const std::uint8_t flags = b[5];
  const std::size_t h = get_u16(b, 6), w = get_u16(b, 8), c = get_u16(b, 10);
  if (c == 0) throw McifError(McifErrorKind::kChannelCount, "MCIF: header declares zero channels");

  const std::size_t ids_end = kHeaderBytes + 2 * c;
  const std::size_t pixels_end = ids_end + 4 * h * w * c;
  const std::size_t expected = pixels_end + ((flags & kFlagLabel) ? 2 : 0);
  if (b.size() < expected) {
    throw McifError(McifErrorKind::kTruncated, "MCIF: expected " + std::to_string(expected) + " bytes, found " +
                                                   std::to_string(b.size()));
  }
  if (b.size() > expected) {
    throw McifError(McifErrorKind::kChannelCount, "MCIF: payload of " + std::to_string(b.size()) +
                                                      " bytes disagrees with the declared " + std::to_string(c) +
                                                      " channels");
  }

  std::vector<int> ids(c);
  std::set<int> seen;
  for (std::size_t j = 0; j < c; ++j) {
    ids[j] = get_u16(b, kHeaderBytes + 2 * j);
    if (!seen.insert(ids[j]).second) {
      throw McifError(McifErrorKind::kChannelCount, "MCIF: channel id " + std::to_string(ids[j]) + " listed twice");
    }
  }
  McifRecord rec{MultiChannelImage(h, w, std::move(ids)), std::nullopt};
  auto& px = rec.image.pixels.storage();
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = get_f32(b, ids_end + 4 * k);
  if (flags & kFlagLabel) rec.label = get_u16(b, pixels_end);
  return rec;
}

void save_mcif(const std::filesystem::path& path, const MultiChannelImage& image, std::optional<std::uint16_t> label) {
  const auto bytes = encode_mcif(image, label);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw McifError(McifErrorKind::kIo, "MCIF: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw McifError(McifErrorKind::kIo, "MCIF: write failed for " + path.string());
}

McifRecord load_mcif_record(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw McifError(McifErrorKind::kIo, "MCIF: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_mcif(bytes);
}

MultiChannelImage load_mcif(const std::filesystem::path& path) { return load_mcif_record(path).image; }

void save_split(const std::filesystem::path& dir, std::span<const LabeledSample> samples) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.mcif", i);
    save_mcif(dir / name, samples[i].image, checked_u16(samples[i].label, "label"));
  }
}

std::vector<LabeledSample> load_split(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mcif") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledSample> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    McifRecord rec = load_mcif_record(f);
    if (!rec.label) throw McifError(McifErrorKind::kIo, "MCIF: " + f.string() + " carries no label");
    out.push_back({std::move(rec.image), *rec.label, {}});
  }
  return out;
}

}  // namespace chamae
