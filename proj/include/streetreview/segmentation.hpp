#pragma once

// Per-pixel class confidences (SRCM files or a deterministic mock) and the
// 12-dimensional pixel features the model consumes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "streetreview/core.hpp"

namespace streetreview::segmentation {

// CityScapes class set, canonical order.
inline constexpr std::array<std::string_view, 19> kClassNames = {
    "road",  "sidewalk", "building", "wall",  "fence", "pole",       "traffic_light",
    "traffic_sign", "vegetation", "terrain", "sky", "person", "rider", "car",
    "truck", "bus",      "train",    "motorcycle", "bicycle"};
inline constexpr std::size_t kNumClasses = kClassNames.size();

// Channels kept as features, in canonical order: sidewalk .. terrain.
inline constexpr std::array<std::size_t, 9> kRetainedClasses = {1, 2, 3, 4, 5, 6, 7, 8, 9};

inline constexpr std::size_t kFeatureDim = 3 + kRetainedClasses.size();
static_assert(kFeatureDim == 12);

inline constexpr std::array<std::string_view, kFeatureDim> kFeatureNames = {
    "r",    "g",             "b",            "sidewalk",   "building", "wall",
    "fence", "pole", "traffic_light", "traffic_sign", "vegetation", "terrain"};

inline constexpr std::size_t kSidewalkFeature = 3;

struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::size_t pixels() const noexcept { return std::size_t{width} * height; }
  std::uint8_t channel(std::size_t pixel, int c) const { return rgb[pixel * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

struct ConfidenceMap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> data;  // pixel-major, class index fastest

  std::size_t pixels() const noexcept { return std::size_t{width} * height; }
  float at(std::size_t pixel, std::size_t cls) const { return data[pixel * kNumClasses + cls]; }
  float& at(std::size_t pixel, std::size_t cls) { return data[pixel * kNumClasses + cls]; }
  bool operator==(const ConfidenceMap&) const = default;
};

struct FeatureSequence {
  std::string frame_id;
  std::uint64_t sample_seed = 0;
  std::vector<double> rows;  // S x 12, row-major

  std::size_t size() const noexcept { return rows.size() / kFeatureDim; }
  double at(std::size_t row, std::size_t col) const { return rows[row * kFeatureDim + col]; }
  bool operator==(const FeatureSequence&) const = default;
};

// ---------------------------------------------------------------------------
// SRCM: "SRCM" u16 version=1, u32 width, u32 height, u16 class_count=19,
// 19 x (u16 len + UTF-8 name), then width*height*19 float32, all little-endian.

inline std::string encode_confidence_map(const ConfidenceMap& m) {
  if (m.data.size() != m.pixels() * kNumClasses)
    throw invalid_argument("confidence map payload does not match dimensions");
  ByteWriter w;
  w.bytes("SRCM");
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(m.width);
  w.put<std::uint32_t>(m.height);
  w.put<std::uint16_t>(kNumClasses);
  for (auto name : kClassNames) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
  }
  for (float v : m.data) w.put<float>(v);
  return w.str();
}

inline ConfidenceMap decode_confidence_map(std::string_view bytes,
                                           const std::string& what = "SRCM") {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "SRCM") throw format_error(what + ": bad magic");
  if (auto v = r.get<std::uint16_t>(); v != 1)
    throw format_error(what + ": unsupported version " + std::to_string(v));
  ConfidenceMap m;
  m.width = r.get<std::uint32_t>();
  m.height = r.get<std::uint32_t>();
  if (m.width == 0 || m.height == 0) throw format_error(what + ": zero dimension");
  if (auto n = r.get<std::uint16_t>(); n != kNumClasses)
    throw format_error(what + ": class list mismatch (" + std::to_string(n) + " classes)");
  for (auto expected : kClassNames) {
    const auto len = r.get<std::uint16_t>();
    const auto name = r.bytes(len);
    if (name != expected)
      throw format_error(what + ": class list mismatch (expected " + std::string(expected) +
                         ", found " + std::string(name) + ")");
  }
  const std::size_t count = m.pixels() * kNumClasses;
  if (r.remaining() < count * sizeof(float)) throw format_error(what + ": truncated payload");
  m.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = r.get<float>();
    if (!(v >= 0.0f && v <= 1.0f))
      throw format_error(what + ": confidence " + std::to_string(v) + " outside [0,1] at value " +
                         std::to_string(i));
    m.data[i] = v;
  }
  if (r.remaining() != 0) throw format_error(what + ": trailing bytes after payload");
  return m;
}

inline ConfidenceMap load_confidence_map(const std::filesystem::path& path) {
  return decode_confidence_map(read_file(path), path.string());
}

inline void write_confidence_map(const ConfidenceMap& m, const std::filesystem::path& path) {
  write_file_atomic(path, encode_confidence_map(m));
}

// SRIM: "SRIM" u16 version=1, u32 width, u32 height, then width*height*3 RGB bytes.

inline std::string encode_image(const RgbImage& img) {
  if (img.rgb.size() != img.pixels() * 3)
    throw invalid_argument("image payload does not match dimensions");
  ByteWriter w;
  w.bytes("SRIM");
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(img.width);
  w.put<std::uint32_t>(img.height);
  w.bytes(std::string_view(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size()));
  return w.str();
}

inline RgbImage decode_image(std::string_view bytes, const std::string& what = "SRIM") {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "SRIM") throw format_error(what + ": bad magic");
  if (auto v = r.get<std::uint16_t>(); v != 1)
    throw format_error(what + ": unsupported version " + std::to_string(v));
  RgbImage img;
  img.width = r.get<std::uint32_t>();
  img.height = r.get<std::uint32_t>();
  if (img.width == 0 || img.height == 0) throw format_error(what + ": zero dimension");
  const auto payload = r.bytes(img.pixels() * 3);
  img.rgb.assign(payload.begin(), payload.end());
  if (r.remaining() != 0) throw format_error(what + ": trailing bytes after payload");
  return img;
}

inline RgbImage load_image(const std::filesystem::path& path) {
  return decode_image(read_file(path), path.string());
}

inline void write_image(const RgbImage& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_image(img));
}

// ---------------------------------------------------------------------------

// Stand-in segmenter: each confidence is a hash of (x, y, r, g, b, class, seed)
// mapped to [0, 1]. Bit-identical across platforms.
inline ConfidenceMap mock_segment(const RgbImage& image, std::uint64_t seed) {
  if (image.pixels() == 0) throw invalid_argument("mock_segment: empty image");
  ConfidenceMap m{image.width, image.height, std::vector<float>(image.pixels() * kNumClasses)};
  for (std::uint32_t y = 0; y < image.height; ++y)
    for (std::uint32_t x = 0; x < image.width; ++x) {
      const std::size_t px = std::size_t{y} * image.width + x;
      std::uint64_t h = splitmix64(seed);
      h = splitmix64(h ^ (std::uint64_t{x} << 32 | y));
      h = splitmix64(h ^ (std::uint64_t{image.channel(px, 0)} << 16 |
                          std::uint64_t{image.channel(px, 1)} << 8 | image.channel(px, 2)));
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const std::uint64_t v = splitmix64(h + c);
        // 24 bits so the value is exactly representable as float.
        m.at(px, c) = static_cast<float>(v >> 40) / static_cast<float>((1u << 24) - 1);
      }
    }
  return m;
}

// Builds S rows of [r/255, g/255, b/255, retained confidences...]. When S is at
// least the pixel count every pixel is used once in raster order; otherwise a
// seeded uniform sample without replacement, in sampled order.
inline FeatureSequence extract_features(const RgbImage& image, const ConfidenceMap& confmap,
                                        std::size_t sample_size, std::uint64_t seed,
                                        std::string frame_id = {}) {
  if (sample_size == 0) throw invalid_argument("extract_features: sample size must be >= 1");
  if (image.width != confmap.width || image.height != confmap.height)
    throw invalid_argument("extract_features: image " + std::to_string(image.width) + "x" +
                           std::to_string(image.height) + " vs confidence map " +
                           std::to_string(confmap.width) + "x" + std::to_string(confmap.height));
  const std::size_t n = image.pixels();
  if (n == 0) throw invalid_argument("extract_features: empty image");

  std::vector<std::uint32_t> picks;
  if (sample_size >= n) {
    picks.resize(n);
    std::iota(picks.begin(), picks.end(), 0u);
  } else {
    // Partial Fisher-Yates: the first S slots are the sample.
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    Rng rng(seed);
    for (std::size_t i = 0; i < sample_size; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(sample_size);
    picks = std::move(idx);
  }

  FeatureSequence seq{std::move(frame_id), seed, {}};
  seq.rows.reserve(picks.size() * kFeatureDim);
  for (std::uint32_t px : picks) {
    for (int c = 0; c < 3; ++c) seq.rows.push_back(image.channel(px, c) / 255.0);
    for (std::size_t cls : kRetainedClasses) seq.rows.push_back(confmap.at(px, cls));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// SRFS feature store: "SRFS" u16 version=1, u32 count, then per sequence
// u16 id_len + id bytes, u64 sample_seed, u32 rows, rows*12 float64.

inline std::string encode_feature_store(std::span<const FeatureSequence> seqs) {
  ByteWriter w;
  w.bytes("SRFS");
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seqs.size()));
  for (const auto& s : seqs) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.frame_id.size()));
    w.bytes(s.frame_id);
    w.put<std::uint64_t>(s.sample_seed);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    for (double v : s.rows) w.put<double>(v);
  }
  return w.str();
}

inline std::vector<FeatureSequence> decode_feature_store(std::string_view bytes,
                                                         const std::string& what = "SRFS") {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "SRFS") throw format_error(what + ": bad magic");
  if (auto v = r.get<std::uint16_t>(); v != 1)
    throw format_error(what + ": unsupported version " + std::to_string(v));
  const auto count = r.get<std::uint32_t>();
  std::vector<FeatureSequence> out(count);
  for (auto& s : out) {
    const auto len = r.get<std::uint16_t>();
    s.frame_id = std::string(r.bytes(len));
    s.sample_seed = r.get<std::uint64_t>();
    const auto rows = r.get<std::uint32_t>();
    if (rows == 0) throw format_error(what + ": empty sequence for " + s.frame_id);
    s.rows.resize(std::size_t{rows} * kFeatureDim);
    for (double& v : s.rows) v = r.get<double>();
  }
  if (r.remaining() != 0) throw format_error(what + ": trailing bytes after payload");
  return out;
}

}  // namespace streetreview::segmentation
