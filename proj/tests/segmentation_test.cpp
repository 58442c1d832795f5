#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "streetreview/segmentation.hpp"

using namespace streetreview;
using namespace streetreview::segmentation;

namespace {

ConfidenceMap constant_map(std::uint32_t w, std::uint32_t h, float v) {
  return {w, h, std::vector<float>(std::size_t{w} * h * kNumClasses, v)};
}

RgbImage random_image(std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img{w, h, {}};
  for (std::size_t i = 0; i < img.pixels() * 3; ++i) img.rgb.push_back(static_cast<std::uint8_t>(rng.below(256)));
  return img;
}

// Hand-built SRCM with an arbitrary class list.
std::string srcm_with_classes(const std::vector<std::string>& names) {
  ByteWriter w;
  w.bytes("SRCM");
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(1);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(names.size()));
  for (const auto& n : names) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(n.size()));
    w.bytes(n);
  }
  for (std::size_t i = 0; i < names.size(); ++i) w.put<float>(0.5f);
  return w.str();
}

}  // namespace

TEST(Classes, RetainedProjection) {
  EXPECT_EQ(kClassNames.size(), 19u);
  std::vector<std::string> retained;
  for (auto c : kRetainedClasses) retained.emplace_back(kClassNames[c]);
  EXPECT_EQ(retained, (std::vector<std::string>{"sidewalk", "building", "wall", "fence", "pole",
                                                "traffic_light", "traffic_sign", "vegetation", "terrain"}));
  EXPECT_EQ(kFeatureNames[kSidewalkFeature], "sidewalk");
}

TEST(Srcm, ConstantMapAndRoundTrip) {
  const auto m = constant_map(2, 2, 0.5f);
  const auto back = decode_confidence_map(encode_confidence_map(m));
  EXPECT_EQ(back.data.size(), 76u);
  for (float v : back.data) EXPECT_EQ(v, 0.5f);

  Rng rng(1);
  ConfidenceMap r{3, 5, {}};
  for (int i = 0; i < 3 * 5 * 19; ++i) r.data.push_back(static_cast<float>(rng.uniform()));
  const auto path = std::filesystem::temp_directory_path() / "sr_rt.srcm";
  write_confidence_map(r, path);
  EXPECT_TRUE(load_confidence_map(path) == r);
  std::filesystem::remove(path);
}

TEST(Srcm, ByteLayout) {
  const auto bytes = encode_confidence_map(constant_map(1, 1, 1.0f));
  EXPECT_EQ(bytes.substr(0, 4), "SRCM");
  ByteReader r(bytes, "t");
  r.bytes(4);
  EXPECT_EQ(r.get<std::uint16_t>(), 1);
  EXPECT_EQ(r.get<std::uint32_t>(), 1u);
  EXPECT_EQ(r.get<std::uint32_t>(), 1u);
  EXPECT_EQ(r.get<std::uint16_t>(), 19);
  EXPECT_EQ(r.get<std::uint16_t>(), 4);
  EXPECT_EQ(r.bytes(4), "road");
}

TEST(Srcm, Errors) {
  auto bytes = encode_confidence_map(constant_map(1, 1, 0.2f));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_confidence_map(bad_magic), Error);
  EXPECT_THROW(decode_confidence_map(bytes.substr(0, bytes.size() - 2)), Error);

  std::vector<std::string> names(kClassNames.begin(), kClassNames.end());
  EXPECT_NO_THROW(decode_confidence_map(srcm_with_classes(names)));
  auto missing = names;
  missing.erase(std::find(missing.begin(), missing.end(), "terrain"));
  try {
    decode_confidence_map(srcm_with_classes(missing));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class"), std::string::npos);
  }
  auto out_of_range = constant_map(1, 1, 0.2f);
  out_of_range.data[3] = 1.5f;
  EXPECT_THROW(decode_confidence_map(encode_confidence_map(out_of_range)), Error);
  EXPECT_THROW(decode_confidence_map(bytes + "x"), Error);
}

TEST(Srim, RoundTrip) {
  const auto img = random_image(4, 3, 2);
  EXPECT_TRUE(decode_image(encode_image(img)) == img);
  EXPECT_THROW(decode_image(encode_image(img).substr(0, 20)), Error);
}

TEST(MockSegment, DeterministicSeededInRange) {
  const auto img = random_image(6, 4, 3);
  const auto a = mock_segment(img, 1), b = mock_segment(img, 1), c = mock_segment(img, 2);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  for (float v : a.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto one = mock_segment(random_image(1, 1, 4), 0);
  EXPECT_EQ(one.data.size(), 19u);
  EXPECT_THROW(mock_segment(RgbImage{}, 0), Error);
}

TEST(Features, HandComputedTwoByTwo) {
  RgbImage img{2, 2, {255, 0, 51, 0, 255, 102, 10, 20, 30, 255, 255, 255}};
  ConfidenceMap cm = constant_map(2, 2, 0.0f);
  for (std::size_t px = 0; px < 4; ++px)
    for (std::size_t c = 0; c < kNumClasses; ++c)
      cm.at(px, c) = static_cast<float>(0.01 * static_cast<double>(c * (px + 1)));
  const auto seq = extract_features(img, cm, 4, 99, "f");
  ASSERT_EQ(seq.size(), 4u);
  // Row 0: pixel 0 = (255, 0, 51), sidewalk..terrain confidences = 0.01 * (1..9).
  const std::vector<double> row0 = {1.0, 0.0, 0.2, 0.01f * 1, 0.01f * 2, 0.01f * 3, 0.01f * 4,
                                    0.01f * 5, 0.01f * 6, 0.01f * 7, 0.01f * 8, 0.01f * 9};
  for (std::size_t c = 0; c < 12; ++c) EXPECT_NEAR(seq.at(0, c), row0[c], 1e-6) << c;
  EXPECT_DOUBLE_EQ(seq.at(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(seq.at(1, 2), 0.4);
  EXPECT_DOUBLE_EQ(seq.at(2, 0), 10 / 255.0);
  EXPECT_EQ(seq.at(3, 3), static_cast<double>(cm.at(3, 1)));
  EXPECT_EQ(seq.at(3, 11), static_cast<double>(cm.at(3, 9)));
}

TEST(Features, ZeroImageGivesZeroRows) {
  RgbImage img{3, 3, std::vector<std::uint8_t>(27, 0)};
  const auto seq = extract_features(img, constant_map(3, 3, 0.0f), 5, 1);
  EXPECT_EQ(seq.size(), 5u);
  for (double v : seq.rows) EXPECT_EQ(v, 0.0);
}

TEST(Features, SamplingWithoutReplacementAndDeterminism) {
  const auto img = random_image(64, 64, 5);
  const auto cm = mock_segment(img, 5);
  const auto a = extract_features(img, cm, 1024, 17), b = extract_features(img, cm, 1024, 17);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == extract_features(img, cm, 1024, 18));
  // Pixels are identifiable by (r, g, b, sidewalk conf) with overwhelming
  // probability here; use the full row as the identity.
  std::set<std::vector<double>> rows;
  for (std::size_t r = 0; r < a.size(); ++r)
    rows.insert(std::vector<double>(a.rows.begin() + r * 12, a.rows.begin() + (r + 1) * 12));
  EXPECT_EQ(rows.size(), 1024u);
  for (double v : a.rows) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Features, DroppedClassesHaveNoInfluence) {
  const auto img = random_image(5, 5, 8);
  auto cm = mock_segment(img, 8);
  const auto before = extract_features(img, cm, 25, 0);
  for (std::size_t px = 0; px < cm.pixels(); ++px)
    for (std::size_t c : {0, 10, 11, 12, 13, 14, 15, 16, 17, 18}) cm.at(px, c) = 1.0f - cm.at(px, c);
  EXPECT_TRUE(extract_features(img, cm, 25, 0) == before);
  // Columns 4..12 (1-based) are the retained channels, exhaustively.
  for (std::size_t px = 0; px < 25; ++px)
    for (std::size_t k = 0; k < kRetainedClasses.size(); ++k)
      EXPECT_EQ(before.at(px, 3 + k), static_cast<double>(cm.at(px, kRetainedClasses[k])));
}

TEST(Features, Errors) {
  const auto img = random_image(2, 2, 1);
  EXPECT_THROW(extract_features(img, constant_map(2, 3, 0), 4, 0), Error);
  EXPECT_THROW(extract_features(img, constant_map(2, 2, 0), 0, 0), Error);
}

TEST(FeatureStore, RoundTrip) {
  const auto img = random_image(4, 4, 2);
  std::vector<FeatureSequence> seqs = {extract_features(img, mock_segment(img, 1), 5, 3, "a"),
                                       extract_features(img, mock_segment(img, 2), 16, 4, "bb")};
  const auto bytes = encode_feature_store(seqs);
  EXPECT_EQ(decode_feature_store(bytes), seqs);
  EXPECT_THROW(decode_feature_store(bytes.substr(0, bytes.size() - 1)), Error);
}
