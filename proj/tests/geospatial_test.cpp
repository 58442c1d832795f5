#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "streetreview/geospatial.hpp"

using namespace streetreview;
using namespace streetreview::geospatial;

namespace {

// Spherical law of cosines; fine for the km-scale distances used here.
double cosine_law_m(LatLon a, LatLon b) {
  const double k = std::numbers::pi / 180.0;
  const double c = std::sin(a.lat * k) * std::sin(b.lat * k) +
                   std::cos(a.lat * k) * std::cos(b.lat * k) * std::cos((b.lon - a.lon) * k);
  return 6'371'000.0 * std::acos(std::clamp(c, -1.0, 1.0));
}

model::Output filled(double v) {
  model::Output o;
  o.fill(v);
  return o;
}

}  // namespace

TEST(Haversine, OneDegreeOfLatitude) {
  EXPECT_NEAR(haversine_m({45.0, -73.0}, {46.0, -73.0}), 6'371'000.0 * std::numbers::pi / 180.0,
              1e-6);
}

TEST(Haversine, MatchesCosineLaw) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    LatLon a{rng.uniform(-60, 60), rng.uniform(-170, 170)};
    LatLon b{a.lat + rng.uniform(-2, 2), a.lon + rng.uniform(-2, 2)};
    const double d = cosine_law_m(a, b);
    EXPECT_NEAR(haversine_m(a, b), d, 1e-6 * d + 1e-3);
  }
}

TEST(SegmentDistance, PerpendicularAndEndpoint) {
  const LatLon a{45.5, -73.60}, b{45.5, -73.58};
  // 10 m north of the midpoint.
  const double dlat = 10.0 / (6'371'000.0 * std::numbers::pi / 180.0);
  EXPECT_NEAR(point_segment_distance_m({45.5 + dlat, -73.59}, a, b), 10.0, 0.01);
  // Beyond endpoint b the distance is to b itself.
  const LatLon beyond{45.5, -73.57};
  EXPECT_NEAR(point_segment_distance_m(beyond, a, b), haversine_m(beyond, b), 0.05);
}

TEST(Assign, ExplicitMembershipWinsAndRadiusApplies) {
  std::vector<SegmentDef> segs{
      {"s1", {{45.5, -73.60}, {45.5, -73.58}}, std::nullopt},
      {"s2", {}, std::vector<std::string>{"far"}},
  };
  const double dlat = 1.0 / (6'371'000.0 * std::numbers::pi / 180.0);
  std::vector<GeoFrame> frames{
      {"near", {45.5 + 20 * dlat, -73.59}},
      {"outside", {45.5 + 40 * dlat, -73.59}},
      {"far", {10.0, 10.0}},
  };
  const auto a = assign_frames(frames, segs, 30.0);
  EXPECT_EQ(a.bucket_of.at("near"), "s1");
  EXPECT_EQ(a.bucket_of.at("far"), "s2");
  ASSERT_EQ(a.unassigned.size(), 1u);
  EXPECT_EQ(a.unassigned[0], "outside");
}

TEST(Assign, GridCells) {
  GridSpec g{0.01, {45.0, -74.0}};
  std::vector<GeoFrame> frames{{"a", {45.005, -73.995}}, {"b", {45.015, -73.985}},
                               {"c", {44.995, -74.001}}};
  const auto a = assign_frames(frames, g);
  EXPECT_EQ(a.bucket_of.at("a"), "cell_0_0");
  EXPECT_EQ(a.bucket_of.at("b"), "cell_1_1");
  EXPECT_EQ(a.bucket_of.at("c"), "cell_-1_-1");
  EXPECT_EQ(parse_cell_id("cell_-1_-1"), (std::pair<long, long>{-1, -1}));
  EXPECT_THROW(parse_cell_id("segment_3"), Error);
}

TEST(Layer, MeansCountsAndClamp) {
  Assignment a;
  a.bucket_of = {{"f1", "s1"}, {"f2", "s1"}, {"f3", "s2"}};
  std::map<std::string, model::Output> preds{
      {"f1", filled(2.0)}, {"f2", filled(3.0)}, {"f3", filled(4.6)}, {"f4", filled(1.0)}};
  ChannelSelector ch{ratings::Criterion::aesthetics, ratings::Group::elderly_female, std::nullopt};
  const auto layer = aggregate_layer(preds, a, ch);
  ASSERT_EQ(layer.cells.size(), 2u);
  EXPECT_DOUBLE_EQ(layer.cells[0].score, 2.5);
  EXPECT_EQ(layer.cells[0].n_images, 2u);
  EXPECT_DOUBLE_EQ(layer.cells[1].score, 4.0);
  EXPECT_EQ(layer.unassigned, 1u);
  std::size_t accounted = layer.unassigned;
  for (const auto& c : layer.cells) accounted += c.n_images;
  EXPECT_EQ(accounted, preds.size());
  EXPECT_EQ(layer.group, "elderly_female");
}

TEST(Layer, ChannelSelection) {
  model::Output out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(i);
  ChannelSelector coll{ratings::Criterion::practicality, std::nullopt, std::nullopt};
  EXPECT_DOUBLE_EQ(coll.value(out), 24 + 2);
  ChannelSelector grp{ratings::Criterion::accessibility, ratings::Group::young_male, std::nullopt};
  EXPECT_DOUBLE_EQ(grp.value(out), 5 * 4 + 3);
  std::array<double, 6> w{0.5, 0.5, 0, 0, 0, 0};
  ChannelSelector blend{ratings::Criterion::inclusivity, std::nullopt, w};
  EXPECT_DOUBLE_EQ(blend.value(out), 0.5 * 0 + 0.5 * 4);
  w[0] = 0.7;
  ChannelSelector bad{ratings::Criterion::inclusivity, std::nullopt, w};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(GeoJson, GridPolygonsAreClosedAndCounterClockwise) {
  GridSpec g{0.01, {45.0, -74.0}};
  HeatmapLayer layer{ratings::Criterion::inclusivity, "collective", {{"cell_2_3", 3.3, 4}}, 0};
  const auto fc = export_geojson(layer, g);
  ASSERT_EQ(fc["type"], "FeatureCollection");
  const auto& ring = fc["features"][0]["geometry"]["coordinates"][0];
  ASSERT_EQ(ring.size(), 5u);
  EXPECT_EQ(ring.front(), ring.back());
  double area2 = 0;  // shoelace, positive when counter-clockwise in lon/lat
  for (std::size_t i = 0; i + 1 < ring.size(); ++i)
    area2 += ring[i][0].get<double>() * ring[i + 1][1].get<double>() -
             ring[i + 1][0].get<double>() * ring[i][1].get<double>();
  EXPECT_GT(area2, 0);
  // [lon, lat] order.
  EXPECT_NEAR(ring[0][0].get<double>(), -74.0 + 0.03, 1e-12);
  EXPECT_NEAR(ring[0][1].get<double>(), 45.0 + 0.02, 1e-12);
  const auto& props = fc["features"][0]["properties"];
  EXPECT_EQ(props["grade"], "A");
  EXPECT_EQ(props["n_images"], 4);
}

TEST(GeoJson, SegmentsRoundTrip) {
  std::vector<SegmentDef> segs{{"s1", {{45.5, -73.60}, {45.5, -73.58}}, std::nullopt}};
  HeatmapLayer layer{ratings::Criterion::aesthetics, "young_female", {{"s1", 1.2, 7}}, 2};
  const auto fc = export_geojson(layer, segs);
  const auto& geom = fc["features"][0]["geometry"];
  EXPECT_EQ(geom["type"], "LineString");
  EXPECT_DOUBLE_EQ(geom["coordinates"][0][0].get<double>(), -73.60);
  const auto back = heatmap_from_geojson(fc);
  ASSERT_EQ(back.cells.size(), 1u);
  EXPECT_EQ(back.cells[0].bucket, "s1");
  EXPECT_DOUBLE_EQ(back.cells[0].score, 1.2);
  EXPECT_EQ(back.group, "young_female");
  EXPECT_EQ(heatmap_file_name(layer), "heatmap_young_female_aesthetics.geojson");

  HeatmapLayer missing{ratings::Criterion::aesthetics, "x", {{"nope", 2.0, 1}}, 0};
  EXPECT_THROW(export_geojson(missing, segs), Error);
}

TEST(SegmentFile, ParseFormatRoundTrip) {
  const std::string text =
      "{\"segment_id\":\"a\",\"coordinates\":[[-73.6,45.5],[-73.58,45.5]]}\n"
      "{\"segment_id\":\"b\",\"frame_ids\":[\"f1\"]}\n";
  const auto segs = parse_segments(text);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_DOUBLE_EQ(segs[0].geometry[0].lat, 45.5);
  EXPECT_EQ(parse_segments(format_segments(segs)).size(), 2u);
  EXPECT_THROW(parse_segments("{\"segment_id\":\"c\",\"coordinates\":[[1,2]]}\n"), Error);
}

TEST(Heatmap, WritesFile) {
  const auto dir = std::filesystem::temp_directory_path() / "sr_geo_test";
  std::filesystem::create_directories(dir);
  HeatmapLayer layer{ratings::Criterion::inclusivity, "collective", {{"cell_0_0", 2.0, 1}}, 0};
  const auto path = write_heatmap(layer, GridSpec{}, dir);
  EXPECT_TRUE(std::filesystem::exists(path));
  std::filesystem::remove_all(dir);
}
