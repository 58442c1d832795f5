#pragma once

// Frame-to-bucket assignment (street segments or a regular grid), per-bucket
// score aggregation, and GeoJSON heatmap export.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "streetreview/core.hpp"
#include "streetreview/evaluation.hpp"
#include "streetreview/ratings.hpp"

namespace streetreview::geospatial {

inline constexpr double kEarthRadiusM = 6'371'000.0;
inline constexpr double kDefaultRadiusM = 30.0;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const LatLon&) const = default;
};

inline double radians(double deg) { return deg * std::numbers::pi / 180.0; }

inline double haversine_m(LatLon a, LatLon b) {
  const double dlat = radians(b.lat - a.lat);
  const double dlon = radians(b.lon - a.lon);
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(radians(a.lat)) * std::cos(radians(b.lat)) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

// Distance from p to segment a-b: the closest point is found in a local
// equirectangular frame centred on p, then measured with haversine.
inline double point_segment_distance_m(LatLon p, LatLon a, LatLon b) {
  const double kx = std::cos(radians(p.lat));
  const double ax = (a.lon - p.lon) * kx, ay = a.lat - p.lat;
  const double bx = (b.lon - p.lon) * kx, by = b.lat - p.lat;
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? -(ax * dx + ay * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const LatLon closest{a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon)};
  return haversine_m(p, closest);
}

inline double point_polyline_distance_m(LatLon p, std::span<const LatLon> line) {
  if (line.size() == 1) return haversine_m(p, line[0]);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i)
    best = std::min(best, point_segment_distance_m(p, line[i], line[i + 1]));
  return best;
}

struct SegmentDef {
  std::string segment_id;
  std::vector<LatLon> geometry;  // may be empty when membership is explicit
  std::optional<std::vector<std::string>> frame_ids;
};

struct GridSpec {
  double cell_size_deg = 0.01;
  LatLon origin{};
};

struct GeoFrame {
  std::string frame_id;
  LatLon position;
};

struct Assignment {
  std::map<std::string, std::string> bucket_of;  // frame_id -> bucket id
  std::vector<std::string> unassigned;
};

inline std::string cell_id(long row, long col) {
  return "cell_" + std::to_string(row) + "_" + std::to_string(col);
}

inline std::pair<long, long> cell_of(LatLon p, const GridSpec& g) {
  return {static_cast<long>(std::floor((p.lat - g.origin.lat) / g.cell_size_deg)),
          static_cast<long>(std::floor((p.lon - g.origin.lon) / g.cell_size_deg))};
}

inline std::pair<long, long> parse_cell_id(std::string_view id) {
  long r = 0, c = 0;
  if (std::sscanf(std::string(id).c_str(), "cell_%ld_%ld", &r, &c) != 2)
    throw parse_error("not a grid cell id: " + std::string(id));
  return {r, c};
}

inline void validate(const SegmentDef& s) {
  if (!s.geometry.empty() && s.geometry.size() < 2)
    throw invalid_argument("segment " + s.segment_id + ": geometry needs at least 2 vertices");
  if (s.geometry.empty() && !s.frame_ids)
    throw invalid_argument("segment " + s.segment_id + ": needs geometry or frame_ids");
}

// Explicit membership wins; otherwise the nearest segment polyline within
// radius_m. Frames that match nothing are listed as unassigned.
inline Assignment assign_frames(std::span<const GeoFrame> frames,
                                std::span<const SegmentDef> segments,
                                double radius_m = kDefaultRadiusM) {
  for (const auto& s : segments) validate(s);
  std::map<std::string, std::string> explicit_member;
  for (const auto& s : segments)
    if (s.frame_ids)
      for (const auto& f : *s.frame_ids) explicit_member.try_emplace(f, s.segment_id);

  Assignment a;
  for (const auto& f : frames) {
    if (auto it = explicit_member.find(f.frame_id); it != explicit_member.end()) {
      a.bucket_of[f.frame_id] = it->second;
      continue;
    }
    const SegmentDef* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& s : segments) {
      if (s.geometry.empty()) continue;
      const double d = point_polyline_distance_m(f.position, s.geometry);
      if (d < best_d) {
        best_d = d;
        best = &s;
      }
    }
    if (best && best_d <= radius_m)
      a.bucket_of[f.frame_id] = best->segment_id;
    else
      a.unassigned.push_back(f.frame_id);
  }
  return a;
}

inline Assignment assign_frames(std::span<const GeoFrame> frames, const GridSpec& grid) {
  if (!(grid.cell_size_deg > 0)) throw invalid_argument("grid cell size must be > 0");
  Assignment a;
  for (const auto& f : frames) {
    if (!std::isfinite(f.position.lat) || !std::isfinite(f.position.lon)) {
      a.unassigned.push_back(f.frame_id);
      continue;
    }
    const auto [r, c] = cell_of(f.position, grid);
    a.bucket_of[f.frame_id] = cell_id(r, c);
  }
  return a;
}

// ---------------------------------------------------------------------------

// Which predicted channel feeds a layer: one group's criterion, the collective
// criterion, or a convex blend over the six groups.
struct ChannelSelector {
  ratings::Criterion criterion = ratings::Criterion::inclusivity;
  std::optional<ratings::Group> group;  // nullopt = collective
  std::optional<std::array<double, ratings::kNumGroups>> blend;

  std::string group_label() const {
    if (blend) return "blend";
    return group ? std::string(ratings::to_string(*group)) : "collective";
  }

  double value(const model::Output& out) const {
    if (blend) {
      double s = 0;
      for (std::size_t g = 0; g < ratings::kNumGroups; ++g)
        s += (*blend)[g] *
             out[ratings::ScoreVector28::group_index(static_cast<ratings::Group>(g), criterion)];
      return s;
    }
    return group ? out[ratings::ScoreVector28::group_index(*group, criterion)]
                 : out[ratings::ScoreVector28::collective_index(criterion)];
  }

  void validate() const {
    if (!blend) return;
    double sum = 0;
    for (double w : *blend) {
      if (w < 0) throw invalid_argument("blend weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw invalid_argument("blend weights must sum to 1");
  }
};

struct HeatmapCell {
  std::string bucket;
  double score = 0.0;  // clamped to [1, 4]
  std::size_t n_images = 0;
};

struct HeatmapLayer {
  ratings::Criterion criterion = ratings::Criterion::inclusivity;
  std::string group;  // group name, "collective" or "blend"
  std::vector<HeatmapCell> cells;  // sorted by bucket id
  std::size_t unassigned = 0;
};

inline HeatmapLayer aggregate_layer(const std::map<std::string, model::Output>& preds,
                                    const Assignment& assignment, const ChannelSelector& channel) {
  channel.validate();
  HeatmapLayer layer{channel.criterion, channel.group_label(), {}, 0};
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [frame, out] : preds) {
    auto it = assignment.bucket_of.find(frame);
    if (it == assignment.bucket_of.end()) {
      ++layer.unassigned;
      continue;
    }
    auto& cell = acc[it->second];
    cell.first += channel.value(out);
    ++cell.second;
  }
  for (const auto& [bucket, cell] : acc)
    layer.cells.push_back(
        {bucket, std::clamp(cell.first / static_cast<double>(cell.second), 1.0, 4.0), cell.second});
  return layer;
}

// ---------------------------------------------------------------------------
// GeoJSON

using BucketGeometry = std::variant<std::vector<SegmentDef>, GridSpec>;

inline json polygon_for_cell(long row, long col, const GridSpec& g) {
  const double lat0 = g.origin.lat + row * g.cell_size_deg, lat1 = lat0 + g.cell_size_deg;
  const double lon0 = g.origin.lon + col * g.cell_size_deg, lon1 = lon0 + g.cell_size_deg;
  json ring = json::array({{lon0, lat0}, {lon1, lat0}, {lon1, lat1}, {lon0, lat1}, {lon0, lat0}});
  return {{"type", "Polygon"}, {"coordinates", json::array({ring})}};
}

inline json export_geojson(const HeatmapLayer& layer, const BucketGeometry& geometry) {
  if (layer.cells.empty()) throw invalid_argument("export_geojson: empty layer");
  std::map<std::string, const SegmentDef*> seg_by_id;
  if (auto* segs = std::get_if<std::vector<SegmentDef>>(&geometry))
    for (const auto& s : *segs) seg_by_id[s.segment_id] = &s;

  json features = json::array();
  for (const auto& cell : layer.cells) {
    json geom = nullptr;
    if (auto* grid = std::get_if<GridSpec>(&geometry)) {
      const auto [r, c] = parse_cell_id(cell.bucket);
      geom = polygon_for_cell(r, c, *grid);
    } else {
      auto it = seg_by_id.find(cell.bucket);
      if (it == seg_by_id.end())
        throw invalid_argument("export_geojson: no geometry for segment " + cell.bucket);
      if (!it->second->geometry.empty()) {
        json coords = json::array();
        for (const auto& v : it->second->geometry) coords.push_back({v.lon, v.lat});
        geom = {{"type", "LineString"}, {"coordinates", coords}};
      }
    }
    features.push_back(
        {{"type", "Feature"},
         {"geometry", geom},
         {"properties",
          {{"bucket", cell.bucket},
           {"criterion", ratings::to_string(layer.criterion)},
           {"group", layer.group},
           {"score", cell.score},
           {"grade", std::string(1, evaluation::to_char(evaluation::grade(cell.score)))},
           {"n_images", cell.n_images}}}});
  }
  return {{"type", "FeatureCollection"}, {"features", features}};
}

inline std::string heatmap_file_name(const HeatmapLayer& layer) {
  return "heatmap_" + layer.group + "_" + std::string(ratings::to_string(layer.criterion)) +
         ".geojson";
}

inline std::filesystem::path write_heatmap(const HeatmapLayer& layer,
                                           const BucketGeometry& geometry,
                                           const std::filesystem::path& dir) {
  const auto path = dir / heatmap_file_name(layer);
  write_file_atomic(path, export_geojson(layer, geometry).dump(1) + "\n");
  return path;
}

// Reads an exported layer back (scores, counts and bucket ids).
inline HeatmapLayer heatmap_from_geojson(const json& fc) {
  if (fc.value("type", "") != "FeatureCollection")
    throw parse_error("heatmap: expected a FeatureCollection");
  HeatmapLayer layer;
  for (const auto& f : fc.at("features")) {
    const auto& p = f.at("properties");
    layer.criterion = ratings::criterion_from_string(p.at("criterion").get<std::string>());
    layer.group = p.at("group").get<std::string>();
    layer.cells.push_back({p.at("bucket").get<std::string>(), p.at("score").get<double>(),
                           p.at("n_images").get<std::size_t>()});
  }
  return layer;
}

// Segment map: one {segment_id, coordinates: [[lon, lat], ...], frame_ids?} per line.
inline std::vector<SegmentDef> parse_segments(std::string_view text,
                                              const std::string& source = "segments") {
  std::vector<SegmentDef> out;
  for_each_json_line(text, source, [&](std::size_t line, const json& j) {
    SegmentDef s;
    s.segment_id = j.at("segment_id").get<std::string>();
    if (j.contains("coordinates"))
      for (const auto& c : j.at("coordinates")) {
        if (c.size() != 2) throw parse_error(source + ":" + std::to_string(line) + ": bad vertex");
        s.geometry.push_back({c[1].get<double>(), c[0].get<double>()});
      }
    if (j.contains("frame_ids")) s.frame_ids = j.at("frame_ids").get<std::vector<std::string>>();
    try {
      validate(s);
    } catch (const Error& e) {
      throw parse_error(source + ":" + std::to_string(line) + ": " + e.what());
    }
    out.push_back(std::move(s));
  });
  return out;
}

inline std::string format_segments(std::span<const SegmentDef> segments) {
  std::string out;
  for (const auto& s : segments) {
    json coords = json::array();
    for (const auto& v : s.geometry) coords.push_back({v.lon, v.lat});
    json j = {{"segment_id", s.segment_id}, {"coordinates", coords}};
    if (s.frame_ids) j["frame_ids"] = *s.frame_ids;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace streetreview::geospatial
