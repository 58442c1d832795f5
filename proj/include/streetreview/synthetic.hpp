#pragma once

// Synthetic data: a sidewalk-dependent training set and a small complete study
// (catalog, images, confidence maps, roster, ratings, segments, interviews).

#include <array>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "streetreview/dataset.hpp"
#include "streetreview/geospatial.hpp"
#include "streetreview/model.hpp"
#include "streetreview/ratings.hpp"
#include "streetreview/segmentation.hpp"

namespace streetreview::synthetic {

inline constexpr double kConstantTerrain = 0.3;
inline constexpr std::size_t kTerrainFeature = segmentation::kFeatureDim - 1;

// Target j of a frame is 1 + slope_j * (mean sidewalk confidence of its rows),
// slope_j in [0.5, 3], so every target lies in [1, 4].
inline double sidewalk_target(std::size_t output, double mean_sidewalk) {
  const double slope = 0.5 + 2.5 * static_cast<double>(output) / (model::kOutputDim - 1);
  return 1.0 + slope * mean_sidewalk;
}

// n frames of `rows` pixels. Frame i's sidewalk level is spread evenly over
// [0.1, 0.9]; colors and the other classes are uniform noise; terrain is the
// constant 0.3 everywhere.
inline std::vector<model::Example> sidewalk_set(std::size_t n_frames, std::size_t rows,
                                                std::uint64_t seed) {
  if (n_frames < 2 || rows == 0) throw invalid_argument("sidewalk_set: need >= 2 frames and >= 1 row");
  Rng rng(seed);
  std::vector<model::Example> out;
  for (std::size_t i = 0; i < n_frames; ++i) {
    const double level = 0.1 + 0.8 * static_cast<double>(i) / static_cast<double>(n_frames - 1);
    model::Example e;
    e.seq.frame_id = "synthetic_" + std::to_string(i);
    e.seq.sample_seed = seed;
    double sum = 0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t f = 0; f < segmentation::kFeatureDim; ++f) {
        double v = rng.uniform();
        if (f == segmentation::kSidewalkFeature) {
          v = std::clamp(level + rng.uniform(-0.1, 0.1), 0.0, 1.0);
          sum += v;
        } else if (f == kTerrainFeature) {
          v = kConstantTerrain;
        }
        e.seq.rows.push_back(v);
      }
    const double mean_sw = sum / static_cast<double>(rows);
    for (std::size_t j = 0; j < model::kOutputDim; ++j) e.target[j] = sidewalk_target(j, mean_sw);
    e.mask = model::full_mask();
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Study fixture

struct StudyOptions {
  std::size_t streets = 4;
  std::size_t frames_per_point = 6;
  std::uint32_t image_size = 8;
  std::uint64_t seed = 1;
};

struct StudyPaths {
  std::filesystem::path root, manifest, street_attributes, roster, ratings, segments, interviews,
      statements;
};

namespace detail {

inline double point_quality(std::size_t street, std::size_t pos, std::size_t streets) {
  // Distinct, spread over [0.05, 0.95].
  const std::size_t k = street * 3 + pos, n = streets * 3;
  const std::size_t scrambled = (k * 7 + 3) % n;  // 7 is coprime with every n in 3..18
  return 0.05 + 0.9 * static_cast<double>(scrambled) / static_cast<double>(n - 1);
}

inline int rate(double quality, double offset) {
  return static_cast<int>(std::clamp(std::lround(1.0 + 3.0 * quality + offset), 1L, 4L));
}

}  // namespace detail

inline constexpr std::array<const char*, 7> kThemes = {
    "Accessibility and safety",       "Inclusivity and sense of belonging",
    "Functional design and utility",  "Aesthetic and maintenance",
    "Management and responsibility",  "Community engagement",
    "Historical significance and others"};

inline constexpr std::array<const char*, 4> kInterviewGroups = {"Elderly", "Mobility-impaired",
                                                                "Young adults", "LGBTQ2+"};

// Coded statement counts, theme x interview group.
inline constexpr std::array<std::array<int, 4>, 7> kThemeCounts = {{
    {67, 36, 21, 12},
    {36, 16, 15, 20},
    {26, 10, 23, 9},
    {22, 6, 42, 14},
    {8, 4, 8, 7},
    {9, 3, 27, 16},
    {10, 4, 12, 10},
}};

inline constexpr std::array<std::array<const char*, 8>, 7> kThemeWords = {{
    {"ramp", "curb", "crossing", "lighting", "stairs", "wheelchair", "signal", "speed"},
    {"welcome", "belonging", "multilingual", "night", "respect", "diverse", "safe", "identity"},
    {"bench", "bike", "lane", "transit", "parking", "width", "utility", "route"},
    {"trees", "clean", "shade", "green", "mural", "beautiful", "trash", "flowers"},
    {"city", "budget", "repair", "responsibility", "maintenance", "plan", "permit", "owner"},
    {"neighbors", "festival", "market", "meeting", "volunteers", "children", "events", "community"},
    {"heritage", "church", "history", "old", "facade", "memory", "landmark", "stone"},
}};

inline StudyPaths write_study_fixture(const std::filesystem::path& root, const StudyOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (opt.streets < 1 || opt.streets > 6) throw invalid_argument("study fixture: streets must be 1..6");
  if (opt.frames_per_point < 1 || opt.frames_per_point > static_cast<std::size_t>(dataset::kFramesPerPoint))
    throw invalid_argument("study fixture: frames_per_point must be 1..250");
  StudyPaths p;
  p.root = root;
  p.manifest = root / "manifest.jsonl";
  p.street_attributes = root / "street_attributes.json";
  p.roster = root / "roster.json";
  p.ratings = root / "ratings.jsonl";
  p.segments = root / "segments.jsonl";
  p.interviews = root / "interviews.jsonl";
  p.statements = root / "statements.jsonl";
  fs::create_directories(root / "images");
  fs::create_directories(root / "confmaps");
  Rng rng(opt.seed);

  const double base_lat = 45.50, base_lon = -73.60;
  const double dlat_per_m = 1.0 / 111'195.0;
  const double dlon_per_m = dlat_per_m / std::cos(base_lat * std::numbers::pi / 180.0);

  std::string manifest;
  json attrs = json::object();
  // Streets run east-west, 400 m apart; head/center/tail points are 60 m apart.
  std::vector<geospatial::SegmentDef> segments;
  std::vector<std::pair<std::string, double>> point_quality;
  for (std::size_t s = 0; s < opt.streets; ++s) {
    const std::string street = "street_" + std::to_string(s + 1);
    attrs[street] = {{"name", "Street " + std::to_string(s + 1)},
                     {"attributes",
                      {{"density", s % 2 ? "high" : "low"},
                       {"greenery", s % 3 ? "sparse" : "lush"},
                       {"land_use", s % 2 ? "commercial" : "residential"}}}};
    const double lat = base_lat + 400.0 * static_cast<double>(s) * dlat_per_m;
    geospatial::SegmentDef seg{"segment_" + std::to_string(s + 1), {}, std::nullopt};
    for (std::size_t pos = 0; pos < 3; ++pos) {
      const auto position = static_cast<dataset::Position>(pos);
      const std::string point = street + "_" + std::string(dataset::to_string(position));
      const double lon = base_lon + 60.0 * static_cast<double>(pos) * dlon_per_m;
      seg.geometry.push_back({lat, lon});
      const double q = detail::point_quality(s, pos, opt.streets);
      point_quality.emplace_back(point, q);
      for (std::size_t f = 0; f < opt.frames_per_point; ++f) {
        const int angle = static_cast<int>(f * dataset::kFramesPerPoint / opt.frames_per_point);
        const std::string frame = point + "_" + std::to_string(angle);
        segmentation::RgbImage img{opt.image_size, opt.image_size, {}};
        segmentation::ConfidenceMap cm{opt.image_size, opt.image_size,
                                       std::vector<float>(img.pixels() * segmentation::kNumClasses)};
        for (std::size_t px = 0; px < img.pixels(); ++px) {
          const double sw = std::clamp(q + rng.uniform(-0.05, 0.05), 0.0, 1.0);
          img.rgb.push_back(static_cast<std::uint8_t>(80 + 120 * sw));
          img.rgb.push_back(static_cast<std::uint8_t>(rng.below(256)));
          img.rgb.push_back(static_cast<std::uint8_t>(rng.below(256)));
          for (std::size_t c = 0; c < segmentation::kNumClasses; ++c)
            cm.at(px, c) = static_cast<float>(c == 1 ? sw : rng.uniform());
        }
        const std::string image_rel = "images/" + frame + ".srim";
        const std::string conf_rel = "confmaps/" + frame + ".srcm";
        segmentation::write_image(img, root / image_rel);
        segmentation::write_confidence_map(cm, root / conf_rel);
        manifest += json{{"frame_id", frame},
                         {"point_id", point},
                         {"street_id", street},
                         {"position", dataset::to_string(position)},
                         {"angle_index", angle},
                         {"lat", lat},
                         {"lon", lon},
                         {"image_path", image_rel},
                         {"confmap_path", conf_rel}}
                        .dump() +
                    "\n";
      }
    }
    segments.push_back(std::move(seg));
  }
  write_file_atomic(p.manifest, manifest);
  write_file_atomic(p.street_attributes, attrs.dump(2) + "\n");
  write_file_atomic(p.segments, geospatial::format_segments(segments));

  // Roster: one participant per group, plus one elderly woman who is also
  // mobility-impaired and acts as facilitator.
  using ratings::Group;
  std::vector<ratings::Participant> roster = {
      {"P01", {Group::lgbtq2plus}, false},      {"P02", {Group::mobility_impaired}, false},
      {"P03", {Group::elderly_female}, false},  {"P04", {Group::elderly_male}, false},
      {"P05", {Group::young_female}, false},    {"P06", {Group::young_male}, false},
      {"P07", {Group::elderly_female, Group::mobility_impaired}, true},
  };
  const std::array<double, 7> offset = {-0.3, -0.6, 0.0, 0.2, 0.3, 0.5, -0.4};
  json roster_j = json::array();
  for (const auto& r : roster) roster_j.push_back(ratings::to_json(r));
  write_file_atomic(p.roster, roster_j.dump(2) + "\n");

  std::vector<ratings::RatingRecord> recs;
  const std::array<double, 4> crit_shift = {0.0, 0.2, -0.2, -0.1};
  for (const auto& [point, q] : point_quality) {
    for (std::size_t i = 0; i < roster.size(); ++i)
      for (auto c : ratings::kCriteria)
        recs.push_back({roster[i].participant_id, point, c,
                        detail::rate(q, offset[i] + crit_shift[static_cast<int>(c)]),
                        ratings::Stage::individual, std::nullopt});
    for (auto c : ratings::kCriteria)
      recs.push_back({"session-1", point, c, detail::rate(q, crit_shift[static_cast<int>(c)] - 0.1),
                      ratings::Stage::collective, std::string("session-1")});
  }
  write_file_atomic(p.ratings, ratings::format_ratings(recs));

  // Interviews: each document mostly draws from one theme's words.
  std::string interviews, statements;
  int doc = 0;
  for (std::size_t g = 0; g < kInterviewGroups.size(); ++g) {
    for (std::size_t t = 0; t < kThemes.size(); ++t)
      for (int k = 0; k < kThemeCounts[t][g]; ++k)
        statements += json{{"group", kInterviewGroups[g]}, {"theme", kThemes[t]}}.dump() + "\n";
    for (int d = 0; d < 10; ++d) {
      const std::size_t main = (g * 3 + static_cast<std::size_t>(d)) % kThemes.size();
      std::string text = "we think the street";
      for (int w = 0; w < 30; ++w) {
        const std::size_t theme = rng.uniform() < 0.85 ? main : rng.below(kThemes.size());
        text += " ";
        text += kThemeWords[theme][rng.below(kThemeWords[theme].size())];
      }
      interviews += json{{"doc_id", "interview_" + std::to_string(++doc)},
                         {"group", kInterviewGroups[g]},
                         {"text", text}}
                        .dump() +
                    "\n";
    }
  }
  write_file_atomic(p.interviews, interviews);
  write_file_atomic(p.statements, statements);
  return p;
}

}  // namespace streetreview::synthetic
