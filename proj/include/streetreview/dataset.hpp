#pragma once

// Street / data-point / frame catalog, manifest IO, validation and the
// leakage-free point-level split.

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "streetreview/core.hpp"

namespace streetreview::dataset {

inline constexpr int kFramesPerPoint = 250;

// The eight dimensions of the street diversity selection matrix.
inline constexpr std::array<std::string_view, 8> kDiversityDimensions = {
    "density",        "socio_economic_status", "greenery",   "land_use",
    "historical_context", "urbanization",      "affordance", "space_to_user"};

enum class Position { head, center, tail };

inline std::string_view to_string(Position p) {
  switch (p) {
    case Position::head: return "head";
    case Position::center: return "center";
    case Position::tail: return "tail";
  }
  return "?";
}

inline Position position_from_string(std::string_view s) {
  if (s == "head") return Position::head;
  if (s == "center") return Position::center;
  if (s == "tail") return Position::tail;
  throw parse_error("unknown position '" + std::string(s) + "'");
}

struct StreetSite {
  std::string street_id;
  std::string name;
  std::map<std::string, std::string> attributes;

  bool operator==(const StreetSite&) const = default;
};

struct DataPoint {
  std::string point_id;
  std::string street_id;
  Position position = Position::head;
  double lat = 0.0;
  double lon = 0.0;

  bool operator==(const DataPoint&) const = default;
};

struct Frame {
  std::string frame_id;
  std::string point_id;
  int angle_index = 0;
  std::string image_path;
  std::optional<std::string> confmap_path;

  bool operator==(const Frame&) const = default;
};

// Immutable after load. Streets and points keep first-seen order; frames keep
// file order.
class Catalog {
 public:
  const std::vector<StreetSite>& streets() const noexcept { return streets_; }
  const std::vector<DataPoint>& points() const noexcept { return points_; }
  const std::vector<Frame>& frames() const noexcept { return frames_; }

  const DataPoint* find_point(std::string_view id) const {
    auto it = point_index_.find(std::string(id));
    return it == point_index_.end() ? nullptr : &points_[it->second];
  }
  const StreetSite* find_street(std::string_view id) const {
    auto it = street_index_.find(std::string(id));
    return it == street_index_.end() ? nullptr : &streets_[it->second];
  }
  const Frame* find_frame(std::string_view id) const {
    auto it = frame_index_.find(std::string(id));
    return it == frame_index_.end() ? nullptr : &frames_[it->second];
  }

  // Indices into frames() for one point, in file order.
  const std::vector<std::size_t>& frames_of(std::string_view point_id) const {
    static const std::vector<std::size_t> empty;
    auto it = point_frames_.find(std::string(point_id));
    return it == point_frames_.end() ? empty : it->second;
  }

  bool operator==(const Catalog& o) const {
    return streets_ == o.streets_ && points_ == o.points_ && frames_ == o.frames_;
  }

  class Builder;

 private:
  std::vector<StreetSite> streets_;
  std::vector<DataPoint> points_;
  std::vector<Frame> frames_;
  std::unordered_map<std::string, std::size_t> street_index_, point_index_, frame_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> point_frames_;
};

class Catalog::Builder {
 public:
  StreetSite& street(const std::string& street_id) {
    auto [it, inserted] = c_.street_index_.try_emplace(street_id, c_.streets_.size());
    if (inserted) c_.streets_.push_back(StreetSite{street_id, street_id, {}});
    return c_.streets_[it->second];
  }

  bool has_point(const std::string& id) const { return c_.point_index_.contains(id); }
  const DataPoint& point(const std::string& id) const {
    return c_.points_[c_.point_index_.at(id)];
  }

  void add_point(DataPoint p) {
    if (has_point(p.point_id)) throw invalid_argument("duplicate point_id " + p.point_id);
    street(p.street_id);
    c_.point_index_.emplace(p.point_id, c_.points_.size());
    c_.points_.push_back(std::move(p));
  }

  void add_frame(Frame f) {
    if (!has_point(f.point_id))
      throw invalid_argument("frame " + f.frame_id + " references unknown point " + f.point_id);
    if (c_.frame_index_.contains(f.frame_id))
      throw invalid_argument("duplicate frame_id " + f.frame_id);
    if (f.angle_index < 0 || f.angle_index >= kFramesPerPoint)
      throw invalid_argument("frame " + f.frame_id + ": angle_index " +
                             std::to_string(f.angle_index) + " outside 0..249");
    auto& siblings = c_.point_frames_[f.point_id];
    for (std::size_t i : siblings)
      if (c_.frames_[i].angle_index == f.angle_index)
        throw invalid_argument("frame " + f.frame_id + ": angle_index " +
                               std::to_string(f.angle_index) + " repeated within point " +
                               f.point_id);
    siblings.push_back(c_.frames_.size());
    c_.frame_index_.emplace(f.frame_id, c_.frames_.size());
    c_.frames_.push_back(std::move(f));
  }

  Catalog build() && { return std::move(c_); }

 private:
  Catalog c_;
};

// ---------------------------------------------------------------------------
// Manifest IO
//
// One JSON object per line:
//   {frame_id, point_id, street_id, position, angle_index, lat, lon,
//    image_path, confmap_path|null}
// Point fields may be omitted on later frames of an already-declared point; a
// frame whose point was never declared is an orphan.

inline Catalog parse_manifest(std::string_view text, const std::string& source = "manifest") {
  Catalog::Builder b;
  for_each_json_line(text, source, [&](std::size_t line, const json& j) {
    auto where = [&] { return source + ":" + std::to_string(line) + ": "; };
    if (!j.is_object()) throw parse_error(where() + "expected a JSON object");
    if (!j.contains("frame_id") || !j.contains("point_id"))
      throw parse_error(where() + "frame_id and point_id are required");
    const std::string point_id = j.at("point_id").get<std::string>();
    const bool declares_point = j.contains("street_id");
    if (declares_point) {
      DataPoint p{point_id, j.at("street_id").get<std::string>(),
                  position_from_string(j.at("position").get<std::string>()),
                  j.at("lat").get<double>(), j.at("lon").get<double>()};
      if (!b.has_point(point_id)) {
        b.add_point(std::move(p));
      } else if (!(b.point(point_id) == p)) {
        throw parse_error(where() + "conflicting attributes for point " + point_id);
      }
    }
    Frame f;
    f.frame_id = j.at("frame_id").get<std::string>();
    f.point_id = point_id;
    f.angle_index = j.at("angle_index").get<int>();
    f.image_path = j.at("image_path").get<std::string>();
    if (j.contains("confmap_path") && !j.at("confmap_path").is_null())
      f.confmap_path = j.at("confmap_path").get<std::string>();
    try {
      b.add_frame(std::move(f));
    } catch (const Error& e) {
      throw parse_error(where() + e.what());
    }
  });
  return std::move(b).build();
}

inline Catalog load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.string());
}

inline std::string format_manifest(const Catalog& catalog) {
  std::string out;
  for (const auto& f : catalog.frames()) {
    const DataPoint& p = *catalog.find_point(f.point_id);
    json j = {{"frame_id", f.frame_id},
              {"point_id", f.point_id},
              {"street_id", p.street_id},
              {"position", to_string(p.position)},
              {"angle_index", f.angle_index},
              {"lat", p.lat},
              {"lon", p.lon},
              {"image_path", f.image_path},
              {"confmap_path", f.confmap_path ? json(*f.confmap_path) : json(nullptr)}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_manifest(const Catalog& catalog, const std::filesystem::path& path) {
  write_file_atomic(path, format_manifest(catalog));
}

// Street attributes file: {"<street_id>": {"name": "...", "attributes": {dim: label}}}.
// Returns a new catalog with names/attributes merged in; unknown street ids and
// unknown dimensions are errors.
inline Catalog with_street_attributes(const Catalog& catalog, const json& doc) {
  Catalog::Builder b;
  for (const auto& s : catalog.streets()) b.street(s.street_id) = s;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!catalog.find_street(it.key()))
      throw invalid_argument("street attributes: unknown street_id " + it.key());
    StreetSite& s = b.street(it.key());
    if (it->contains("name")) s.name = it->at("name").get<std::string>();
    if (it->contains("attributes")) {
      for (auto a = it->at("attributes").begin(); a != it->at("attributes").end(); ++a) {
        if (std::find(kDiversityDimensions.begin(), kDiversityDimensions.end(), a.key()) ==
            kDiversityDimensions.end())
          throw invalid_argument("street " + it.key() + ": unknown diversity dimension " +
                                 a.key());
        s.attributes[a.key()] = a->get<std::string>();
      }
    }
  }
  for (const auto& p : catalog.points()) b.add_point(p);
  for (const auto& f : catalog.frames()) b.add_frame(f);
  return std::move(b).build();
}

inline json street_attributes_json(const Catalog& catalog) {
  json doc = json::object();
  for (const auto& s : catalog.streets())
    doc[s.street_id] = {{"name", s.name}, {"attributes", s.attributes}};
  return doc;
}

// ---------------------------------------------------------------------------
// Validation

struct Finding {
  enum class Severity { warning, error };
  Severity severity;
  std::string subject;  // point_id or frame_id
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;

  bool empty() const noexcept { return findings.empty(); }
  std::size_t errors() const {
    return static_cast<std::size_t>(std::count_if(findings.begin(), findings.end(), [](auto& f) {
      return f.severity == Finding::Severity::error;
    }));
  }
};

inline ValidationReport validate_catalog(const Catalog& catalog) {
  ValidationReport r;
  auto add = [&](Finding::Severity s, std::string subject, std::string msg) {
    r.findings.push_back({s, std::move(subject), std::move(msg)});
  };
  std::map<std::pair<std::string, Position>, std::string> seen_positions;
  for (const auto& p : catalog.points()) {
    if (!(p.lat >= -90.0 && p.lat <= 90.0))
      add(Finding::Severity::error, p.point_id,
          "latitude " + json(p.lat).dump() + " outside [-90, 90]");
    if (!(p.lon >= -180.0 && p.lon <= 180.0))
      add(Finding::Severity::error, p.point_id,
          "longitude " + json(p.lon).dump() + " outside [-180, 180]");
    auto [it, fresh] = seen_positions.try_emplace({p.street_id, p.position}, p.point_id);
    if (!fresh)
      add(Finding::Severity::warning, p.point_id,
          "position " + std::string(to_string(p.position)) + " of street " + p.street_id +
              " already taken by " + it->second);
    const std::size_t n = catalog.frames_of(p.point_id).size();
    if (n < kFramesPerPoint)
      add(Finding::Severity::warning, p.point_id,
          "incomplete frame set (" + std::to_string(n) + "/" +
              std::to_string(kFramesPerPoint) + ")");
  }
  for (const auto& f : catalog.frames())
    if (!f.confmap_path) add(Finding::Severity::warning, f.frame_id, "missing confidence map");
  return r;
}

inline json to_json(const ValidationReport& r) {
  json arr = json::array();
  for (const auto& f : r.findings)
    arr.push_back({{"severity", f.severity == Finding::Severity::error ? "error" : "warning"},
                   {"subject", f.subject},
                   {"message", f.message}});
  return arr;
}

// ---------------------------------------------------------------------------
// Split

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw parse_error("unknown split '" + std::string(s) + "'");
}

using SplitRatios = std::array<double, 3>;

struct SplitAssignment {
  std::map<std::string, Split> by_point;
  std::uint64_t seed = 0;
  SplitRatios ratios{0.7, 0.15, 0.15};

  std::array<std::size_t, 3> counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& [_, s] : by_point) ++c[static_cast<int>(s)];
    return c;
  }

  bool operator==(const SplitAssignment&) const = default;
};

// Largest-remainder apportionment of n items over the ratios. Ties in the
// remainder go to the earlier split (train, then val, then test). Every split
// receives at least one item when n >= 3.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    // Guard against 0.7 * 60 = 41.999999...
    const double fl = std::floor(exact + 1e-9);
    counts[i] = static_cast<std::size_t>(fl);
    rem[i] = std::max(0.0, exact - fl);
    used += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++counts[order[k % 3]];
  for (int i = 0; i < 3; ++i) {
    if (counts[i] > 0) continue;
    auto donor = std::max_element(counts.begin(), counts.end());
    --*donor;
    ++counts[i];
  }
  return counts;
}

// Street-stratified split at point granularity: points are shuffled within each
// street, street order is shuffled, then streets are interleaved round-robin
// and the apportioned counts are laid over that order.
inline SplitAssignment stratified_split(const Catalog& catalog, const SplitRatios& ratios,
                                        std::uint64_t seed) {
  double sum = 0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw invalid_argument("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw invalid_argument("split ratios must sum to 1");
  const std::size_t n = catalog.points().size();
  if (n < 3)
    throw invalid_argument("stratified_split: " + std::to_string(n) +
                           " points, need at least 3 for three splits");

  Rng rng(seed);
  std::vector<std::vector<std::string>> by_street;
  std::map<std::string, std::size_t> street_slot;
  for (const auto& p : catalog.points()) {
    auto [it, fresh] = street_slot.try_emplace(p.street_id, by_street.size());
    if (fresh) by_street.emplace_back();
    by_street[it->second].push_back(p.point_id);
  }
  for (auto& pts : by_street) shuffle(pts, rng);
  shuffle(by_street, rng);

  std::vector<std::string> order;
  order.reserve(n);
  for (std::size_t round = 0; order.size() < n; ++round)
    for (const auto& pts : by_street)
      if (round < pts.size()) order.push_back(pts[round]);

  const auto counts = apportion(n, ratios);
  SplitAssignment a;
  a.seed = seed;
  a.ratios = ratios;
  std::size_t i = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < counts[s]; ++k) a.by_point[order[i++]] = static_cast<Split>(s);
  return a;
}

inline json to_json(const SplitAssignment& a) {
  json m = json::object();
  for (const auto& [p, s] : a.by_point) m[p] = to_string(s);
  return {{"seed", a.seed}, {"ratios", a.ratios}, {"assignment", m}};
}

inline SplitAssignment split_from_json(const json& j) {
  SplitAssignment a;
  a.seed = j.at("seed").get<std::uint64_t>();
  a.ratios = j.at("ratios").get<SplitRatios>();
  for (auto it = j.at("assignment").begin(); it != j.at("assignment").end(); ++it)
    a.by_point[it.key()] = split_from_string(it->get<std::string>());
  return a;
}

}  // namespace streetreview::dataset
