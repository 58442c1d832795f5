#pragma once

// Participant ratings and rankings, per-point 28-score targets, and the
// descriptive statistics over them.

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "streetreview/core.hpp"
#include "streetreview/dataset.hpp"
#include "streetreview/stats.hpp"

namespace streetreview::ratings {

enum class Criterion { inclusivity, aesthetics, practicality, accessibility };
inline constexpr std::size_t kNumCriteria = 4;
inline constexpr std::array<Criterion, kNumCriteria> kCriteria = {
    Criterion::inclusivity, Criterion::aesthetics, Criterion::practicality,
    Criterion::accessibility};
inline constexpr std::array<std::string_view, kNumCriteria> kCriterionNames = {
    "inclusivity", "aesthetics", "practicality", "accessibility"};

enum class Group {
  lgbtq2plus,
  mobility_impaired,
  elderly_female,
  elderly_male,
  young_female,
  young_male
};
inline constexpr std::size_t kNumGroups = 6;
inline constexpr std::array<std::string_view, kNumGroups> kGroupNames = {
    "lgbtq2plus", "mobility_impaired", "elderly_female",
    "elderly_male", "young_female",    "young_male"};

inline constexpr std::size_t kNumOutputs = kNumGroups * kNumCriteria + kNumCriteria;
static_assert(kNumOutputs == 28);

inline std::string_view to_string(Criterion c) { return kCriterionNames[static_cast<int>(c)]; }
inline std::string_view to_string(Group g) { return kGroupNames[static_cast<int>(g)]; }

inline Criterion criterion_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNumCriteria; ++i)
    if (kCriterionNames[i] == s) return static_cast<Criterion>(i);
  throw parse_error("unknown criterion '" + std::string(s) + "'");
}

inline Group group_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNumGroups; ++i)
    if (kGroupNames[i] == s) return static_cast<Group>(i);
  throw parse_error("unknown demographic group '" + std::string(s) + "'");
}

// Rating scale descriptors, indexed [criterion][score-1].
inline constexpr std::array<std::array<std::string_view, 4>, kNumCriteria> kScaleDescriptors = {{
    {"Not inclusive or welcoming", "Some inclusivity measures present",
     "Broadly welcoming and inclusive", "Fully inclusive and welcoming to all"},
    {"Poor design and minimal greenery", "Basic design with limited greenery",
     "Appealing design with abundant greenery", "Highly attractive with rich, diverse greenery"},
    {"Non-functional and poorly maintained", "Barely functional, maintenance lacking",
     "Adequately functional with regular upkeep",
     "Highly functional with proactive maintenance"},
    {"Inaccessible", "Limited accessibility", "Generally accessible, some difficult areas",
     "Fully accessible for all users"},
}};

struct Participant {
  std::string participant_id;
  std::set<Group> groups;
  bool facilitator = false;
};

enum class Stage { individual, collective };

inline std::string_view to_string(Stage s) {
  return s == Stage::individual ? "individual" : "collective";
}
inline Stage stage_from_string(std::string_view s) {
  if (s == "individual") return Stage::individual;
  if (s == "collective") return Stage::collective;
  throw parse_error("unknown rating stage '" + std::string(s) + "'");
}

// Collective-stage records carry the session id in participant_id.
struct RatingRecord {
  std::string participant_id;
  std::string point_id;
  Criterion criterion = Criterion::inclusivity;
  int value = 1;
  Stage stage = Stage::individual;
  std::optional<std::string> session_id;

  bool operator==(const RatingRecord&) const = default;
};

struct RankingRecord {
  std::string session_id;
  std::array<std::string, 3> most_inclusive;
  std::array<std::string, 3> least_inclusive;

  bool operator==(const RankingRecord&) const = default;
};

// 6x4 group scores plus 4 collective scores; flat index g*4+c, then 24+c.
// NaN marks a cell nobody rated.
struct ScoreVector28 {
  std::array<double, kNumOutputs> values;

  ScoreVector28() { values.fill(std::numeric_limits<double>::quiet_NaN()); }

  static constexpr std::size_t group_index(Group g, Criterion c) {
    return static_cast<std::size_t>(g) * kNumCriteria + static_cast<std::size_t>(c);
  }
  static constexpr std::size_t collective_index(Criterion c) {
    return kNumGroups * kNumCriteria + static_cast<std::size_t>(c);
  }

  double& group(Group g, Criterion c) { return values[group_index(g, c)]; }
  double group(Group g, Criterion c) const { return values[group_index(g, c)]; }
  double& collective(Criterion c) { return values[collective_index(c)]; }
  double collective(Criterion c) const { return values[collective_index(c)]; }
};

// Label of an output channel, e.g. "mobility_impaired/inclusivity".
inline std::string output_label(std::size_t i) {
  if (i < kNumGroups * kNumCriteria)
    return std::string(kGroupNames[i / kNumCriteria]) + "/" +
           std::string(kCriterionNames[i % kNumCriteria]);
  return "collective/" + std::string(kCriterionNames[i - kNumGroups * kNumCriteria]);
}

// ---------------------------------------------------------------------------

inline void check_value(const RatingRecord& r) {
  if (r.value < 1 || r.value > 4)
    throw invalid_argument("rating value " + std::to_string(r.value) + " outside 1..4 (" +
                           r.participant_id + ", " + r.point_id + ")");
}

inline ScoreVector28 aggregate_point_scores(std::span<const RatingRecord> records,
                                            std::span<const Participant> roster,
                                            std::string_view point_id) {
  std::map<std::string, const Participant*, std::less<>> by_id;
  for (const auto& p : roster) by_id[p.participant_id] = &p;

  std::array<double, kNumOutputs> sum{};
  std::array<std::size_t, kNumOutputs> n{};
  for (const auto& r : records) {
    if (r.point_id != point_id) continue;
    check_value(r);
    if (r.stage == Stage::collective) {
      const auto i = ScoreVector28::collective_index(r.criterion);
      sum[i] += r.value;
      ++n[i];
      continue;
    }
    auto it = by_id.find(r.participant_id);
    if (it == by_id.end()) throw invalid_argument("unknown participant_id " + r.participant_id);
    for (Group g : it->second->groups) {
      const auto i = ScoreVector28::group_index(g, r.criterion);
      sum[i] += r.value;
      ++n[i];
    }
  }
  ScoreVector28 out;
  for (std::size_t i = 0; i < kNumOutputs; ++i)
    if (n[i]) out.values[i] = sum[i] / static_cast<double>(n[i]);
  return out;
}

// All points that carry at least one rating, aggregated.
inline std::map<std::string, ScoreVector28> aggregate_all(std::span<const RatingRecord> records,
                                                          std::span<const Participant> roster) {
  std::set<std::string> points;
  for (const auto& r : records) points.insert(r.point_id);
  std::map<std::string, ScoreVector28> out;
  for (const auto& p : points) out[p] = aggregate_point_scores(records, roster, p);
  return out;
}

struct Imputation {
  std::string point_id;
  std::size_t output = 0;
  double value = 0.0;  // NaN when no collective score was available either
};

// Fills NaN group cells with the collective score of the same criterion.
// Cells that stay NaN (no collective score) are reported and must be masked.
inline std::vector<Imputation> impute_missing(std::map<std::string, ScoreVector28>& scores) {
  std::vector<Imputation> log;
  for (auto& [point, sv] : scores)
    for (std::size_t i = 0; i < kNumGroups * kNumCriteria; ++i) {
      if (!std::isnan(sv.values[i])) continue;
      const double fill = sv.collective(static_cast<Criterion>(i % kNumCriteria));
      sv.values[i] = fill;
      log.push_back({point, i, fill});
    }
  return log;
}

inline std::map<std::string, ScoreVector28> propagate_to_frames(
    const std::map<std::string, ScoreVector28>& point_scores, const dataset::Catalog& catalog) {
  std::map<std::string, ScoreVector28> out;
  for (const auto& [point, sv] : point_scores) {
    if (!catalog.find_point(point))
      throw invalid_argument("propagate_to_frames: unknown point_id " + point);
    for (std::size_t fi : catalog.frames_of(point)) out[catalog.frames()[fi].frame_id] = sv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Descriptive statistics

struct CriterionStats {
  std::size_t n = 0;
  std::optional<double> mean;  // nullopt when n == 0
  std::optional<double> sd;    // population SD
};

inline std::array<CriterionStats, kNumCriteria> summary_stats(std::span<const RatingRecord> records,
                                                              Stage level) {
  std::array<std::vector<double>, kNumCriteria> vals;
  for (const auto& r : records)
    if (r.stage == level) vals[static_cast<int>(r.criterion)].push_back(r.value);
  std::array<CriterionStats, kNumCriteria> out;
  for (std::size_t c = 0; c < kNumCriteria; ++c) {
    out[c].n = vals[c].size();
    if (vals[c].empty()) continue;
    out[c].mean = stats::mean(vals[c]);
    out[c].sd = stats::population_sd(vals[c]);
  }
  return out;
}

struct RankingTally {
  int most_votes = 0;
  int least_votes = 0;
  int net() const { return most_votes - least_votes; }
};

inline void check_ranking(const RankingRecord& r) {
  std::set<std::string> most(r.most_inclusive.begin(), r.most_inclusive.end());
  std::set<std::string> least(r.least_inclusive.begin(), r.least_inclusive.end());
  if (most.size() != 3 || least.size() != 3)
    throw invalid_argument("ranking " + r.session_id + ": each set needs 3 distinct points");
  for (const auto& p : most)
    if (p.empty() || least.contains(p))
      throw invalid_argument("ranking " + r.session_id + ": point " + p +
                             " appears in both most and least inclusive sets");
}

inline std::map<std::string, RankingTally> ranking_tally(std::span<const RankingRecord> rankings) {
  std::map<std::string, RankingTally> out;
  for (const auto& r : rankings) {
    check_ranking(r);
    for (const auto& p : r.most_inclusive) ++out[p].most_votes;
    for (const auto& p : r.least_inclusive) ++out[p].least_votes;
  }
  return out;
}

// Per group: distribution of per-point mean individual inclusivity ratings.
inline std::map<Group, stats::DistributionSummary> group_rating_distribution(
    std::span<const RatingRecord> records, std::span<const Participant> roster) {
  std::map<std::string, const Participant*, std::less<>> by_id;
  for (const auto& p : roster) by_id[p.participant_id] = &p;
  // group -> point -> (sum, n)
  std::map<Group, std::map<std::string, std::pair<double, int>>> acc;
  for (const auto& r : records) {
    if (r.stage != Stage::individual || r.criterion != Criterion::inclusivity) continue;
    check_value(r);
    auto it = by_id.find(r.participant_id);
    if (it == by_id.end()) throw invalid_argument("unknown participant_id " + r.participant_id);
    for (Group g : it->second->groups) {
      auto& cell = acc[g][r.point_id];
      cell.first += r.value;
      ++cell.second;
    }
  }
  std::map<Group, stats::DistributionSummary> out;
  for (const auto& [g, points] : acc) {
    std::vector<double> means;
    for (const auto& [_, cell] : points) means.push_back(cell.first / cell.second);
    out[g] = stats::distribution_summary(means);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

inline json to_json(const RatingRecord& r) {
  json j = {{"participant_id", r.participant_id},
            {"point_id", r.point_id},
            {"criterion", to_string(r.criterion)},
            {"value", r.value},
            {"stage", to_string(r.stage)}};
  if (r.session_id) j["session_id"] = *r.session_id;
  return j;
}

inline RatingRecord rating_from_json(const json& j) {
  RatingRecord r;
  r.participant_id = j.at("participant_id").get<std::string>();
  r.point_id = j.at("point_id").get<std::string>();
  r.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  r.value = j.at("value").get<int>();
  r.stage = stage_from_string(j.at("stage").get<std::string>());
  if (j.contains("session_id") && !j.at("session_id").is_null())
    r.session_id = j.at("session_id").get<std::string>();
  check_value(r);
  return r;
}

inline std::vector<RatingRecord> parse_ratings(std::string_view text,
                                               const std::string& source = "ratings") {
  std::vector<RatingRecord> out;
  for_each_json_line(text, source, [&](std::size_t line, const json& j) {
    try {
      out.push_back(rating_from_json(j));
    } catch (const Error& e) {
      throw parse_error(source + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

inline std::string format_ratings(std::span<const RatingRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline json to_json(const RankingRecord& r) {
  return {{"session_id", r.session_id},
          {"most_inclusive", r.most_inclusive},
          {"least_inclusive", r.least_inclusive}};
}

inline RankingRecord ranking_from_json(const json& j) {
  RankingRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  const auto& most = j.at("most_inclusive");
  const auto& least = j.at("least_inclusive");
  if (!most.is_array() || most.size() != 3 || !least.is_array() || least.size() != 3)
    throw invalid_argument("ranking " + r.session_id + ": each set needs exactly 3 entries");
  for (int i = 0; i < 3; ++i) {
    r.most_inclusive[i] = most[i].get<std::string>();
    r.least_inclusive[i] = least[i].get<std::string>();
  }
  check_ranking(r);
  return r;
}

inline json to_json(const Participant& p) {
  json groups = json::array();
  for (Group g : p.groups) groups.push_back(to_string(g));
  json j = {{"participant_id", p.participant_id}, {"groups", groups}};
  if (p.facilitator) j["facilitator"] = true;
  return j;
}

inline Participant participant_from_json(const json& j) {
  Participant p;
  p.participant_id = j.at("participant_id").get<std::string>();
  for (const auto& g : j.at("groups")) p.groups.insert(group_from_string(g.get<std::string>()));
  if (p.groups.empty())
    throw invalid_argument("participant " + p.participant_id + " has no demographic group");
  p.facilitator = j.value("facilitator", false);
  return p;
}

inline std::vector<Participant> parse_roster(const json& arr) {
  std::vector<Participant> out;
  std::set<std::string> seen;
  for (const auto& j : arr) {
    out.push_back(participant_from_json(j));
    if (!seen.insert(out.back().participant_id).second)
      throw invalid_argument("duplicate participant_id " + out.back().participant_id);
  }
  return out;
}

// NaN cells are written as null.
inline json to_json(const std::string& point_id, const ScoreVector28& sv) {
  auto cell = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json groups = json::array();
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    json row = json::array();
    for (std::size_t c = 0; c < kNumCriteria; ++c) row.push_back(cell(sv.values[g * 4 + c]));
    groups.push_back(row);
  }
  json coll = json::array();
  for (Criterion c : kCriteria) coll.push_back(cell(sv.collective(c)));
  return {{"point_id", point_id}, {"group_scores", groups}, {"collective_scores", coll}};
}

inline std::pair<std::string, ScoreVector28> targets_from_json(const json& j) {
  ScoreVector28 sv;
  auto read = [](const json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  const auto& groups = j.at("group_scores");
  if (groups.size() != kNumGroups) throw parse_error("group_scores must have 6 rows");
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    if (groups[g].size() != kNumCriteria) throw parse_error("group_scores rows need 4 values");
    for (std::size_t c = 0; c < kNumCriteria; ++c) sv.values[g * 4 + c] = read(groups[g][c]);
  }
  const auto& coll = j.at("collective_scores");
  if (coll.size() != kNumCriteria) throw parse_error("collective_scores needs 4 values");
  for (std::size_t c = 0; c < kNumCriteria; ++c) sv.values[24 + c] = read(coll[c]);
  return {j.at("point_id").get<std::string>(), sv};
}

inline std::string format_targets(const std::map<std::string, ScoreVector28>& scores) {
  std::string out;
  for (const auto& [p, sv] : scores) out += to_json(p, sv).dump() + "\n";
  return out;
}

inline std::map<std::string, ScoreVector28> parse_targets(std::string_view text,
                                                          const std::string& source = "targets") {
  std::map<std::string, ScoreVector28> out;
  for_each_json_line(text, source, [&](std::size_t, const json& j) {
    auto [p, sv] = targets_from_json(j);
    out[p] = sv;
  });
  return out;
}

}  // namespace streetreview::ratings
