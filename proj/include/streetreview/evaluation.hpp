#pragma once

// R^2 reports, criterion correlation matrices, permutation feature importance,
// distribution summaries and letter grades.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "streetreview/model.hpp"
#include "streetreview/ratings.hpp"
#include "streetreview/stats.hpp"

namespace streetreview::evaluation {

using model::kOutputDim;
using model::Output;

struct R2Report {
  std::optional<double> overall;          // pooled over defined outputs
  std::optional<double> mean_of_outputs;  // unweighted mean of defined per-output values
  std::array<std::optional<double>, kOutputDim> per_output{};
  std::size_t samples = 0;
};

// Per-output R^2 = 1 - SSres/SStot around that output's target mean; outputs
// with zero target variance are undefined and left out of the overall value.
inline R2Report r_squared(std::span<const Output> preds, std::span<const Output> targets,
                          std::span<const model::Mask> masks = {}) {
  if (preds.size() != targets.size())
    throw invalid_argument("r_squared: prediction/target count mismatch");
  if (preds.size() < 2) throw invalid_argument("r_squared: need at least 2 samples");
  if (!masks.empty() && masks.size() != preds.size())
    throw invalid_argument("r_squared: mask count mismatch");
  std::vector<double> p, t;
  std::vector<unsigned char> m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.insert(p.end(), preds[i].begin(), preds[i].end());
    t.insert(t.end(), targets[i].begin(), targets[i].end());
    if (!masks.empty()) m.insert(m.end(), masks[i].begin(), masks[i].end());
  }
  const auto cols = stats::column_sums_of_squares(p, t, m, kOutputDim);
  R2Report r;
  r.samples = preds.size();
  r.overall = stats::pooled_r2(cols);
  double sum = 0;
  int defined = 0;
  for (std::size_t c = 0; c < kOutputDim; ++c)
    if (cols[c].ss_tot > 0.0) {
      r.per_output[c] = 1.0 - cols[c].ss_res / cols[c].ss_tot;
      sum += *r.per_output[c];
      ++defined;
    }
  if (defined) r.mean_of_outputs = sum / defined;
  return r;
}

inline json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json to_json(const R2Report& r) {
  json per = json::object();
  for (std::size_t c = 0; c < kOutputDim; ++c)
    per[ratings::output_label(c)] = optional_json(r.per_output[c]);
  return {{"overall", optional_json(r.overall)},
          {"mean_of_outputs", optional_json(r.mean_of_outputs)},
          {"samples", r.samples},
          {"per_output", per}};
}

inline std::string to_csv(const R2Report& r) {
  auto cell = [](const std::optional<double>& v) { return v ? json(*v).dump() : std::string(); };
  std::string out = "output,r2\n";
  out += "overall," + cell(r.overall) + "\n";
  out += "mean_of_outputs," + cell(r.mean_of_outputs) + "\n";
  for (std::size_t c = 0; c < kOutputDim; ++c)
    out += ratings::output_label(c) + "," + cell(r.per_output[c]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

using CriterionScores = std::array<double, ratings::kNumCriteria>;

// Pearson r over criterion columns; entries involving a zero-variance column
// are undefined (nullopt), never silently zero.
struct CorrelationMatrix {
  std::array<std::array<std::optional<double>, 4>, 4> r{};
};

inline CorrelationMatrix correlation_matrix(const std::map<std::string, CriterionScores>& points) {
  if (points.size() < 2) throw invalid_argument("correlation_matrix: need at least 2 points");
  std::array<std::vector<double>, 4> cols;
  for (const auto& [_, s] : points)
    for (std::size_t c = 0; c < 4; ++c) {
      if (!std::isfinite(s[c])) throw invalid_argument("correlation_matrix: missing score");
      cols[c].push_back(s[c]);
    }
  CorrelationMatrix m;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i; j < 4; ++j) {
      auto v = stats::pearson(cols[i], cols[j]);
      if (v && i == j) v = 1.0;
      m.r[i][j] = m.r[j][i] = v;
    }
  return m;
}

// Per-point criterion columns from aggregated targets: the collective scores,
// or one group's row.
inline std::map<std::string, CriterionScores> criterion_columns(
    const std::map<std::string, ratings::ScoreVector28>& scores,
    std::optional<ratings::Group> group = std::nullopt) {
  std::map<std::string, CriterionScores> out;
  for (const auto& [p, sv] : scores) {
    CriterionScores s;
    for (auto c : ratings::kCriteria)
      s[static_cast<int>(c)] = group ? sv.group(*group, c) : sv.collective(c);
    out[p] = s;
  }
  return out;
}

inline json to_json(const CorrelationMatrix& m) {
  json rows = json::array();
  for (const auto& row : m.r) {
    json r = json::array();
    for (const auto& v : row) r.push_back(optional_json(v));
    rows.push_back(r);
  }
  return {{"labels", ratings::kCriterionNames}, {"matrix", rows}};
}

inline std::string to_csv(const CorrelationMatrix& m) {
  std::string out = "criterion";
  for (auto n : ratings::kCriterionNames) out += "," + std::string(n);
  out += "\n";
  for (std::size_t i = 0; i < 4; ++i) {
    out += std::string(ratings::kCriterionNames[i]);
    for (const auto& v : m.r[i]) out += "," + (v ? json(*v).dump() : std::string());
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutation importance

struct FeatureImportance {
  std::string feature;
  double mean_delta_r2 = 0.0;
  double std_error = 0.0;  // sample SD of the deltas / sqrt(n)
  std::size_t n_shuffles = 0;
};

struct PermImportanceReport {
  double baseline_r2 = 0.0;
  std::vector<FeatureImportance> features;
};

inline double pooled_r2_of(const model::ModelParams& params,
                           std::span<const segmentation::FeatureSequence> seqs,
                           std::span<const model::Example> set) {
  std::vector<Output> preds, targets;
  std::vector<model::Mask> masks;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    preds.push_back(model::forward(params, seqs[i]));
    targets.push_back(set[i].target);
    masks.push_back(set[i].mask);
  }
  const auto r = r_squared(preds, targets, masks);
  if (!r.overall) throw invalid_argument("permutation_importance: targets have zero variance");
  return *r.overall;
}

// For each feature column f and shuffle k, one permutation drawn from
// Rng(seed + k) is applied to column f across all pixel rows of the whole
// evaluation set; the recorded value is baseline R^2 minus permuted R^2.
inline PermImportanceReport permutation_importance(const model::ModelParams& params,
                                                   std::span<const model::Example> eval_set,
                                                   std::size_t n_shuffles = 100,
                                                   std::uint64_t seed = 0, std::size_t jobs = 1) {
  if (eval_set.empty()) throw invalid_argument("permutation_importance: empty evaluation set");
  if (n_shuffles == 0) throw invalid_argument("permutation_importance: n_shuffles must be >= 1");
  std::vector<segmentation::FeatureSequence> base;
  std::size_t total_rows = 0;
  for (const auto& e : eval_set) {
    base.push_back(e.seq);
    total_rows += e.seq.size();
  }
  PermImportanceReport report;
  report.baseline_r2 = pooled_r2_of(params, base, eval_set);

  constexpr std::size_t F = segmentation::kFeatureDim;
  std::vector<std::vector<double>> deltas(F, std::vector<double>(n_shuffles));

  auto run = [&](std::size_t k) {
    Rng rng(seed + k);
    std::vector<std::size_t> perm(total_rows);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    // Global row index -> (sequence, row).
    std::vector<std::pair<std::size_t, std::size_t>> where;
    where.reserve(total_rows);
    for (std::size_t s = 0; s < base.size(); ++s)
      for (std::size_t r = 0; r < base[s].size(); ++r) where.emplace_back(s, r);
    auto seqs = base;
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t g = 0; g < total_rows; ++g) {
        const auto [ds, dr] = where[g];
        const auto [ss, sr] = where[perm[g]];
        seqs[ds].rows[dr * F + f] = base[ss].rows[sr * F + f];
      }
      deltas[f][k] = report.baseline_r2 - pooled_r2_of(params, seqs, eval_set);
      for (std::size_t g = 0; g < total_rows; ++g) {
        const auto [ds, dr] = where[g];
        seqs[ds].rows[dr * F + f] = base[ds].rows[dr * F + f];
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n_shuffles));
  if (jobs == 1) {
    for (std::size_t k = 0; k < n_shuffles; ++k) run(k);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t k = t; k < n_shuffles; k += jobs) run(k);
      });
  }

  for (std::size_t f = 0; f < F; ++f) {
    FeatureImportance fi;
    fi.feature = std::string(segmentation::kFeatureNames[f]);
    fi.n_shuffles = n_shuffles;
    fi.mean_delta_r2 = stats::mean(deltas[f]);
    if (n_shuffles > 1) {
      double ss = 0;
      for (double d : deltas[f]) ss += (d - fi.mean_delta_r2) * (d - fi.mean_delta_r2);
      fi.std_error = std::sqrt(ss / double(n_shuffles - 1)) / std::sqrt(double(n_shuffles));
    }
    report.features.push_back(fi);
  }
  return report;
}

inline json to_json(const PermImportanceReport& r) {
  json feats = json::array();
  for (const auto& f : r.features)
    feats.push_back({{"feature", f.feature},
                     {"mean_delta_r2", f.mean_delta_r2},
                     {"std_error", f.std_error},
                     {"n_shuffles", f.n_shuffles}});
  return {{"baseline_r2", r.baseline_r2}, {"features", feats}};
}

inline std::string to_csv(const PermImportanceReport& r) {
  std::string out = "feature,mean_delta_r2,std_error,n_shuffles\n";
  for (const auto& f : r.features)
    out += f.feature + "," + json(f.mean_delta_r2).dump() + "," + json(f.std_error).dump() + "," +
           std::to_string(f.n_shuffles) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

using stats::distribution_summary;
using stats::DistributionSummary;

inline json to_json(const DistributionSummary& d) {
  return {{"min", d.min}, {"q1", d.q1},     {"median", d.median}, {"q3", d.q3},
          {"max", d.max}, {"mean", d.mean}, {"sd", d.sd},         {"n", d.n}};
}

enum class Grade { A, B, C, D };

inline char to_char(Grade g) { return "ABCD"[static_cast<int>(g)]; }

// Lower bounds of C, B and A; D covers [1, c).
struct GradeThresholds {
  double c = 1.75;
  double b = 2.5;
  double a = 3.25;
};

inline Grade grade(double score, const GradeThresholds& t = {}) {
  if (!(score >= 1.0 && score <= 4.0))
    throw invalid_argument("grade: score " + std::to_string(score) + " outside [1, 4]");
  if (score >= t.a) return Grade::A;
  if (score >= t.b) return Grade::B;
  if (score >= t.c) return Grade::C;
  return Grade::D;
}

}  // namespace streetreview::evaluation
