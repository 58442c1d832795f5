#pragma once

// Descriptive statistics shared by ratings, training and evaluation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "streetreview/core.hpp"

namespace streetreview::stats {

inline double mean(std::span<const double> v) {
  if (v.empty()) throw invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation (divides by n).
inline double population_sd(std::span<const double> v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Linear-interpolation quantile over sorted data (Hyndman-Fan type 7).
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw invalid_argument("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct DistributionSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0, sd = 0;
  std::size_t n = 0;
};

inline DistributionSummary distribution_summary(std::span<const double> values) {
  if (values.empty()) throw invalid_argument("distribution_summary: empty input");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  DistributionSummary d;
  d.n = s.size();
  d.min = s.front();
  d.max = s.back();
  d.q1 = quantile_sorted(s, 0.25);
  d.median = quantile_sorted(s, 0.5);
  d.q3 = quantile_sorted(s, 0.75);
  d.mean = mean(values);
  d.sd = population_sd(values);
  return d;
}

// Pearson correlation; nullopt when either column has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw invalid_argument("pearson: need at least 2 samples");
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

// Residual and total sums of squares for one output column.
struct SumsOfSquares {
  double ss_res = 0.0;
  double ss_tot = 0.0;
  std::size_t n = 0;
};

// Column-wise sums of squares over rows of width `width`, skipping masked
// entries (mask may be empty = all unmasked).
inline std::vector<SumsOfSquares> column_sums_of_squares(std::span<const double> preds,
                                                         std::span<const double> targets,
                                                         std::span<const unsigned char> mask,
                                                         std::size_t width) {
  if (preds.size() != targets.size() || width == 0 || preds.size() % width != 0)
    throw invalid_argument("r_squared: shape mismatch");
  if (!mask.empty() && mask.size() != preds.size())
    throw invalid_argument("r_squared: mask shape mismatch");
  const std::size_t rows = preds.size() / width;
  std::vector<SumsOfSquares> out(width);
  std::vector<double> col_mean(width, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      if (!mask.empty() && !mask[i]) continue;
      col_mean[c] += targets[i];
      ++out[c].n;
    }
  for (std::size_t c = 0; c < width; ++c)
    if (out[c].n) col_mean[c] /= static_cast<double>(out[c].n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = r * width + c;
      if (!mask.empty() && !mask[i]) continue;
      const double e = targets[i] - preds[i];
      const double d = targets[i] - col_mean[c];
      out[c].ss_res += e * e;
      out[c].ss_tot += d * d;
    }
  return out;
}

// Pooled R^2: 1 - sum(SSres) / sum(SStot) over columns with nonzero variance.
inline std::optional<double> pooled_r2(std::span<const SumsOfSquares> cols) {
  double res = 0, tot = 0;
  for (const auto& c : cols)
    if (c.ss_tot > 0.0) {
      res += c.ss_res;
      tot += c.ss_tot;
    }
  if (tot == 0.0) return std::nullopt;
  return 1.0 - res / tot;
}

}  // namespace streetreview::stats
