#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles/stats_oracle.hpp"
#include "streetreview/evaluation.hpp"
#include "streetreview/synthetic.hpp"
#include "streetreview/training.hpp"

using namespace streetreview;
using namespace streetreview::evaluation;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = 1.0, double hi = 4.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<double> flatten(const std::vector<Output>& v) {
  std::vector<double> out;
  for (const auto& o : v) out.insert(out.end(), o.begin(), o.end());
  return out;
}

// 1e-12, relative once |expected| exceeds 1 (near-constant targets give
// very large negative R^2).
void expect_close(double actual, double expected) {
  EXPECT_NEAR(actual, expected, 1e-12 * std::max(1.0, std::abs(expected)));
}

}  // namespace

TEST(RSquared, PerfectAndMeanPredictor) {
  Rng rng(1);
  std::vector<Output> t(6), mean_pred(6);
  for (auto& o : t)
    for (double& x : o) x = rng.uniform(1, 4);
  Output m{};
  for (const auto& o : t)
    for (std::size_t c = 0; c < kOutputDim; ++c) m[c] += o[c] / 6.0;
  std::fill(mean_pred.begin(), mean_pred.end(), m);
  const auto perfect = r_squared(t, t);
  EXPECT_EQ(*perfect.overall, 1.0);
  for (const auto& v : perfect.per_output) EXPECT_EQ(*v, 1.0);
  EXPECT_NEAR(*r_squared(mean_pred, t).overall, 0.0, 1e-12);
}

TEST(RSquared, MatchesOracleAndIgnoresOrder) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<Output> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kOutputDim; ++c) {
        t[i][c] = rng.uniform(1, 4);
        p[i][c] = rng.uniform(1, 4);
      }
    const auto r = r_squared(p, t);
    expect_close(*r.overall, oracle::pooled_r2(flatten(p), flatten(t), kOutputDim));
    for (std::size_t c : {0u, 13u, 27u}) {
      std::vector<double> pc, tc;
      for (std::size_t i = 0; i < n; ++i) {
        pc.push_back(p[i][c]);
        tc.push_back(t[i][c]);
      }
      expect_close(*r.per_output[c], oracle::pooled_r2(pc, tc, 1));
    }
    std::reverse(p.begin(), p.end());
    std::reverse(t.begin(), t.end());
    expect_close(*r_squared(p, t).overall, *r.overall);
  }
}

TEST(RSquared, ZeroVarianceOutputIsUndefined) {
  std::vector<Output> p(3), t(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < kOutputDim; ++c) {
      t[i][c] = c == 4 ? 2.0 : 1.0 + i;
      p[i][c] = t[i][c] + (c == 4 ? 1.0 : 0.0);
    }
  const auto r = r_squared(p, t);
  EXPECT_FALSE(r.per_output[4].has_value());
  EXPECT_EQ(*r.overall, 1.0);
  EXPECT_EQ(*r.mean_of_outputs, 1.0);
  EXPECT_THROW(r_squared(std::vector<Output>(1), std::vector<Output>(1)), Error);
}

TEST(RSquared, MaskedCellsLeftOut) {
  std::vector<Output> p(2), t(2);
  std::vector<model::Mask> m(2, model::full_mask());
  for (std::size_t c = 0; c < kOutputDim; ++c) {
    t[0][c] = 1;
    t[1][c] = 3;
    p[0][c] = 1;
    p[1][c] = 3;
  }
  p[0][9] = 4;
  m[0][9] = 0;
  EXPECT_EQ(*r_squared(p, t, m).overall, 1.0);
  EXPECT_LT(*r_squared(p, t).overall, 1.0);
}

TEST(Pearson, MatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    const auto x = random_vec(rng, n), y = random_vec(rng, n);
    EXPECT_NEAR(*stats::pearson(x, y), oracle::pearson(x, y), 1e-12);
  }
  const std::vector<double> x = {1, 2, 3}, c = {2, 2, 2};
  EXPECT_FALSE(stats::pearson(x, c).has_value());
}

TEST(Quantiles, MatchOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = random_vec(rng, 1 + rng.below(40), -5, 5);
    const auto d = distribution_summary(v);
    EXPECT_NEAR(d.q1, oracle::quantile7(v, 0.25), 1e-12);
    EXPECT_NEAR(d.median, oracle::quantile7(v, 0.5), 1e-12);
    EXPECT_NEAR(d.q3, oracle::quantile7(v, 0.75), 1e-12);
    EXPECT_EQ(d.min, oracle::sorted_copy(v).front());
    EXPECT_EQ(d.max, oracle::sorted_copy(v).back());
    EXPECT_LE(d.min, d.q1);
    EXPECT_LE(d.q1, d.median);
    EXPECT_LE(d.median, d.q3);
    EXPECT_LE(d.q3, d.max);
  }
}

TEST(Distribution, Examples) {
  const auto d = distribution_summary(std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(d.median, 2.5);
  EXPECT_EQ(d.q1, 1.75);
  EXPECT_EQ(d.q3, 3.25);
  const auto c = distribution_summary(std::vector<double>{2, 2, 2});
  EXPECT_EQ(c.q1, 2.0);
  EXPECT_EQ(c.q3, 2.0);
  EXPECT_EQ(c.sd, 0.0);
  const auto s = distribution_summary(std::vector<double>{3});
  EXPECT_EQ(s.min, 3.0);
  EXPECT_EQ(s.q1, 3.0);
  EXPECT_EQ(s.max, 3.0);
  EXPECT_THROW(distribution_summary(std::vector<double>{}), Error);
  EXPECT_EQ(to_json(d)["n"], 4);
}

TEST(Correlation, SymmetricUnitDiagonalAndOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::map<std::string, CriterionScores> pts;
    std::array<std::vector<double>, 4> cols;
    for (int p = 0; p < 6; ++p) {
      CriterionScores s;
      for (int c = 0; c < 4; ++c) cols[c].push_back(s[c] = rng.uniform(1, 4));
      pts["p" + std::to_string(p)] = s;
    }
    const auto m = correlation_matrix(pts);
    for (int i = 0; i < 4; ++i) {
      EXPECT_EQ(*m.r[i][i], 1.0);
      for (int j = 0; j < 4; ++j) {
        EXPECT_EQ(*m.r[i][j], *m.r[j][i]);
        if (i != j) EXPECT_NEAR(*m.r[i][j], oracle::pearson(cols[i], cols[j]), 1e-12);
      }
    }
    // Positive affine rescaling of one column changes nothing.
    auto scaled = pts;
    for (auto& [_, s] : scaled) s[2] = 3.0 * s[2] + 0.5;
    const auto ms = correlation_matrix(scaled);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(*ms.r[2][j], *m.r[2][j], 1e-12);
  }
}

TEST(Correlation, IdenticalNegatedAndConstantColumns) {
  std::map<std::string, CriterionScores> pts = {
      {"a", {1, 1, 3, 2}}, {"b", {2, 2, 2, 2}}, {"c", {4, 4, 0, 2}}};
  const auto m = correlation_matrix(pts);
  EXPECT_NEAR(*m.r[0][1], 1.0, 1e-15);
  EXPECT_NEAR(*m.r[0][2], -1.0, 1e-15);
  EXPECT_FALSE(m.r[0][3].has_value());
  EXPECT_FALSE(m.r[3][3].has_value());
  EXPECT_TRUE(to_json(m)["matrix"][0][3].is_null());
  EXPECT_EQ(to_csv(m).rfind("criterion,inclusivity,aesthetics,practicality,accessibility\n", 0), 0u);
  EXPECT_THROW(correlation_matrix({{"a", {1, 2, 3, 4}}}), Error);
}

TEST(Correlation, ColumnsFromTargets) {
  ratings::ScoreVector28 sv;
  sv.collective(ratings::Criterion::aesthetics) = 2.0;
  sv.group(ratings::Group::young_male, ratings::Criterion::aesthetics) = 3.0;
  const auto coll = criterion_columns({{"p", sv}});
  EXPECT_EQ(coll.at("p")[1], 2.0);
  EXPECT_EQ(criterion_columns({{"p", sv}}, ratings::Group::young_male).at("p")[1], 3.0);
}

class PermImportance : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    set_ = new std::vector<model::Example>(synthetic::sidewalk_set(8, 16, 1));
    model::ModelConfig mc;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.n_fc_layers = 5;
    mc.seed = 1;
    model::TrainConfig tc;
    tc.max_epochs = tc.patience = 300;
    tc.batch_size = 4;
    tc.learning_rate = 3e-3;
    tc.seed = 3;
    params_ = new model::ModelParams(model::train(*set_, *set_, mc, tc).params);
  }
  static void TearDownTestSuite() {
    delete set_;
    delete params_;
  }
  static std::vector<model::Example>* set_;
  static model::ModelParams* params_;
};
std::vector<model::Example>* PermImportance::set_ = nullptr;
model::ModelParams* PermImportance::params_ = nullptr;

TEST_F(PermImportance, ConstantFeatureZeroAndSidewalkDominates) {
  const auto r = permutation_importance(*params_, *set_, 20, 7);
  ASSERT_EQ(r.features.size(), 12u);
  EXPECT_EQ(r.features[synthetic::kTerrainFeature].mean_delta_r2, 0.0);
  EXPECT_EQ(r.features[synthetic::kTerrainFeature].std_error, 0.0);
  const double sw = r.features[segmentation::kSidewalkFeature].mean_delta_r2;
  EXPECT_GT(sw, 0.1);
  for (std::size_t f = 0; f < 12; ++f)
    if (f != segmentation::kSidewalkFeature) EXPECT_GT(sw, 10 * r.features[f].mean_delta_r2) << f;
}

TEST_F(PermImportance, DeterministicAndJobIndependent) {
  const auto a = permutation_importance(*params_, *set_, 6, 11, 1);
  const auto b = permutation_importance(*params_, *set_, 6, 11, 3);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_NE(to_json(a).dump(), to_json(permutation_importance(*params_, *set_, 6, 12)).dump());
  EXPECT_EQ(to_csv(a).substr(0, 38), "feature,mean_delta_r2,std_error,n_shuf");
}

TEST_F(PermImportance, IgnoredInputHasNoEffect) {
  auto p = *params_;
  // Zero the embedding weights out of the red channel.
  p.tensor("embed.weight").row(0).setZero();
  const auto r = permutation_importance(p, *set_, 100, 1);
  EXPECT_LT(std::abs(r.features[0].mean_delta_r2), 1e-9);
}

TEST(Grade, BoundariesAndMonotone) {
  EXPECT_EQ(grade(4.0), Grade::A);
  EXPECT_EQ(grade(1.0), Grade::D);
  EXPECT_EQ(grade(2.5), Grade::B);
  EXPECT_EQ(grade(1.75), Grade::C);
  EXPECT_EQ(grade(3.2499), Grade::B);
  EXPECT_EQ(to_char(grade(3.25)), 'A');
  EXPECT_THROW(grade(0.99), Error);
  EXPECT_THROW(grade(std::nan("")), Error);
  int prev = 4;
  for (double s = 1.0; s <= 4.0; s += 0.01) {
    const int g = static_cast<int>(grade(s));
    EXPECT_LE(g, prev);
    prev = g;
  }
}

TEST(Reports, R2JsonAndCsv) {
  std::vector<Output> t(2);
  for (std::size_t c = 0; c < kOutputDim; ++c) {
    t[0][c] = 1;
    t[1][c] = 2;
  }
  const auto r = r_squared(t, t);
  const auto j = to_json(r);
  EXPECT_EQ(j["overall"], 1.0);
  EXPECT_EQ(j["per_output"]["collective/aesthetics"], 1.0);
  EXPECT_EQ(to_csv(r).substr(0, 30), "output,r2\noverall,1.0\nmean_of_");
}
