// Copyright 2026 The deideval Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "deideval/fidelity.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "gtest/gtest.h"
#include "support/error_code.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace deideval {
namespace {

using testing::code_of;

using testing::from_codes;
using testing::uniform_dict;

KMarginalConfig exhaustive(std::size_t k) {
  KMarginalConfig cfg;
  cfg.k = k;
  cfg.exhaustive = true;
  return cfg;
}

TEST(UnivariateTest, CopyHasZeroTvd) {
  const auto t = testing::survey_like(200, 7, 1);
  for (const auto& f : univariate_report(t, t)) EXPECT_EQ(f.tvd, 0.0);
}

TEST(UnivariateTest, MovedMassDoublesTvd) {
  const auto dict = uniform_dict(2, 3);
  std::vector<std::vector<std::uint32_t>> tr, dr;
  for (std::uint32_t i = 0; i < 10; ++i) {
    tr.push_back({i < 5 ? 0u : 1u, i % 3});
    dr.push_back({0, i % 3});
  }
  const auto rep = univariate_report(from_codes(dict, tr), from_codes(dict, dr));
  ASSERT_EQ(rep.size(), 2u);
  EXPECT_DOUBLE_EQ(rep[0].tvd, 1.0);
  EXPECT_EQ(rep[0].entries.size(), 2u);
  EXPECT_EQ(rep[0].entries[1].value, "1");
  EXPECT_DOUBLE_EQ(rep[0].entries[1].target, 0.5);
  EXPECT_DOUBLE_EQ(rep[0].entries[1].deid, 0.0);
  EXPECT_DOUBLE_EQ(rep[1].tvd, 0.0);
}

TEST(UnivariateTest, RandomPairMatchesTally) {
  const auto dict = uniform_dict(3, 4);
  const auto t = testing::random_coded(dict, 20, 3);
  const auto d = testing::random_coded(dict, 20, 4, 0.6);
  const auto rep = univariate_report(t, d);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_NEAR(rep[f].tvd, oracle::tvd(t, d, {rep[f].feature}), 1e-12);
  }
}

TEST(UnivariateTest, WeightedAndMismatch) {
  const DataDictionary dict({testing::cat("A", 2), FeatureSpec::numeric("W", 0, 100, {}, true, false)});
  std::vector<Column> cols(2);
  cols[0].codes = {0, 1};
  cols[1].values = {3, 1};
  const auto t = Dataset::from_columns(dict, cols);
  const auto rep = univariate_report(t, t, std::string("W"));
  ASSERT_EQ(rep.size(), 1u);
  EXPECT_DOUBLE_EQ(rep[0].entries[0].target, 0.75);
  const auto other = from_codes(uniform_dict(2, 2), {{0, 0}});
  EXPECT_EQ(code_of([&] { univariate_report(t, other); }), ErrorCode::kSchemaMismatch);
  EXPECT_EQ(code_of([&] { univariate_report(t, t, std::string("A")); }),
            ErrorCode::kInvalidArgument);
}

TEST(CorrelationTest, PearsonAndKendallMatchOracles) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.below(5));
      y[i] = static_cast<double>(rng.below(4)) + (trial % 2 ? x[i] : 0);
    }
    const auto p = pearson(x, y);
    const auto po = oracle::pearson(x, y);
    ASSERT_EQ(p.has_value(), po.has_value());
    if (p) EXPECT_NEAR(*p, *po, 1e-9);
    const auto k = kendall_tau_b(x, y);
    const auto ko = oracle::kendall_tau_b(x, y);
    ASSERT_EQ(k.has_value(), ko.has_value());
    if (k) EXPECT_NEAR(*k, *ko, 1e-12);
  }
  const std::vector<double> c = {1, 1, 1}, v = {1, 2, 3};
  EXPECT_FALSE(pearson(c, v).has_value());
  EXPECT_FALSE(kendall_tau_b(c, v).has_value());
  EXPECT_DOUBLE_EQ(*kendall_tau_b(v, v), 1.0);
}

DataDictionary two_ordinals() {
  return DataDictionary({testing::ord("X", 2), testing::ord("Y", 2), testing::cat("C", 2)});
}

TEST(CorrelationTest, CorrelatedVersusIndependent) {
  std::vector<std::vector<std::uint32_t>> tr, dr;
  for (std::uint32_t i = 0; i < 100; ++i) {
    tr.push_back({i % 2, i % 2, 0});
    dr.push_back({i % 2, (i / 2) % 2, 0});
  }
  const auto t = from_codes(two_ordinals(), tr);
  const auto d = from_codes(two_ordinals(), dr);
  for (auto method : {CorrelationMethod::kPearson, CorrelationMethod::kKendallTauB}) {
    const auto c = correlation_difference(t, d, method);
    ASSERT_EQ(c.features, (Schema{"X", "Y"}));
    EXPECT_NEAR(*c.at(0, 1), 1.0, 1e-12);
    EXPECT_EQ(*c.at(0, 1), *c.at(1, 0));
    EXPECT_EQ(*c.at(0, 0), 0.0);
    const auto same = correlation_difference(t, t, method);
    for (const auto& e : same.delta) EXPECT_EQ(*e, 0.0);
  }
}

TEST(CorrelationTest, ConstantColumnIsUndefined) {
  std::vector<std::vector<std::uint32_t>> rows;
  for (std::uint32_t i = 0; i < 10; ++i) rows.push_back({i % 2, 1, 0});
  const auto t = from_codes(two_ordinals(), rows);
  const auto c = correlation_difference(t, t, CorrelationMethod::kPearson);
  EXPECT_FALSE(c.at(0, 1).has_value());
  const auto cats = from_codes(uniform_dict(3, 2), {{0, 1, 0}});
  EXPECT_EQ(code_of([&] { correlation_difference(cats, cats, CorrelationMethod::kPearson); }),
            ErrorCode::kInsufficientData);
}

TEST(KMarginalTest, CopyScores1000) {
  const auto t = testing::survey_like(300, 8, 2);
  KMarginalConfig cfg;
  cfg.seed = 1;
  const auto s = kmarginal_score(t, t, cfg);
  EXPECT_EQ(s.score, 1000);
  EXPECT_EQ(s.mean_tvd, 0.0);
  EXPECT_EQ(s.per_subset.size(), 50u);
}

TEST(KMarginalTest, DisjointScoresZero) {
  const auto dict = uniform_dict(4, 4);
  std::vector<std::vector<std::uint32_t>> tr, dr;
  for (std::uint32_t i = 0; i < 12; ++i) {
    tr.push_back({i % 2, i % 2, (i / 2) % 2, 0});
    dr.push_back({2 + i % 2, 3, 2, 3});
  }
  const auto s = kmarginal_score(from_codes(dict, tr), from_codes(dict, dr), exhaustive(3));
  EXPECT_EQ(s.score, 0);
  EXPECT_EQ(s.mean_tvd, 2.0);
}

TEST(KMarginalTest, ExhaustiveMatchesBruteForce) {
  const auto dict = uniform_dict(5, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = testing::random_coded(dict, 12, seed);
    const auto d = testing::random_coded(dict, 12, seed + 50, 0.8);
    const auto s = kmarginal_score(t, d, exhaustive(3));
    const auto o = oracle::kmarginal_exhaustive(t, d, dict.feature_names(), 3);
    EXPECT_EQ(s.per_subset.size(), 10u);
    EXPECT_EQ(o.subsets, 10u);
    EXPECT_NEAR(s.mean_tvd, o.mean_tvd, 1e-12);
    EXPECT_EQ(s.score, o.score);
  }
}

TEST(KMarginalTest, SamplingEverySubsetEqualsExhaustive) {
  const auto dict = uniform_dict(6, 3);
  const auto t = testing::random_coded(dict, 40, 1);
  const auto d = testing::random_coded(dict, 30, 2, 0.5);
  KMarginalConfig cfg;
  cfg.k = 3;
  cfg.n_subsets = 20;
  cfg.seed = 99;
  const auto sampled = kmarginal_score(t, d, cfg);
  const auto full = kmarginal_score(t, d, exhaustive(3));
  ASSERT_EQ(sampled.per_subset.size(), full.per_subset.size());
  for (std::size_t i = 0; i < full.per_subset.size(); ++i) {
    EXPECT_EQ(sampled.per_subset[i].features, full.per_subset[i].features);
    EXPECT_EQ(sampled.per_subset[i].tvd, full.per_subset[i].tvd);
  }
  EXPECT_EQ(sampled.mean_tvd, full.mean_tvd);
}

TEST(KMarginalTest, SymmetricPermutationInvariantAndBounded) {
  const auto dict = uniform_dict(5, 4);
  const auto t = testing::random_coded(dict, 80, 5);
  const auto d = testing::random_coded(dict, 60, 6, 1.0);
  KMarginalConfig cfg;
  cfg.seed = 3;
  cfg.n_subsets = 6;
  const auto a = kmarginal_score(t, d, cfg);
  const auto b = kmarginal_score(d, t, cfg);
  EXPECT_EQ(a.mean_tvd, b.mean_tvd);
  std::vector<std::size_t> order(d.row_count());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  EXPECT_NEAR(kmarginal_score(t, take_rows(d, order), cfg).mean_tvd, a.mean_tvd, 1e-12);
  EXPECT_GE(a.score, 0);
  EXPECT_LT(a.score, 1000);
}

TEST(KMarginalTest, SampledSubsetsDeterministicAndDistinct) {
  Schema features;
  for (int i = 0; i < 12; ++i) features.push_back("F" + std::to_string(i));
  KMarginalConfig cfg;
  cfg.seed = 17;
  cfg.n_subsets = 30;
  const auto a = choose_marginal_subsets(features, cfg);
  const auto b = choose_marginal_subsets(features, cfg);
  EXPECT_EQ(a.subsets, b.subsets);
  std::set<Schema> distinct(a.subsets.begin(), a.subsets.end());
  EXPECT_EQ(distinct.size(), 30u);
  cfg.seed = 18;
  EXPECT_NE(choose_marginal_subsets(features, cfg).subsets, a.subsets);
}

TEST(KMarginalTest, AlwaysIncludeAndClamping) {
  const Schema features = {"A", "B", "C", "D"};
  KMarginalConfig cfg;
  cfg.seed = 1;
  cfg.always_include = {"C"};
  cfg.n_subsets = 100;
  const auto c = choose_marginal_subsets(features, cfg);
  EXPECT_EQ(c.subsets.size(), 3u);
  EXPECT_EQ(c.warnings.size(), 1u);
  for (const auto& s : c.subsets) {
    EXPECT_NE(std::find(s.begin(), s.end(), "C"), s.end());
  }
  EXPECT_EQ(c.subsets[0], (Schema{"A", "B", "C"}));
}

TEST(KMarginalTest, ConfigErrors) {
  const Schema features = {"A", "B", "C"};
  KMarginalConfig cfg;
  cfg.seed = 1;
  cfg.k = 4;
  EXPECT_EQ(code_of([&] { choose_marginal_subsets(features, cfg); }),
            ErrorCode::kInvalidArgument);
  cfg.k = 0;
  EXPECT_EQ(code_of([&] { choose_marginal_subsets(features, cfg); }),
            ErrorCode::kInvalidArgument);
  cfg.k = 2;
  cfg.always_include = {"A", "B"};
  EXPECT_EQ(code_of([&] { choose_marginal_subsets(features, cfg); }),
            ErrorCode::kInvalidArgument);
  cfg.always_include = {"Z"};
  EXPECT_THROW(choose_marginal_subsets(features, cfg), Error);
  cfg.always_include.clear();
  cfg.seed.reset();
  EXPECT_THROW(choose_marginal_subsets(features, cfg), Error);
  cfg.exhaustive = true;
  EXPECT_EQ(choose_marginal_subsets(features, cfg).subsets.size(), 3u);
}

TEST(KMarginalTest, ScoreFormula) {
  EXPECT_EQ(score_from_mean_tvd(0.0), 1000);
  EXPECT_EQ(score_from_mean_tvd(2.0), 0);
  EXPECT_EQ(score_from_mean_tvd(0.024), 988);
  EXPECT_EQ(score_from_mean_tvd(0.001), 1000);
}

// G(2) and three other features; conditional tables differ only in G=1.
TEST(KMarginalByGroupTest, MatchesConditionalBruteForce) {
  const DataDictionary dict({testing::cat("G", 2), testing::cat("A", 3),
                             testing::cat("B", 3), testing::cat("C", 3)});
  const auto t = testing::random_coded(dict, 60, 11);
  auto d = testing::random_coded(dict, 45, 12, 0.7);
  const auto gk = kmarginal_by_group(t, d, {"G"}, exhaustive(3));
  ASSERT_EQ(gk.groups.size(), 2u);
  EXPECT_EQ(gk.subsets.size(), 3u);
  EXPECT_EQ(gk.subsets[0], (Schema{"G", "A", "B"}));
  for (const auto& g : gk.groups) {
    const auto sel = SubgroupSelector::parse(g.label);
    const auto tg = filter_subgroup(t, sel);
    const auto dg = filter_subgroup(d, sel);
    const auto o = oracle::kmarginal_exhaustive(tg, dg, {"A", "B", "C"}, 2);
    EXPECT_NEAR(g.score.mean_tvd, o.mean_tvd, 1e-12);
    EXPECT_EQ(g.score.score, o.score);
    EXPECT_EQ(g.n_target, tg.row_count());
  }
  EXPECT_EQ(gk.groups[0].label, "G=0");
}

TEST(KMarginalByGroupTest, UntouchedGroupScores1000) {
  const DataDictionary dict({testing::cat("G", 2), testing::cat("A", 4), testing::cat("B", 4)});
  const auto t = testing::random_coded(dict, 100, 4);
  // Rewrite A within G=0 only.
  std::vector<Column> cols(3);
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    const std::uint32_t g = t.bin_code(0, r);
    cols[0].codes.push_back(g);
    cols[1].codes.push_back(g == 0 ? 0 : t.bin_code(1, r));
    cols[2].codes.push_back(t.bin_code(2, r));
  }
  const auto d = Dataset::from_columns(dict, cols);
  const auto gk = kmarginal_by_group(t, d, {"G"}, exhaustive(2));
  EXPECT_LT(gk.groups[0].score.score, 1000);
  EXPECT_EQ(gk.groups[1].score.score, 1000);
  for (const auto& g : kmarginal_by_group(t, t, {"G"}, exhaustive(3)).groups) {
    EXPECT_EQ(g.score.score, 1000);
  }
}

TEST(KMarginalByGroupTest, MissingGroupAndErrors) {
  const DataDictionary dict({testing::cat("G", 3), testing::cat("A", 2), testing::cat("B", 2)});
  const auto t = from_codes(dict, {{0, 0, 1}, {1, 1, 0}, {2, 0, 0}});
  const auto d = from_codes(dict, {{0, 0, 1}, {1, 1, 0}});
  const auto gk = kmarginal_by_group(t, d, {"G"}, exhaustive(2));
  ASSERT_EQ(gk.groups.size(), 3u);
  EXPECT_TRUE(gk.groups[2].missing_in_deid);
  EXPECT_EQ(gk.groups[2].score.score, 0);
  KMarginalConfig cfg = exhaustive(2);
  cfg.always_include = {"G"};
  EXPECT_EQ(code_of([&] { kmarginal_by_group(t, d, {"G"}, cfg); }),
            ErrorCode::kDuplicateFeature);
  EXPECT_EQ(code_of([&] { kmarginal_by_group(t, d, {"G", "A"}, exhaustive(2)); }),
            ErrorCode::kInvalidArgument);
  // Deid-only groups are not reported.
  const auto extra = from_codes(dict, {{0, 0, 1}, {1, 1, 0}, {2, 0, 0}, {2, 1, 1}});
  const auto t2 = from_codes(dict, {{0, 0, 1}, {1, 1, 0}});
  EXPECT_EQ(kmarginal_by_group(t2, extra, {"G"}, exhaustive(2)).groups.size(), 2u);
}

TEST(KMarginalByGeographyTest, PerValueBruteForce) {
  const DataDictionary dict({testing::cat("PUMA", 3), testing::cat("A", 3),
                             testing::cat("B", 2), testing::cat("C", 3)});
  const auto t = testing::random_coded(dict, 90, 31);
  const auto d = testing::random_coded(dict, 90, 32, 0.5);
  const auto geo = kmarginal_by_geography(t, d, "PUMA", exhaustive(2));
  ASSERT_EQ(geo.scores.size(), 3u);
  int worst = 1001;
  for (const auto& s : geo.scores) {
    const auto sel = SubgroupSelector::parse("PUMA=" + s.value);
    const auto o = oracle::kmarginal_exhaustive(filter_subgroup(t, sel),
                                                filter_subgroup(d, sel), {"A", "B", "C"}, 2);
    EXPECT_EQ(s.score.score, o.score);
    EXPECT_NEAR(s.score.mean_tvd, o.mean_tvd, 1e-12);
    worst = std::min(worst, s.score.score);
  }
  EXPECT_EQ(geo.scores[geo.worst].score.score, worst);
}

TEST(KMarginalByGeographyTest, CopyAndMissing) {
  const auto t = testing::survey_like(400, 6, 3);
  KMarginalConfig cfg;
  cfg.seed = 2;
  const auto same = kmarginal_by_geography(t, t, "PUMA", cfg);
  EXPECT_EQ(same.scores.size(), 5u);
  for (const auto& s : same.scores) EXPECT_EQ(s.score.score, 1000);
  EXPECT_EQ(same.scores[same.worst].score.score, 1000);

  const auto sel = SubgroupSelector::parse("PUMA=2");
  std::vector<std::size_t> keep;
  const auto mask = sel.mask(t);
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    if (!mask[r]) keep.push_back(r);
  }
  const auto geo = kmarginal_by_geography(t, take_rows(t, keep), "PUMA", cfg);
  EXPECT_TRUE(geo.scores[2].missing_in_deid);
  EXPECT_EQ(geo.scores[2].score.score, 0);
  EXPECT_EQ(geo.worst, 2u);
  EXPECT_EQ(std::count_if(geo.warnings.begin(), geo.warnings.end(),
                          [](const std::string& w) {
                            return w.find("missing") != std::string::npos;
                          }),
            1);
}

TEST(IsotonicTest, PoolsViolators) {
  const std::vector<double> y = {1, 3, 2, 4};
  EXPECT_EQ(isotonic_non_decreasing(y), (std::vector<double>{1, 2.5, 2.5, 4}));
  const std::vector<double> z = {5, 4, 3};
  EXPECT_EQ(isotonic_non_decreasing(z), (std::vector<double>{4, 4, 4}));
  const std::vector<double> ok = {1, 1, 2};
  EXPECT_EQ(isotonic_non_decreasing(ok), ok);
}

class EquivalentSubsampleTest : public ::testing::Test {
 protected:
  void SetUp() override {
    t_ = testing::survey_like(600, 8, 5);
    cfg_.seed = 4;
    cfg_.n_subsets = 20;
  }
  Dataset t_;
  KMarginalConfig cfg_;
};

TEST_F(EquivalentSubsampleTest, PerfectScoreIsAtTop) {
  const auto s = kmarginal_score(t_, t_, cfg_);
  const auto es = equivalent_subsample(t_, s, default_es_fractions(), 3, 7);
  EXPECT_EQ(es.position, EsPosition::kAtOrAboveTop);
  EXPECT_EQ(es.describe(), ">= 90%");
  ASSERT_EQ(es.calibration.size(), 11u);
  for (std::size_t i = 1; i < es.calibration.size(); ++i) {
    EXPECT_GE(es.calibration[i].mean_score, es.calibration[i - 1].mean_score);
    const auto& a = es.calibration[i - 1];
    const auto& b = es.calibration[i];
    EXPECT_GE(b.raw_mean_score + 2 * std::max(a.stddev, b.stddev) + 1e-9, a.raw_mean_score);
  }
}

TEST_F(EquivalentSubsampleTest, CalibrationFixedPoint) {
  const std::vector<double> grid = {0.1, 0.4, 0.9};
  auto s = kmarginal_score(t_, t_, cfg_);
  const auto probe = equivalent_subsample(t_, s, grid, 1, 9);
  const double at40 = probe.calibration[1].mean_score;
  ASSERT_EQ(at40, std::round(at40));
  ASSERT_GT(at40, probe.calibration[0].mean_score);
  s.score = static_cast<int>(at40);
  const auto es = equivalent_subsample(t_, s, grid, 1, 9);
  EXPECT_EQ(es.position, EsPosition::kInterpolated);
  EXPECT_DOUBLE_EQ(es.es_percent, 40.0);
  EXPECT_EQ(es.describe(), "40%");
}

TEST_F(EquivalentSubsampleTest, InterpolatesAndFlagsBottom) {
  const std::vector<double> grid = {0.1, 0.9};
  auto s = kmarginal_score(t_, t_, cfg_);
  const auto probe = equivalent_subsample(t_, s, grid, 2, 1);
  const double lo = probe.calibration[0].mean_score;
  const double hi = probe.calibration[1].mean_score;
  s.score = static_cast<int>(std::ceil((lo + hi) / 2));
  const auto mid = equivalent_subsample(t_, s, grid, 2, 1);
  EXPECT_EQ(mid.position, EsPosition::kInterpolated);
  EXPECT_NEAR(mid.es_percent, 100 * (0.1 + 0.8 * (s.score - lo) / (hi - lo)), 1e-9);
  s.score = 0;
  const auto bottom = equivalent_subsample(t_, s, grid, 2, 1);
  EXPECT_EQ(bottom.position, EsPosition::kBelowBottom);
  EXPECT_EQ(bottom.describe(), "< 10%");
}

TEST_F(EquivalentSubsampleTest, DeterministicAcrossWorkerCounts) {
  const auto s = kmarginal_score(t_, t_, cfg_);
  const unsigned saved = worker_count();
  set_worker_count(1);
  const auto a = equivalent_subsample(t_, s, default_es_fractions(), 2, 5);
  set_worker_count(4);
  const auto b = equivalent_subsample(t_, s, default_es_fractions(), 2, 5);
  set_worker_count(saved);
  for (std::size_t i = 0; i < a.calibration.size(); ++i) {
    EXPECT_EQ(a.calibration[i].raw_mean_score, b.calibration[i].raw_mean_score);
  }
}

TEST_F(EquivalentSubsampleTest, Errors) {
  const auto s = kmarginal_score(t_, t_, cfg_);
  const std::vector<double> bad = {0.5, 0.2};
  EXPECT_EQ(code_of([&] { equivalent_subsample(t_, s, bad, 2, 1); }),
            ErrorCode::kInvalidArgument);
  const std::vector<double> one = {1.0};
  EXPECT_THROW(equivalent_subsample(t_, s, one, 2, 1), Error);
  EXPECT_THROW(equivalent_subsample(t_, s, default_es_fractions(), 0, 1), Error);
  const auto constant = from_codes(uniform_dict(3, 2), {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  const auto cs = kmarginal_score(constant, constant, exhaustive(2));
  EXPECT_EQ(code_of([&] { equivalent_subsample(constant, cs, default_es_fractions(), 2, 1); }),
            ErrorCode::kFlatCalibration);
}

}  // namespace
}  // namespace deideval
