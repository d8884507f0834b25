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

#include "deideval/partition.hpp"

#include "gtest/gtest.h"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace deideval {
namespace {

using testing::from_codes;
using testing::uniform_dict;

std::uint64_t count_of(const Histogram& h, std::vector<std::uint32_t> key) {
  for (std::size_t b = 0; b < h.bin_count(); ++b) {
    auto k = h.key(b);
    if (std::equal(k.begin(), k.end(), key.begin(), key.end())) return h.counts[b];
  }
  return 0;
}

TEST(BinRecordsTest, CountsOccupiedBins) {
  const DataDictionary dict({testing::cat("S", 3), FeatureSpec::categorical("T", {"A", "B"})});
  const auto ds = testing::from_text(dict, {{"1", "A"}, {"1", "A"}, {"2", "B"}});
  const auto h = bin_records(ds, Schema{"S", "T"});
  EXPECT_EQ(h.bin_count(), 2u);
  EXPECT_EQ(h.total, 3u);
  EXPECT_EQ(count_of(h, {1, 0}), 2u);
  EXPECT_EQ(count_of(h, {2, 1}), 1u);
}

TEST(BinRecordsTest, ConstantColumnIsOneBin) {
  const auto ds = from_codes(uniform_dict(1, 4), {{2}, {2}, {2}, {2}, {2}});
  const auto h = bin_records(ds, Schema{"F0"});
  ASSERT_EQ(h.bin_count(), 1u);
  EXPECT_EQ(h.counts[0], 5u);
  EXPECT_EQ(count_distinct_bins(ds, Schema{"F0"}), 1u);
}

TEST(BinRecordsTest, AllBinaryCombos) {
  const auto ds = testing::all_binary_combinations(2, 1);
  const auto h = bin_records(ds, Schema{"B0", "B1"});
  EXPECT_EQ(h.bin_count(), 4u);
  for (auto c : h.counts) EXPECT_EQ(c, 1u);
}

TEST(BinRecordsTest, KeysSortedAndConserveRows) {
  const auto ds = testing::random_coded(uniform_dict(4, 5), 300, 9);
  const auto h = bin_records(ds, Schema{"F3", "F1", "F0"});
  std::uint64_t sum = 0;
  for (std::size_t b = 0; b < h.bin_count(); ++b) {
    sum += h.counts[b];
    EXPECT_GE(h.counts[b], 1u);
    if (b > 0) {
      auto a = h.key(b - 1);
      auto k = h.key(b);
      EXPECT_TRUE(std::lexicographical_compare(a.begin(), a.end(), k.begin(), k.end()));
    }
  }
  EXPECT_EQ(sum, 300u);
}

TEST(BinRecordsTest, Errors) {
  const auto empty = from_codes(uniform_dict(1, 2), {});
  EXPECT_THROW(bin_records(empty, Schema{"F0"}), Error);
  const DataDictionary dict({FeatureSpec::numeric("N", 0, 1, {}, false, false)});
  std::vector<Column> cols(1);
  cols[0].values = {0.5};
  const auto ds = Dataset::from_columns(dict, cols);
  try {
    bin_records(ds, Schema{"N"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotBinnable);
  }
}

TEST(CountDistinctBinsTest, MatchesBruteForceOnRandomData) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto ds = testing::random_coded(uniform_dict(3, 3), 6, seed);
    const Schema schema = {"F0", "F2"};
    EXPECT_EQ(count_distinct_bins(ds, schema), oracle::tally(ds, schema).size());
  }
}

TEST(CountDistinctBinsTest, WideKeysUseGeneralPath) {
  // 40 features of cardinality 7 overflow 64-bit mixed-radix codes.
  const auto dict = uniform_dict(40, 7);
  const auto ds = testing::random_coded(dict, 200, 4, 1.5);
  const Schema schema = dict.feature_names();
  EXPECT_EQ(count_distinct_bins(ds, schema), oracle::tally(ds, schema).size());
}

TEST(CountDistinctBinsTest, MonotoneUnderSchemaExtension) {
  const auto ds = testing::random_coded(uniform_dict(5, 3), 80, 2, 0.7);
  Schema s;
  std::size_t prev = 1;
  for (const auto& f : ds.dictionary().feature_names()) {
    s.push_back(f);
    const std::size_t n = count_distinct_bins(ds, s);
    EXPECT_GE(n, prev);
    prev = n;
  }
}

TEST(PartitionTest, EmptySchemaIsOneBin) {
  const auto ds = testing::random_coded(uniform_dict(2, 2), 10, 1);
  EXPECT_EQ(count_distinct_bins(ds, Schema{}), 1u);
}

TEST(PartitionTest, JointPartitionAcrossDatasets) {
  const auto a = from_codes(uniform_dict(1, 3), {{0}, {1}});
  const auto b = from_codes(uniform_dict(1, 3), {{1}, {2}, {2}});
  const Dataset* parts[] = {&a, &b};
  const auto p = Partition::build(parts, Schema{"F0"});
  EXPECT_EQ(p.bin_count(), 3u);
  EXPECT_EQ(p.row_count(), 5u);
  EXPECT_EQ(p.row_bins()[1], p.row_bins()[2]);
  EXPECT_EQ(p.sizes()[2], 2u);
}

TEST(PartitionTest, SchemaMismatchAcrossDatasets) {
  const auto a = from_codes(uniform_dict(1, 3), {{0}});
  const auto b = from_codes(uniform_dict(1, 4), {{0}});
  const Dataset* parts[] = {&a, &b};
  EXPECT_THROW(Partition::build(parts, Schema{"F0"}), Error);
  EXPECT_THROW(Partition::build(a, Schema{"F0", "F0"}), Error);
}

Density make_density(std::vector<std::uint32_t> keys, std::vector<double> probs) {
  Density d;
  d.schema = {"X"};
  d.keys = std::move(keys);
  d.probabilities = std::move(probs);
  return d;
}

TEST(DensityTest, ProbabilitiesFromCounts) {
  Histogram h;
  h.schema = {"X"};
  h.keys = {0, 1};
  h.counts = {3, 1};
  h.total = 4;
  const auto d = density(h);
  EXPECT_DOUBLE_EQ(d.probabilities[0], 0.75);
  EXPECT_DOUBLE_EQ(d.probabilities[1], 0.25);
  EXPECT_EQ(d.support_size(), 2u);
  h.counts = {2, 2};
  EXPECT_DOUBLE_EQ(density(h).probabilities[0], 0.5);
  h.keys = {0};
  h.counts = {1};
  h.total = 1;
  EXPECT_DOUBLE_EQ(density(h).probabilities[0], 1.0);
  h.total = 0;
  EXPECT_THROW(density(h), Error);
}

TEST(TotalVariationTest, Examples) {
  const auto half = make_density({0, 1}, {0.5, 0.5});
  const auto a = make_density({0}, {1.0});
  const auto b = make_density({1}, {1.0});
  EXPECT_DOUBLE_EQ(total_variation(half, half), 0.0);
  EXPECT_DOUBLE_EQ(total_variation(a, b), 2.0);
  EXPECT_DOUBLE_EQ(total_variation(half, a), 1.0);
  Density other = a;
  other.schema = {"Y"};
  EXPECT_THROW(total_variation(a, other), Error);
}

TEST(TotalVariationTest, MetricProperties) {
  Rng rng(11);
  auto random_density = [&] {
    std::vector<std::uint32_t> keys;
    std::vector<double> probs;
    double total = 0;
    for (std::uint32_t k = 0; k < 6; ++k) {
      if (rng.below(2) == 0) continue;
      keys.push_back(k);
      probs.push_back(1 + rng.uniform01());
      total += probs.back();
    }
    if (keys.empty()) {
      keys.push_back(0);
      probs.push_back(total = 1);
    }
    for (double& p : probs) p /= total;
    return make_density(keys, probs);
  };
  for (int i = 0; i < 200; ++i) {
    const auto x = random_density();
    const auto y = random_density();
    const auto z = random_density();
    EXPECT_DOUBLE_EQ(total_variation(x, y), total_variation(y, x));
    EXPECT_LE(total_variation(x, z), total_variation(x, y) + total_variation(y, z) + 1e-12);
    EXPECT_EQ(total_variation(x, x), 0.0);
    EXPECT_LE(total_variation(x, y), 2.0 + 1e-12);
  }
}

TEST(TotalVariationTest, MatchesOracleOnDatasets) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = testing::random_coded(uniform_dict(3, 3), 20, seed);
    const auto d = testing::random_coded(uniform_dict(3, 3), 15, seed + 100, 0.5);
    const Schema s = {"F0", "F2"};
    EXPECT_NEAR(total_variation(density(bin_records(t, s)), density(bin_records(d, s))),
                oracle::tvd(t, d, s), 1e-12);
  }
}

}  // namespace
}  // namespace deideval
