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

// Naive deidentifiers used as reference points for the metrics: identity,
// uniform subsampling, per-feature value swapping and a noisy histogram.

#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/dataset.hpp"
#include "deideval/partition.hpp"

namespace deideval {

inline Dataset deid_identity(const Dataset& t) { return t; }

// Uniform sample without replacement of round(fraction * rows) records, in
// sampled order.
inline Dataset deid_subsample(const Dataset& t, double fraction,
                              std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "fraction must be in (0, 1]");
  }
  const auto m = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(t.row_count())));
  if (m == 0) {
    throw Error(ErrorCode::kEmptyDataset, "subsample would contain no rows");
  }
  std::vector<std::size_t> rows(t.row_count());
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(seed);
  partial_shuffle(std::span(rows), m, rng);
  rows.resize(m);
  return take_rows(t, rows);
}

// For each feature independently, round(rate * rows) rows are drawn and
// their values of that feature are randomly permuted among themselves, so
// every univariate histogram is preserved.
inline Dataset deid_swap(const Dataset& t, double rate, const Schema& features,
                         std::uint64_t seed) {
  if (!(rate >= 0 && rate <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "swap rate must be in [0, 1]");
  }
  if (features.empty()) {
    throw Error(ErrorCode::kEmptySelection, "no features to swap");
  }
  std::vector<bool> selected(t.feature_count(), false);
  for (const auto& f : features) {
    const std::size_t i = t.index_of(f);
    if (selected[i]) {
      throw Error(ErrorCode::kDuplicateFeature, "feature '" + f + "' listed twice");
    }
    selected[i] = true;
  }
  const std::size_t n = t.row_count();
  const auto m = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  std::vector<Column> cols(t.feature_count());
  for (std::size_t f = 0; f < t.feature_count(); ++f) {
    cols[f] = t.column(f);
    if (!selected[f] || m < 2) continue;
    Rng rng(derive_seed(seed, t.spec(f).name()));
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    partial_shuffle(std::span(rows), m, rng);
    rows.resize(m);
    std::vector<std::size_t> perm = rows;
    shuffle(std::span(perm), rng);
    const Column& src = t.column(f);
    for (std::size_t i = 0; i < m; ++i) {
      if (t.spec(f).is_coded()) {
        cols[f].codes[rows[i]] = src.codes[perm[i]];
      } else {
        cols[f].values[rows[i]] = src.values[perm[i]];
      }
    }
  }
  return Dataset::from_columns(t.dictionary(), std::move(cols));
}

struct DpHistogramParams {
  double epsilon = 1.0;
  Schema schema;  // empty means every non-weight feature
  std::uint64_t max_cells = 10'000'000;
  std::uint64_t seed = 0;
};

// Two-sided geometric variate with P(k) proportional to exp(-epsilon |k|).
inline std::int64_t two_sided_geometric(double epsilon, Rng& rng) {
  auto one_sided = [&] {
    const double u = 1.0 - rng.uniform01();  // (0, 1]
    return static_cast<std::int64_t>(std::floor(-std::log(u) / epsilon));
  };
  const std::int64_t a = one_sided();
  return a - one_sided();
}

// Noisy contingency table released as records. Every cell of the dense
// table over `schema` (zero cells included) receives independent
// two-sided geometric noise; negative counts clamp to 0 and each cell emits
// that many records, in lexicographic cell order. Numeric features emit
// their bin representative. The output carries only the schema's features.
inline Dataset deid_dp_histogram(const Dataset& t, const DpHistogramParams& p) {
  if (!(p.epsilon > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  }
  const Schema schema = p.schema.empty() ? t.dictionary().metric_features() : p.schema;
  if (schema.empty()) throw Error(ErrorCode::kEmptySelection, "schema is empty");
  const Dataset view = select_features(t, schema);
  const std::size_t arity = view.feature_count();
  std::vector<std::uint64_t> radix(arity);
  std::uint64_t cells = 1;
  for (std::size_t f = 0; f < arity; ++f) {
    const FeatureSpec& s = view.spec(f);
    if (!s.binnable()) {
      throw Error(ErrorCode::kNotBinnable,
                  "numeric feature '" + s.name() + "' has no declared discretization");
    }
    radix[f] = s.cardinality();
    if (cells > p.max_cells / radix[f]) {
      throw Error(ErrorCode::kTooManyCells,
                  "contingency table exceeds " + std::to_string(p.max_cells) +
                      " cells");
    }
    cells *= radix[f];
  }

  std::vector<std::uint64_t> counts(cells, 0);
  for (std::size_t r = 0; r < view.row_count(); ++r) {
    std::uint64_t cell = 0;
    for (std::size_t f = 0; f < arity; ++f) cell = cell * radix[f] + view.bin_code(f, r);
    ++counts[cell];
  }
  constexpr std::uint64_t kChunk = 1 << 16;
  const std::size_t chunks = (cells + kChunk - 1) / kChunk;
  parallel_map(chunks, [&](std::size_t c) {
    for (std::uint64_t cell = c * kChunk; cell < std::min(cells, (c + 1) * kChunk);
         ++cell) {
      Rng rng(derive_seed(p.seed, cell));
      const std::int64_t noisy =
          static_cast<std::int64_t>(counts[cell]) + two_sided_geometric(p.epsilon, rng);
      counts[cell] = noisy > 0 ? static_cast<std::uint64_t>(noisy) : 0;
    }
    return 0;
  });

  std::vector<Column> cols(arity);
  std::vector<std::uint32_t> key(arity);
  for (std::uint64_t cell = 0; cell < cells; ++cell) {
    if (counts[cell] == 0) continue;
    std::uint64_t rest = cell;
    for (std::size_t f = arity; f-- > 0;) {
      key[f] = static_cast<std::uint32_t>(rest % radix[f]);
      rest /= radix[f];
    }
    for (std::size_t f = 0; f < arity; ++f) {
      const FeatureSpec& s = view.spec(f);
      if (s.is_coded()) {
        cols[f].codes.insert(cols[f].codes.end(), counts[cell], key[f]);
      } else {
        cols[f].values.insert(cols[f].values.end(), counts[cell],
                              s.bin_representative(key[f]));
      }
    }
  }
  return Dataset::from_columns(view.dictionary(), std::move(cols));
}

}  // namespace deideval
