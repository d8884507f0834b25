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

// Table-based partitioning of records into bins, histograms and densities
// over a feature schema, and the total variation distance between densities.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/dataset.hpp"

namespace deideval {

using Schema = std::vector<std::string>;

// Bin keys are tuples of per-feature bin codes, stored flat
// (`arity` codes per bin) and sorted lexicographically.
class Partition {
 public:
  // Partitions the rows of all `parts` (which must share a schema) jointly:
  // row ids run over parts[0] first, then parts[1], and so on.
  static Partition build(std::span<const Dataset* const> parts,
                         std::span<const std::string> schema) {
    if (parts.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "no datasets to partition");
    }
    const Dataset& first = *parts.front();
    for (const Dataset* p : parts) {
      if (p != &first && !same_features(first, *p, schema)) {
        throw Error(ErrorCode::kSchemaMismatch,
                    "datasets disagree on the partition schema");
      }
    }
    Partition out;
    out.schema_.assign(schema.begin(), schema.end());
    std::vector<std::size_t> features;
    {
      std::vector<std::string> seen;
      for (const auto& name : schema) {
        if (std::find(seen.begin(), seen.end(), name) != seen.end()) {
          throw Error(ErrorCode::kDuplicateFeature,
                      "feature '" + name + "' repeated in schema");
        }
        seen.push_back(name);
        const std::size_t f = first.index_of(name);
        const FeatureSpec& spec = first.spec(f);
        if (!spec.binnable()) {
          throw Error(ErrorCode::kNotBinnable,
                      "numeric feature '" + name +
                          "' has no declared discretization");
        }
        features.push_back(f);
        out.cardinalities_.push_back(spec.cardinality());
      }
    }
    std::size_t total = 0;
    for (const Dataset* p : parts) total += p->row_count();
    out.row_bin_.resize(total);
    const std::size_t arity = features.size();

    // Mixed-radix codes when the key space fits in 64 bits.
    std::uint64_t space = 1;
    bool fits = true;
    for (std::uint32_t c : out.cardinalities_) {
      if (c != 0 && space > (std::uint64_t{1} << 62) / c) {
        fits = false;
        break;
      }
      space *= std::max<std::uint32_t>(c, 1);
    }

    if (fits) {
      std::vector<std::pair<std::uint64_t, std::uint32_t>> coded(total);
      std::size_t row = 0;
      for (const Dataset* p : parts) {
        std::vector<std::uint64_t> codes(p->row_count(), 0);
        for (std::size_t k = 0; k < arity; ++k) {
          const std::uint64_t radix = out.cardinalities_[k];
          for (std::size_t r = 0; r < codes.size(); ++r) {
            codes[r] = codes[r] * radix + p->bin_code(features[k], r);
          }
        }
        for (std::size_t r = 0; r < codes.size(); ++r, ++row) {
          coded[row] = {codes[r], static_cast<std::uint32_t>(row)};
        }
      }
      std::sort(coded.begin(), coded.end());
      std::vector<std::uint32_t> key(arity);
      for (std::size_t i = 0; i < coded.size(); ++i) {
        if (i == 0 || coded[i].first != coded[i - 1].first) {
          std::uint64_t code = coded[i].first;
          for (std::size_t k = arity; k-- > 0;) {
            key[k] = static_cast<std::uint32_t>(code % out.cardinalities_[k]);
            code /= out.cardinalities_[k];
          }
          out.keys_.insert(out.keys_.end(), key.begin(), key.end());
          out.sizes_.push_back(0);
        }
        out.row_bin_[coded[i].second] =
            static_cast<std::uint32_t>(out.sizes_.size() - 1);
        ++out.sizes_.back();
      }
    } else {
      // Gather codes row-major, then sort row ids lexicographically.
      std::vector<std::uint32_t> codes(total * arity);
      std::size_t row = 0;
      for (const Dataset* p : parts) {
        for (std::size_t r = 0; r < p->row_count(); ++r, ++row) {
          for (std::size_t k = 0; k < arity; ++k) {
            codes[row * arity + k] = p->bin_code(features[k], r);
          }
        }
      }
      std::vector<std::uint32_t> order(total);
      std::iota(order.begin(), order.end(), 0u);
      auto key_of = [&](std::uint32_t r) {
        return std::span<const std::uint32_t>(codes.data() + r * arity, arity);
      };
      std::sort(order.begin(), order.end(),
                [&](std::uint32_t a, std::uint32_t b) {
                  auto ka = key_of(a);
                  auto kb = key_of(b);
                  if (std::lexicographical_compare(ka.begin(), ka.end(),
                                                   kb.begin(), kb.end())) {
                    return true;
                  }
                  if (std::lexicographical_compare(kb.begin(), kb.end(),
                                                   ka.begin(), ka.end())) {
                    return false;
                  }
                  return a < b;
                });
      for (std::size_t i = 0; i < order.size(); ++i) {
        auto k = key_of(order[i]);
        if (i == 0 || !std::equal(k.begin(), k.end(), key_of(order[i - 1]).begin())) {
          out.keys_.insert(out.keys_.end(), k.begin(), k.end());
          out.sizes_.push_back(0);
        }
        out.row_bin_[order[i]] = static_cast<std::uint32_t>(out.sizes_.size() - 1);
        ++out.sizes_.back();
      }
    }
    return out;
  }

  static Partition build(const Dataset& ds, std::span<const std::string> schema) {
    const Dataset* parts[] = {&ds};
    return build(parts, schema);
  }

  const Schema& schema() const { return schema_; }
  std::size_t arity() const { return schema_.size(); }
  std::size_t bin_count() const { return sizes_.size(); }
  std::size_t row_count() const { return row_bin_.size(); }
  const std::vector<std::uint32_t>& cardinalities() const { return cardinalities_; }

  std::span<const std::uint32_t> key(std::size_t bin) const {
    return {keys_.data() + bin * arity(), arity()};
  }
  const std::vector<std::uint32_t>& flat_keys() const { return keys_; }
  // Number of rows in each bin.
  const std::vector<std::uint64_t>& sizes() const { return sizes_; }
  // Bin id of every row.
  const std::vector<std::uint32_t>& row_bins() const { return row_bin_; }

 private:
  static bool same_features(const Dataset& a, const Dataset& b,
                            std::span<const std::string> schema) {
    for (const auto& name : schema) {
      auto ia = a.dictionary().find(name);
      auto ib = b.dictionary().find(name);
      if (!ia || !ib) return false;
      if (!a.spec(*ia).same_schema(b.spec(*ib))) return false;
    }
    return true;
  }

  Schema schema_;
  std::vector<std::uint32_t> cardinalities_;
  std::vector<std::uint32_t> keys_;
  std::vector<std::uint64_t> sizes_;
  std::vector<std::uint32_t> row_bin_;
};

// Occupied bins with their record counts, sorted by key.
struct Histogram {
  Schema schema;
  std::vector<std::uint32_t> keys;  // flat, schema.size() codes per bin
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  std::size_t bin_count() const { return counts.size(); }
  std::span<const std::uint32_t> key(std::size_t i) const {
    return {keys.data() + i * schema.size(), schema.size()};
  }
};

struct Density {
  Schema schema;
  std::vector<std::uint32_t> keys;  // flat, sorted
  std::vector<double> probabilities;

  std::size_t support_size() const { return probabilities.size(); }
  std::span<const std::uint32_t> key(std::size_t i) const {
    return {keys.data() + i * schema.size(), schema.size()};
  }
};

inline Histogram histogram_of(const Partition& p) {
  Histogram h;
  h.schema = p.schema();
  h.keys = p.flat_keys();
  h.counts = p.sizes();
  h.total = p.row_count();
  return h;
}

inline Histogram bin_records(const Dataset& ds,
                             std::span<const std::string> schema) {
  if (ds.row_count() == 0) {
    throw Error(ErrorCode::kEmptyDataset, "cannot bin an empty dataset");
  }
  return histogram_of(Partition::build(ds, schema));
}

inline std::size_t count_distinct_bins(const Dataset& ds,
                                       std::span<const std::string> schema) {
  if (ds.row_count() == 0) {
    throw Error(ErrorCode::kEmptyDataset, "cannot bin an empty dataset");
  }
  return Partition::build(ds, schema).bin_count();
}

inline Density density(const Histogram& h) {
  if (h.total == 0) {
    throw Error(ErrorCode::kEmptyDataset, "histogram total is zero");
  }
  Density d;
  d.schema = h.schema;
  d.keys = h.keys;
  d.probabilities.reserve(h.counts.size());
  const double total = static_cast<double>(h.total);
  for (std::uint64_t c : h.counts) {
    d.probabilities.push_back(static_cast<double>(c) / total);
  }
  return d;
}

// Sum over the union of supports of |p_a(bin) - p_b(bin)|, in key order.
inline double total_variation(const Density& a, const Density& b) {
  if (a.schema != b.schema) {
    throw Error(ErrorCode::kSchemaMismatch,
                "densities are over different schemas");
  }
  const std::size_t arity = a.schema.size();
  auto compare = [&](std::size_t i, std::size_t j) {
    for (std::size_t k = 0; k < arity; ++k) {
      const std::uint32_t x = a.keys[i * arity + k];
      const std::uint32_t y = b.keys[j * arity + k];
      if (x != y) return x < y ? -1 : 1;
    }
    return 0;
  };
  double sum = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.support_size() || j < b.support_size()) {
    if (j == b.support_size()) {
      sum += a.probabilities[i++];
    } else if (i == a.support_size()) {
      sum += b.probabilities[j++];
    } else {
      const int c = compare(i, j);
      if (c < 0) {
        sum += a.probabilities[i++];
      } else if (c > 0) {
        sum += b.probabilities[j++];
      } else {
        sum += std::abs(a.probabilities[i++] - b.probabilities[j++]);
      }
    }
  }
  return sum;
}

}  // namespace deideval
