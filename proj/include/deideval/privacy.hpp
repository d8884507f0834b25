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

#pragma once

#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/dataset.hpp"
#include "deideval/fidelity.hpp"
#include "deideval/partition.hpp"

namespace deideval {

struct UemResult {
  Schema schema;
  std::uint64_t unique_target_records = 0;
  std::uint64_t matched_unique = 0;
  double percent = 0;
  bool no_unique_records = false;
};

// Unique exact match: the share of target records whose tuple over `schema`
// is unique in the target and present at least once in the deidentified
// data. An empty schema uses every non-weight feature.
inline UemResult unique_exact_match(const Dataset& t, const Dataset& d,
                                    const Schema& schema = {}) {
  detail::require_same_schema(t, d);
  UemResult out;
  out.schema = schema.empty() ? t.dictionary().metric_features() : schema;
  if (out.schema.empty()) {
    throw Error(ErrorCode::kEmptySelection, "UEM schema is empty");
  }
  const Dataset* parts[] = {&t, &d};
  const Partition p = Partition::build(parts, out.schema);
  std::vector<std::uint64_t> tc(p.bin_count(), 0);
  std::vector<bool> in_deid(p.bin_count(), false);
  for (std::size_t r = 0; r < p.row_count(); ++r) {
    const std::uint32_t b = p.row_bins()[r];
    if (r < t.row_count()) {
      ++tc[b];
    } else {
      in_deid[b] = true;
    }
  }
  for (std::size_t b = 0; b < tc.size(); ++b) {
    if (tc[b] != 1) continue;
    ++out.unique_target_records;
    if (in_deid[b]) ++out.matched_unique;
  }
  out.no_unique_records = out.unique_target_records == 0;
  out.percent = out.no_unique_records
                    ? 0.0
                    : 100.0 * static_cast<double>(out.matched_unique) /
                          static_cast<double>(out.unique_target_records);
  return out;
}

}  // namespace deideval
