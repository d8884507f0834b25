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

// Empirical entropy, the uncertainty coefficient U(X|F), and the dispersal
// ratio of a population when a feature X is added to a partition schema F,
// with entropy-based lower and upper bounds on that ratio.
//
// All logarithms are base 2.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/csv.hpp"
#include "deideval/dataset.hpp"
#include "deideval/partition.hpp"

namespace deideval {

// -sum p log2 p over the support, in key order.
inline double entropy(const Density& d) {
  double h = 0;
  for (double p : d.probabilities) {
    if (p > 0) h -= p * std::log2(p);
  }
  return h;
}

inline double entropy(const Histogram& h) { return entropy(density(h)); }

struct EntropyStats {
  double h_x = 0;
  double h_f = 0;
  double h_joint = 0;
  double h_x_given_f = 0;
  double u = 0;
};

// How |Range(X)| is measured.
enum class RangeMode {
  kObserved,  // distinct values of X present in the data
  kDeclared,  // size of X's dictionary domain
};

// Closed-form bounds as a function of the uncertainty coefficient.
//   f(u)      = (1 - u) H(X) + H(F)
//   raw lower = 2^f(u) / |bins before|
//   raw upper = |P| f(u) / (log2|P| |bins before|)
// `lower`/`upper` additionally clamp to the trivial bounds 1 and |Range(X)|.
struct DispersalBounds {
  double f_u = 0;
  double raw_lower = 0;
  double raw_upper = 0;
  double lower = 0;
  double upper = 0;
};

inline DispersalBounds dispersal_bounds(double u, double h_x, double h_f,
                                        std::uint64_t population,
                                        std::uint64_t bins_before,
                                        std::uint64_t range_x) {
  if (population < 2 || bins_before == 0) {
    throw Error(ErrorCode::kInsufficientData,
                "bounds need a population of at least 2 and one bin");
  }
  DispersalBounds b;
  b.f_u = (1.0 - u) * h_x + h_f;
  const double before = static_cast<double>(bins_before);
  const double p = static_cast<double>(population);
  b.raw_lower = std::exp2(b.f_u) / before;
  b.raw_upper = p * b.f_u / (std::log2(p) * before);
  b.lower = std::max(b.raw_lower, 1.0);
  b.upper = std::min(b.raw_upper, static_cast<double>(range_x));
  return b;
}

struct DispersalResult {
  double ratio = 0;
  std::uint64_t bins_before = 0;
  std::uint64_t bins_after = 0;
  std::uint64_t range_x = 0;
  std::uint64_t population = 0;
  double f_u = 0;
  double lower_bound = 0;
  double upper_bound = 0;
  double raw_lower_bound = 0;
  double raw_upper_bound = 0;
  EntropyStats stats;
};

namespace detail {

inline void check_feature_vs_schema(const Dataset& ds, const std::string& x,
                                    std::span<const std::string> f_schema) {
  ds.index_of(x);
  for (const auto& f : f_schema) {
    if (f == x) {
      throw Error(ErrorCode::kInvalidArgument,
                  "feature '" + x + "' is already in the schema");
    }
  }
  if (ds.row_count() == 0) {
    throw Error(ErrorCode::kEmptyDataset, "dataset has no rows");
  }
}

inline Schema with_feature(std::span<const std::string> schema,
                           const std::string& x) {
  Schema s(schema.begin(), schema.end());
  s.push_back(x);
  return s;
}

struct Partitions {
  Partition x;
  Partition f;
  Partition joint;
};

inline Partitions build_partitions(const Dataset& ds, const std::string& x,
                                   std::span<const std::string> f_schema) {
  const std::string xs[] = {x};
  return {Partition::build(ds, xs), Partition::build(ds, f_schema),
          Partition::build(ds, with_feature(f_schema, x))};
}

inline EntropyStats entropy_stats(const Partitions& p, const std::string& x) {
  EntropyStats s;
  s.h_x = entropy(histogram_of(p.x));
  if (s.h_x <= 0) {
    throw Error(ErrorCode::kDegenerateFeature,
                "feature '" + x +
                    "' is constant, so U(X|F) is undefined (H(X) = 0)");
  }
  s.h_f = entropy(histogram_of(p.f));
  s.h_joint = entropy(histogram_of(p.joint));
  s.h_x_given_f = std::max(0.0, s.h_joint - s.h_f);
  s.u = std::clamp((s.h_x - s.h_x_given_f) / s.h_x, 0.0, 1.0);
  return s;
}

}  // namespace detail

inline EntropyStats uncertainty_coefficient(
    const Dataset& ds, const std::string& x,
    std::span<const std::string> f_schema) {
  detail::check_feature_vs_schema(ds, x, f_schema);
  return detail::entropy_stats(detail::build_partitions(ds, x, f_schema), x);
}

inline DispersalResult dispersal_ratio(const Dataset& ds,
                                       std::span<const std::string> f_schema,
                                       const std::string& x,
                                       RangeMode range_mode = RangeMode::kObserved) {
  detail::check_feature_vs_schema(ds, x, f_schema);
  const auto parts = detail::build_partitions(ds, x, f_schema);
  DispersalResult r;
  r.stats = detail::entropy_stats(parts, x);
  r.bins_before = parts.f.bin_count();
  r.bins_after = parts.joint.bin_count();
  r.ratio = static_cast<double>(r.bins_after) / static_cast<double>(r.bins_before);
  r.range_x = range_mode == RangeMode::kObserved
                  ? parts.x.bin_count()
                  : ds.spec(ds.index_of(x)).cardinality();
  r.population = ds.row_count();
  const auto b = dispersal_bounds(r.stats.u, r.stats.h_x, r.stats.h_f,
                                  r.population, r.bins_before, r.range_x);
  r.f_u = b.f_u;
  r.lower_bound = b.lower;
  r.upper_bound = b.upper;
  r.raw_lower_bound = b.raw_lower;
  r.raw_upper_bound = b.raw_upper;
  return r;
}

// Side-by-side dispersal of two candidate features against the same schema.
// For features of equal entropy, u1 <= u2 holds exactly when both closed-form
// bounds of the first are at least those of the second.
struct FeatureDispersalComparison {
  DispersalResult first;
  DispersalResult second;
  double relative_entropy_gap = 0;
  bool first_more_independent = false;  // u1 <= u2
  bool lower_bound_order = false;       // raw LB1 >= raw LB2
  bool upper_bound_order = false;       // raw UB1 >= raw UB2
  // Both bound orderings agree with the ordering of u.
  bool consistent = false;
};

inline FeatureDispersalComparison compare_feature_dispersal(
    const Dataset& ds, std::span<const std::string> f_schema,
    const std::string& x1, const std::string& x2,
    double entropy_tolerance = 0.01) {
  FeatureDispersalComparison c;
  c.first = dispersal_ratio(ds, f_schema, x1);
  c.second = dispersal_ratio(ds, f_schema, x2);
  const double h1 = c.first.stats.h_x;
  const double h2 = c.second.stats.h_x;
  c.relative_entropy_gap = std::abs(h1 - h2) / std::max(h1, h2);
  if (c.relative_entropy_gap > entropy_tolerance) {
    throw Error(ErrorCode::kEntropyMismatch,
                "H(" + x1 + ") = " + format_double(h1) + " and H(" + x2 +
                    ") = " + format_double(h2) + " differ by more than " +
                    format_double(entropy_tolerance * 100) + "%");
  }
  c.first_more_independent = c.first.stats.u <= c.second.stats.u;
  c.lower_bound_order = c.first.raw_lower_bound >= c.second.raw_lower_bound;
  c.upper_bound_order = c.first.raw_upper_bound >= c.second.raw_upper_bound;
  c.consistent = c.first_more_independent == c.lower_bound_order &&
                 c.first_more_independent == c.upper_bound_order;
  return c;
}

// Mean size, measured in the whole population's partition, of the bins that
// hold at least one member of the subgroup.
inline double average_bin_size(const Dataset& ds,
                               std::span<const std::string> schema,
                               const SubgroupSelector& subgroup) {
  const auto mask = subgroup.mask(ds);
  if (std::find(mask.begin(), mask.end(), true) == mask.end()) {
    throw Error(ErrorCode::kEmptySelection,
                "subgroup " + subgroup.label() + " has no rows");
  }
  const Partition p = Partition::build(ds, schema);
  std::vector<bool> touched(p.bin_count(), false);
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) touched[p.row_bins()[r]] = true;
  }
  std::uint64_t sum = 0;
  std::uint64_t bins = 0;
  for (std::size_t b = 0; b < touched.size(); ++b) {
    if (!touched[b]) continue;
    sum += p.sizes()[b];
    ++bins;
  }
  return static_cast<double>(sum) / static_cast<double>(bins);
}

struct ProfilePoint {
  std::size_t n_features = 0;
  double dispersal = 0;
  double avg_bin_size = 0;
};

struct SubgroupProfile {
  SubgroupSelector selector;
  std::string label;
  std::size_t rows = 0;
  bool skipped = false;  // empty subgroup
  std::vector<ProfilePoint> points;
};

struct DispersalProfile {
  Schema feature_order;
  std::vector<SubgroupProfile> subgroups;
};

// For each subgroup, adds features in order and records the cumulative
// dispersal (bins over the first k features divided by bins over the first
// feature, counted within the subgroup) and the average bin size.
inline DispersalProfile dispersal_profile(
    const Dataset& ds, std::span<const std::string> feature_order,
    std::span<const SubgroupSelector> subgroups) {
  if (feature_order.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "a dispersal profile needs at least two features");
  }
  for (const auto& sel : subgroups) sel.validate(ds.dictionary());
  for (const auto& f : feature_order) ds.index_of(f);

  DispersalProfile out;
  out.feature_order.assign(feature_order.begin(), feature_order.end());
  out.subgroups = parallel_map(subgroups.size(), [&](std::size_t g) {
    SubgroupProfile sp;
    sp.selector = subgroups[g];
    sp.label = subgroups[g].label();
    const Dataset sub = filter_subgroup(ds, subgroups[g]);
    sp.rows = sub.row_count();
    if (sp.rows == 0) {
      sp.skipped = true;
      log_message(LogLevel::kWarn,
                  "dispersal profile: subgroup " + sp.label + " is empty");
      return sp;
    }
    const std::span<const std::string> first(feature_order.data(), 1);
    const double base = static_cast<double>(count_distinct_bins(sub, first));
    for (std::size_t k = 2; k <= feature_order.size(); ++k) {
      const std::span<const std::string> prefix(feature_order.data(), k);
      ProfilePoint pt;
      pt.n_features = k;
      pt.dispersal = static_cast<double>(count_distinct_bins(sub, prefix)) / base;
      pt.avg_bin_size = average_bin_size(ds, prefix, subgroups[g]);
      sp.points.push_back(pt);
    }
    return sp;
  });
  return out;
}

// subgroup,n_features,dispersal,avg_bin_size. Empty subgroups get one row of
// NA values.
inline csv::Table profile_table(const DispersalProfile& profile) {
  csv::Table t;
  t.header = {"subgroup", "n_features", "dispersal", "avg_bin_size"};
  for (const auto& sp : profile.subgroups) {
    if (sp.skipped) {
      t.rows.push_back({sp.label, "NA", "NA", "NA"});
      continue;
    }
    for (const auto& pt : sp.points) {
      t.rows.push_back({sp.label, std::to_string(pt.n_features),
                        format_double(pt.dispersal),
                        format_double(pt.avg_bin_size)});
    }
  }
  return t;
}

// Per-step dispersal of each added feature against the preceding prefix,
// with its bounds. Steps whose added feature is constant within the subgroup
// carry a note instead of a result.
struct DispersalStep {
  std::string subgroup;
  std::size_t n_features = 0;
  std::string added_feature;
  std::optional<DispersalResult> result;
  std::string note;
};

inline std::vector<DispersalStep> dispersal_steps(
    const Dataset& ds, std::span<const std::string> feature_order,
    std::span<const SubgroupSelector> subgroups) {
  std::vector<DispersalStep> out;
  for (const auto& sel : subgroups) {
    const Dataset sub = filter_subgroup(ds, sel);
    for (std::size_t k = 2; k <= feature_order.size(); ++k) {
      DispersalStep step;
      step.subgroup = sel.label();
      step.n_features = k;
      step.added_feature = feature_order[k - 1];
      if (sub.row_count() == 0) {
        step.note = "empty subgroup";
      } else {
        try {
          step.result = dispersal_ratio(
              sub, std::span<const std::string>(feature_order.data(), k - 1),
              feature_order[k - 1]);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kDegenerateFeature &&
              e.code() != ErrorCode::kInsufficientData) {
            throw;
          }
          step.note = error_code_name(e.code());
        }
      }
      out.push_back(std::move(step));
    }
  }
  return out;
}

inline csv::Table steps_table(const std::vector<DispersalStep>& steps) {
  csv::Table t;
  t.header = {"subgroup",    "n_features",  "added_feature", "ratio",
              "u",           "lower_bound", "upper_bound",   "bins_before",
              "bins_after",  "note"};
  for (const auto& s : steps) {
    if (!s.result) {
      t.rows.push_back({s.subgroup, std::to_string(s.n_features),
                        s.added_feature, "NA", "NA", "NA", "NA", "NA", "NA",
                        s.note});
      continue;
    }
    const auto& r = *s.result;
    t.rows.push_back({s.subgroup, std::to_string(s.n_features),
                      s.added_feature, format_double(r.ratio),
                      format_double(r.stats.u), format_double(r.lower_bound),
                      format_double(r.upper_bound),
                      std::to_string(r.bins_before),
                      std::to_string(r.bins_after), s.note});
  }
  return t;
}

}  // namespace deideval
