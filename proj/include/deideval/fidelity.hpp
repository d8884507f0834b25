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

// Distributional similarity between a target dataset and a deidentified
// dataset: univariate densities, pairwise correlation differences, the
// k-marginal score (overall, per group, per geography) and the equivalent
// subsample calibration.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/dataset.hpp"
#include "deideval/partition.hpp"

namespace deideval {

namespace detail {

inline void require_same_schema(const Dataset& t, const Dataset& d) {
  if (!t.dictionary().same_schema(d.dictionary())) {
    throw Error(ErrorCode::kSchemaMismatch,
                "target and deidentified data use different dictionaries or "
                "feature selections");
  }
}

}  // namespace detail

//===----------------------------------------------------------------------===//
// Univariate
//===----------------------------------------------------------------------===//

struct UnivariateEntry {
  std::string value;  // bin label
  double target = 0;
  double deid = 0;
};

struct UnivariateFeature {
  std::string feature;
  std::vector<UnivariateEntry> entries;  // union of observed bins, key order
  double tvd = 0;
};

namespace detail {

// Weighted or unweighted mass per bin code of one feature.
inline std::map<std::uint32_t, double> feature_mass(
    const Dataset& ds, std::size_t f, std::optional<std::size_t> weight) {
  std::map<std::uint32_t, double> mass;
  double total = 0;
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    const double w = weight ? ds.column(*weight).values[r] : 1.0;
    mass[ds.bin_code(f, r)] += w;
    total += w;
  }
  if (total <= 0) {
    throw Error(ErrorCode::kEmptyDataset, "no mass to form a density");
  }
  for (auto& [code, m] : mass) m /= total;
  return mass;
}

}  // namespace detail

// Per-feature densities over the union of observed values and their TVD.
// `weight_feature`, when set, weights each record by that numeric feature.
inline std::vector<UnivariateFeature> univariate_report(
    const Dataset& t, const Dataset& d,
    const std::optional<std::string>& weight_feature = std::nullopt) {
  detail::require_same_schema(t, d);
  std::optional<std::size_t> w;
  if (weight_feature) {
    w = t.index_of(*weight_feature);
    if (t.spec(*w).kind() != FeatureKind::kNumeric) {
      throw Error(ErrorCode::kInvalidArgument,
                  "weight feature must be numeric");
    }
  }
  std::vector<UnivariateFeature> out;
  for (const std::string& name : t.dictionary().metric_features()) {
    const std::size_t f = t.index_of(name);
    if (!t.spec(f).binnable()) continue;
    const auto mt = detail::feature_mass(t, f, w);
    const auto md = detail::feature_mass(d, f, w);
    std::set<std::uint32_t> codes;
    for (const auto& [c, m] : mt) codes.insert(c);
    for (const auto& [c, m] : md) codes.insert(c);
    UnivariateFeature uf;
    uf.feature = name;
    for (std::uint32_t c : codes) {
      UnivariateEntry e;
      e.value = t.spec(f).bin_label(c);
      if (auto it = mt.find(c); it != mt.end()) e.target = it->second;
      if (auto it = md.find(c); it != md.end()) e.deid = it->second;
      uf.tvd += std::abs(e.target - e.deid);
      uf.entries.push_back(std::move(e));
    }
    out.push_back(std::move(uf));
  }
  return out;
}

//===----------------------------------------------------------------------===//
// Correlations
//===----------------------------------------------------------------------===//

enum class CorrelationMethod { kPearson, kKendallTauB };

inline const char* correlation_method_name(CorrelationMethod m) {
  return m == CorrelationMethod::kPearson ? "pearson" : "kendall_tau_b";
}

// nullopt when either variable is constant.
inline std::optional<double> pearson(std::span<const double> x,
                                     std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Kendall's tau-b in O(n log n) (Knight's algorithm). nullopt when either
// variable is constant.
inline std::optional<double> kendall_tau_b(std::span<const double> x,
                                           std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  auto pairs = [](std::uint64_t run) { return run * (run - 1) / 2; };

  std::uint64_t tied_x = 0, tied_xy = 0;
  for (std::size_t i = 0, j; i < n; i = j) {
    j = i + 1;
    while (j < n && x[idx[j]] == x[idx[i]]) ++j;
    tied_x += pairs(j - i);
    for (std::size_t a = i, b; a < j; a = b) {
      b = a + 1;
      while (b < j && y[idx[b]] == y[idx[a]]) ++b;
      tied_xy += pairs(b - a);
    }
  }

  // Merge sort on y counting discordant swaps.
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n);
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (ys[j] < ys[i]) {
          swaps += mid - i;
          buf[k++] = ys[j++];
        } else {
          buf[k++] = ys[i++];
        }
      }
      while (i < mid) buf[k++] = ys[i++];
      while (j < hi) buf[k++] = ys[j++];
    }
    std::swap(ys, buf);
  }

  std::uint64_t tied_y = 0;
  for (std::size_t i = 0, j; i < n; i = j) {
    j = i + 1;
    while (j < n && ys[j] == ys[i]) ++j;
    tied_y += pairs(j - i);
  }

  const std::uint64_t n0 = pairs(n);
  if (tied_x == n0 || tied_y == n0) return std::nullopt;
  // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
  const double numer = static_cast<double>(n0) - static_cast<double>(tied_x) -
                       static_cast<double>(tied_y) +
                       static_cast<double>(tied_xy) -
                       2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(n0 - tied_x)) *
                       std::sqrt(static_cast<double>(n0 - tied_y));
  return std::clamp(numer / denom, -1.0, 1.0);
}

struct CorrelationDifference {
  CorrelationMethod method = CorrelationMethod::kPearson;
  Schema features;
  // Row-major features x features; nullopt marks an undefined entry.
  std::vector<std::optional<double>> target;
  std::vector<std::optional<double>> deid;
  std::vector<std::optional<double>> delta;

  const std::optional<double>& at(std::size_t i, std::size_t j) const {
    return delta[i * features.size() + j];
  }
};

// |corr_t - corr_d| for every pair of ordinal/numeric (non-weight) features.
// Ordinal features use their ranks.
inline CorrelationDifference correlation_difference(const Dataset& t,
                                                    const Dataset& d,
                                                    CorrelationMethod method) {
  detail::require_same_schema(t, d);
  CorrelationDifference out;
  out.method = method;
  for (const auto& name : t.dictionary().metric_features()) {
    if (t.spec(t.index_of(name)).is_ordered()) out.features.push_back(name);
  }
  const std::size_t m = out.features.size();
  if (m < 2) {
    throw Error(ErrorCode::kInsufficientData,
                "correlations need at least two ordinal or numeric features");
  }
  auto values = [](const Dataset& ds, std::size_t f) {
    std::vector<double> v(ds.row_count());
    for (std::size_t r = 0; r < v.size(); ++r) v[r] = ds.numeric_value(f, r);
    return v;
  };
  std::vector<std::vector<double>> tv(m), dv(m);
  for (std::size_t i = 0; i < m; ++i) {
    tv[i] = values(t, t.index_of(out.features[i]));
    dv[i] = values(d, d.index_of(out.features[i]));
  }
  auto corr = [method](const std::vector<double>& a,
                       const std::vector<double>& b) {
    return method == CorrelationMethod::kPearson ? pearson(a, b)
                                                 : kendall_tau_b(a, b);
  };
  out.target.assign(m * m, std::nullopt);
  out.deid.assign(m * m, std::nullopt);
  out.delta.assign(m * m, std::nullopt);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
  }
  const auto results = parallel_map(pairs.size(), [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    return std::make_pair(corr(tv[i], tv[j]), corr(dv[i], dv[j]));
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    const auto& [ct, cd] = results[p];
    out.target[i * m + j] = out.target[j * m + i] = ct;
    out.deid[i * m + j] = out.deid[j * m + i] = cd;
    if (ct && cd) {
      out.delta[i * m + j] = out.delta[j * m + i] = std::abs(*ct - *cd);
    }
  }
  for (std::size_t i = 0; i < m; ++i) out.delta[i * m + i] = 0.0;
  return out;
}

//===----------------------------------------------------------------------===//
// k-marginal
//===----------------------------------------------------------------------===//

struct KMarginalConfig {
  std::size_t k = 3;
  std::size_t n_subsets = 50;
  // Required unless `exhaustive`.
  std::optional<std::uint64_t> seed;
  Schema always_include;
  bool exhaustive = false;
  // Candidate features; empty means every non-weight feature.
  Schema features;
};

struct SubsetTvd {
  Schema features;
  double tvd = 0;
};

struct KMarginalScore {
  int score = 0;
  double mean_tvd = 0;
  std::vector<SubsetTvd> per_subset;
  std::vector<std::string> warnings;
};

// round(1000 (1 - mean_tvd / 2)).
inline int score_from_mean_tvd(double mean_tvd) {
  return static_cast<int>(std::lround(1000.0 * (1.0 - mean_tvd / 2.0)));
}

namespace detail {

inline std::uint64_t binomial(std::uint64_t n, std::uint64_t r,
                              std::uint64_t cap) {
  if (r > n) return 0;
  r = std::min(r, n - r);
  unsigned __int128 acc = 1;
  for (std::uint64_t i = 1; i <= r; ++i) {
    acc = acc * (n - r + i) / i;
    if (acc > cap) return cap + 1;
  }
  return static_cast<std::uint64_t>(acc);
}

// All r-combinations of {0..n-1} in lexicographic order.
inline std::vector<std::vector<std::size_t>> combinations(std::size_t n,
                                                          std::size_t r) {
  std::vector<std::vector<std::size_t>> out;
  if (r > n) return out;
  std::vector<std::size_t> c(r);
  std::iota(c.begin(), c.end(), 0);
  while (true) {
    out.push_back(c);
    std::size_t i = r;
    while (i > 0 && c[i - 1] == n - r + i - 1) --i;
    if (i == 0) break;
    ++c[i - 1];
    for (std::size_t j = i; j < r; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

inline Schema resolve_features(const DataDictionary& dict, const Schema& requested) {
  if (requested.empty()) return dict.metric_features();
  std::vector<bool> keep(dict.size(), false);
  for (const auto& name : requested) {
    const std::size_t i = dict.index_of(name);
    if (keep[i]) {
      throw Error(ErrorCode::kDuplicateFeature,
                  "feature '" + name + "' listed twice");
    }
    keep[i] = true;
  }
  Schema out;
  for (std::size_t i = 0; i < dict.size(); ++i) {
    if (keep[i]) out.push_back(dict.feature(i).name());
  }
  return out;
}

inline constexpr std::uint64_t kMaxEnumeratedSubsets = 2'000'000;

}  // namespace detail

struct SubsetChoice {
  std::vector<Schema> subsets;  // each in dictionary order; list sorted
  std::vector<std::string> warnings;
};

// Marginal subsets of size cfg.k drawn from `features` (dictionary order),
// each containing cfg.always_include. Exhaustive mode lists all of them;
// otherwise cfg.n_subsets distinct subsets are drawn uniformly without
// replacement. The chosen subsets are returned in lexicographic order of
// feature positions, so sampling every subset reproduces exhaustive mode.
inline SubsetChoice choose_marginal_subsets(const Schema& features,
                                            const KMarginalConfig& cfg) {
  if (cfg.k == 0) {
    throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  }
  if (cfg.k > features.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "k = " + std::to_string(cfg.k) + " exceeds the " +
                    std::to_string(features.size()) + " available features");
  }
  if (cfg.always_include.size() >= cfg.k) {
    throw Error(ErrorCode::kInvalidArgument,
                "always_include must be smaller than k");
  }
  std::vector<bool> fixed(features.size(), false);
  for (const auto& name : cfg.always_include) {
    auto it = std::find(features.begin(), features.end(), name);
    if (it == features.end()) {
      throw Error(ErrorCode::kUnknownFeature,
                  "always_include feature '" + name +
                      "' is not among the marginal features");
    }
    const auto pos = static_cast<std::size_t>(it - features.begin());
    if (fixed[pos]) {
      throw Error(ErrorCode::kDuplicateFeature,
                  "feature '" + name + "' listed twice in always_include");
    }
    fixed[pos] = true;
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!fixed[i]) pool.push_back(i);
  }
  const std::size_t r = cfg.k - cfg.always_include.size();
  const std::uint64_t available =
      detail::binomial(pool.size(), r, detail::kMaxEnumeratedSubsets * 1000);

  SubsetChoice out;
  std::vector<std::vector<std::size_t>> picks;  // indices into pool
  bool all = cfg.exhaustive;
  if (!cfg.exhaustive) {
    if (!cfg.seed) {
      throw Error(ErrorCode::kInvalidArgument,
                  "sampled k-marginal mode needs an explicit seed");
    }
    if (cfg.n_subsets == 0) {
      throw Error(ErrorCode::kInvalidArgument, "n_subsets must be positive");
    }
    if (cfg.n_subsets >= available) {
      if (cfg.n_subsets > available) {
        out.warnings.push_back("n_subsets " + std::to_string(cfg.n_subsets) +
                               " clamped to the " + std::to_string(available) +
                               " available subsets");
      }
      all = true;
    }
  }
  if (all) {
    if (available > detail::kMaxEnumeratedSubsets) {
      throw Error(ErrorCode::kInvalidArgument,
                  "too many marginal subsets to enumerate");
    }
    picks = detail::combinations(pool.size(), r);
  } else {
    Rng rng(*cfg.seed);
    if (available <= detail::kMaxEnumeratedSubsets) {
      auto combos = detail::combinations(pool.size(), r);
      partial_shuffle(std::span(combos), cfg.n_subsets, rng);
      combos.resize(cfg.n_subsets);
      picks = std::move(combos);
    } else {
      // Robert Floyd's sampler per draw, rejecting repeats.
      std::set<std::vector<std::size_t>> seen;
      while (picks.size() < cfg.n_subsets) {
        std::set<std::size_t> s;
        for (std::size_t j = pool.size() - r; j < pool.size(); ++j) {
          const std::size_t t = rng.below(j + 1);
          if (!s.insert(t).second) s.insert(j);
        }
        std::vector<std::size_t> c(s.begin(), s.end());
        if (seen.insert(c).second) picks.push_back(std::move(c));
      }
    }
    std::sort(picks.begin(), picks.end());
  }

  std::vector<std::size_t> fixed_pos;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (fixed[i]) fixed_pos.push_back(i);
  }
  std::vector<std::vector<std::size_t>> positions;
  for (const auto& p : picks) {
    std::vector<std::size_t> pos = fixed_pos;
    for (std::size_t i : p) pos.push_back(pool[i]);
    std::sort(pos.begin(), pos.end());
    positions.push_back(std::move(pos));
  }
  std::sort(positions.begin(), positions.end());
  for (const auto& pos : positions) {
    Schema s;
    for (std::size_t i : pos) s.push_back(features[i]);
    out.subsets.push_back(std::move(s));
  }
  return out;
}

// Target marginal densities, computed once and reused against many
// comparison datasets.
class MarginalCache {
 public:
  MarginalCache(const Dataset& target, std::vector<Schema> subsets)
      : subsets_(std::move(subsets)) {
    if (target.row_count() == 0) {
      throw Error(ErrorCode::kEmptyDataset, "target dataset is empty");
    }
    densities_ = parallel_map(subsets_.size(), [&](std::size_t i) {
      return density(bin_records(target, subsets_[i]));
    });
  }

  const std::vector<Schema>& subsets() const { return subsets_; }

  // Mean TVD against `other`; an empty `other` has TVD 2 on every marginal.
  KMarginalScore score(const Dataset& other) const {
    KMarginalScore out;
    const auto tvds = parallel_map(subsets_.size(), [&](std::size_t i) {
      if (other.row_count() == 0) return 2.0;
      return total_variation(densities_[i],
                             density(bin_records(other, subsets_[i])));
    });
    double sum = 0;
    for (std::size_t i = 0; i < tvds.size(); ++i) {
      sum += tvds[i];
      out.per_subset.push_back({subsets_[i], tvds[i]});
    }
    out.mean_tvd = subsets_.empty() ? 0.0 : sum / subsets_.size();
    out.score = score_from_mean_tvd(out.mean_tvd);
    return out;
  }

 private:
  std::vector<Schema> subsets_;
  std::vector<Density> densities_;
};

inline KMarginalScore kmarginal_score(const Dataset& t, const Dataset& d,
                                      const KMarginalConfig& cfg) {
  detail::require_same_schema(t, d);
  const Schema features = detail::resolve_features(t.dictionary(), cfg.features);
  auto choice = choose_marginal_subsets(features, cfg);
  for (const auto& w : choice.warnings) log_message(LogLevel::kWarn, w);
  MarginalCache cache(t, std::move(choice.subsets));
  KMarginalScore out = cache.score(d);
  out.warnings = std::move(choice.warnings);
  return out;
}

struct GroupScore {
  std::vector<std::string> group_values;
  std::string label;
  std::size_t n_target = 0;
  std::size_t n_deid = 0;
  bool missing_in_deid = false;
  KMarginalScore score;
};

struct GroupedKMarginal {
  Schema group_features;
  std::vector<Schema> subsets;
  std::vector<GroupScore> groups;
  std::vector<std::string> warnings;
};

namespace detail {

// Row lists of each `group_features` cell observed in `t`, for t and d.
struct GroupRows {
  std::vector<std::vector<std::string>> values;
  std::vector<std::vector<std::size_t>> target_rows;
  std::vector<std::vector<std::size_t>> deid_rows;
};

inline GroupRows group_rows(const Dataset& t, const Dataset& d,
                            const Schema& group_features) {
  const Dataset* parts[] = {&t, &d};
  const Partition p = Partition::build(parts, group_features);
  GroupRows g;
  std::vector<std::size_t> slot(p.bin_count(), SIZE_MAX);
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    const std::uint32_t b = p.row_bins()[r];
    if (slot[b] == SIZE_MAX) slot[b] = 0;
  }
  // Number groups in key order.
  std::size_t next = 0;
  for (std::size_t b = 0; b < p.bin_count(); ++b) {
    if (slot[b] == SIZE_MAX) continue;
    slot[b] = next++;
    std::vector<std::string> vals;
    const auto key = p.key(b);
    for (std::size_t k = 0; k < group_features.size(); ++k) {
      vals.push_back(t.spec(t.index_of(group_features[k])).bin_label(key[k]));
    }
    g.values.push_back(std::move(vals));
  }
  g.target_rows.resize(next);
  g.deid_rows.resize(next);
  for (std::size_t r = 0; r < p.row_count(); ++r) {
    const std::size_t s = slot[p.row_bins()[r]];
    if (s == SIZE_MAX) continue;
    if (r < t.row_count()) {
      g.target_rows[s].push_back(r);
    } else {
      g.deid_rows[s].push_back(r - t.row_count());
    }
  }
  return g;
}

inline std::string group_label(const Schema& features,
                               const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (i > 0) out += ";";
    out += features[i] + "=" + values[i];
  }
  return out;
}

}  // namespace detail

// k-marginal scores within each cell of `group_features`. Every marginal
// contains the group features plus k - |group_features| other features
// chosen per `cfg`, and TVDs compare the within-group (conditional)
// densities of the two datasets. Groups absent from the target are skipped;
// groups absent from the deidentified data score 0 and are flagged.
inline GroupedKMarginal kmarginal_by_group(const Dataset& t, const Dataset& d,
                                           const Schema& group_features,
                                           const KMarginalConfig& cfg) {
  detail::require_same_schema(t, d);
  if (group_features.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no group features given");
  }
  if (cfg.k <= group_features.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "k must exceed the number of group features");
  }
  for (const auto& g : group_features) {
    t.index_of(g);
    if (std::find(cfg.always_include.begin(), cfg.always_include.end(), g) !=
        cfg.always_include.end()) {
      throw Error(ErrorCode::kDuplicateFeature,
                  "group feature '" + g + "' is also in always_include");
    }
  }
  Schema others;
  for (const auto& f : detail::resolve_features(t.dictionary(), cfg.features)) {
    if (std::find(group_features.begin(), group_features.end(), f) ==
        group_features.end()) {
      others.push_back(f);
    }
  }
  KMarginalConfig sub = cfg;
  sub.k = cfg.k - group_features.size();
  auto choice = choose_marginal_subsets(others, sub);

  GroupedKMarginal out;
  out.group_features = group_features;
  out.warnings = choice.warnings;
  for (auto& s : choice.subsets) {
    Schema full = group_features;
    full.insert(full.end(), s.begin(), s.end());
    out.subsets.push_back(std::move(full));
  }
  const auto rows = detail::group_rows(t, d, group_features);
  out.groups = parallel_map(rows.values.size(), [&](std::size_t g) {
    GroupScore gs;
    gs.group_values = rows.values[g];
    gs.label = detail::group_label(group_features, gs.group_values);
    gs.n_target = rows.target_rows[g].size();
    gs.n_deid = rows.deid_rows[g].size();
    gs.missing_in_deid = gs.n_deid == 0;
    const Dataset tg = take_rows(t, rows.target_rows[g]);
    const Dataset dg = take_rows(d, rows.deid_rows[g]);
    gs.score = MarginalCache(tg, out.subsets).score(dg);
    return gs;
  });
  return out;
}

struct GeographyScore {
  std::string value;
  std::size_t n_target = 0;
  std::size_t n_deid = 0;
  bool missing_in_deid = false;
  KMarginalScore score;
};

struct GeographyKMarginal {
  std::string geo_feature;
  std::vector<Schema> subsets;
  std::vector<GeographyScore> scores;
  std::size_t worst = 0;  // index of the minimum score (first on ties)
  std::vector<std::string> warnings;
};

// For each geography value observed in the target, the k-marginal score of
// the rows in that geography over the remaining features. The marginal
// subsets are chosen once and shared by all geographies.
inline GeographyKMarginal kmarginal_by_geography(const Dataset& t,
                                                 const Dataset& d,
                                                 const std::string& geo_feature,
                                                 const KMarginalConfig& cfg) {
  detail::require_same_schema(t, d);
  const std::size_t gi = t.index_of(geo_feature);
  if (!t.spec(gi).is_coded()) {
    throw Error(ErrorCode::kInvalidArgument,
                "geography feature '" + geo_feature + "' must be categorical");
  }
  Schema rest;
  for (const auto& f : detail::resolve_features(t.dictionary(), cfg.features)) {
    if (f != geo_feature) rest.push_back(f);
  }
  auto choice = choose_marginal_subsets(rest, cfg);
  GeographyKMarginal out;
  out.geo_feature = geo_feature;
  out.subsets = choice.subsets;
  out.warnings = choice.warnings;
  const Schema geo_schema = {geo_feature};
  const auto rows = detail::group_rows(t, d, geo_schema);
  out.scores = parallel_map(rows.values.size(), [&](std::size_t g) {
    GeographyScore gs;
    gs.value = rows.values[g][0];
    gs.n_target = rows.target_rows[g].size();
    gs.n_deid = rows.deid_rows[g].size();
    gs.missing_in_deid = gs.n_deid == 0;
    const Dataset tg = take_rows(t, rows.target_rows[g]);
    const Dataset dg = take_rows(d, rows.deid_rows[g]);
    gs.score = MarginalCache(tg, out.subsets).score(dg);
    return gs;
  });
  for (std::size_t i = 1; i < out.scores.size(); ++i) {
    if (out.scores[i].score.score < out.scores[out.worst].score.score) {
      out.worst = i;
    }
  }
  for (const auto& s : out.scores) {
    if (s.missing_in_deid) {
      out.warnings.push_back(geo_feature + "=" + s.value +
                             " is missing from the deidentified data");
    }
  }
  return out;
}

//===----------------------------------------------------------------------===//
// Equivalent subsample
//===----------------------------------------------------------------------===//

struct CalibrationPoint {
  double fraction = 0;
  double mean_score = 0;  // after isotonic correction
  double raw_mean_score = 0;
  double stddev = 0;
};

enum class EsPosition {
  kInterpolated,
  kAtOrAboveTop,  // deid score >= calibration mean at the top fraction
  kBelowBottom,   // deid score < calibration mean at the bottom fraction
};

inline const char* es_position_name(EsPosition p) {
  switch (p) {
    case EsPosition::kInterpolated: return "interpolated";
    case EsPosition::kAtOrAboveTop: return "at_or_above_top";
    case EsPosition::kBelowBottom: return "below_bottom";
  }
  return "?";
}

struct EquivalentSubsample {
  std::vector<CalibrationPoint> calibration;
  int deid_score = 0;
  double es_percent = 0;
  EsPosition position = EsPosition::kInterpolated;

  std::string describe() const {
    const auto pct = [](double f) { return format_double(std::round(f * 1e6) / 1e4) + "%"; };
    switch (position) {
      case EsPosition::kAtOrAboveTop:
        return ">= " + pct(calibration.back().fraction);
      case EsPosition::kBelowBottom:
        return "< " + pct(calibration.front().fraction);
      case EsPosition::kInterpolated:
        break;
    }
    return format_double(es_percent) + "%";
  }
};

inline const std::vector<double>& default_es_fractions() {
  static const std::vector<double> grid = {0.01, 0.05, 0.1, 0.2, 0.3, 0.4,
                                           0.5,  0.6,  0.7, 0.8, 0.9};
  return grid;
}

// Pool-adjacent-violators with equal weights: the closest non-decreasing
// sequence in least squares.
inline std::vector<double> isotonic_non_decreasing(std::span<const double> y) {
  std::vector<double> level;
  std::vector<std::size_t> width;
  for (double v : y) {
    level.push_back(v);
    width.push_back(1);
    while (level.size() > 1 && level[level.size() - 2] > level.back()) {
      const std::size_t w = width[width.size() - 2] + width.back();
      const double merged =
          (level[level.size() - 2] * width[width.size() - 2] +
           level.back() * width.back()) / w;
      level.pop_back();
      width.pop_back();
      level.back() = merged;
      width.back() = w;
    }
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < level.size(); ++i) {
    out.insert(out.end(), width[i], level[i]);
  }
  return out;
}

// Calibrates `score` against uniform subsamples of the target. For each
// fraction, `trials` subsamples of round(fraction * rows) target rows are
// scored against the full target over the same marginal subsets; the deid
// score is then placed on the (mean score -> fraction) curve by linear
// interpolation.
inline EquivalentSubsample equivalent_subsample(
    const Dataset& t, const KMarginalScore& score,
    std::span<const double> fractions, std::size_t trials,
    std::uint64_t seed) {
  if (fractions.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no calibration fractions");
  }
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0 && fractions[i] < 1) ||
        (i > 0 && fractions[i] <= fractions[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument,
                  "fractions must be strictly increasing within (0, 1)");
    }
  }
  if (trials == 0) {
    throw Error(ErrorCode::kInvalidArgument, "trials must be at least 1");
  }
  if (score.per_subset.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "score has no marginal subsets");
  }
  std::vector<Schema> subsets;
  for (const auto& s : score.per_subset) subsets.push_back(s.features);
  const MarginalCache cache(t, std::move(subsets));

  const std::size_t n = t.row_count();
  const auto trial_scores = parallel_map(
      fractions.size() * trials, [&](std::size_t job) {
        const std::size_t fi = job / trials;
        const std::size_t ti = job % trials;
        Rng rng(derive_seed(derive_seed(seed, fi), ti));
        const auto m = static_cast<std::size_t>(std::max<long long>(
            1, std::llround(fractions[fi] * static_cast<double>(n))));
        std::vector<std::size_t> rows(n);
        std::iota(rows.begin(), rows.end(), 0);
        partial_shuffle(std::span(rows), m, rng);
        rows.resize(m);
        return static_cast<double>(cache.score(take_rows(t, rows)).score);
      });

  EquivalentSubsample out;
  out.deid_score = score.score;
  std::vector<double> raw;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    double sum = 0;
    for (std::size_t ti = 0; ti < trials; ++ti) sum += trial_scores[fi * trials + ti];
    const double mean = sum / trials;
    double ss = 0;
    for (std::size_t ti = 0; ti < trials; ++ti) {
      const double dv = trial_scores[fi * trials + ti] - mean;
      ss += dv * dv;
    }
    CalibrationPoint cp;
    cp.fraction = fractions[fi];
    cp.raw_mean_score = mean;
    cp.stddev = trials > 1 ? std::sqrt(ss / (trials - 1)) : 0.0;
    out.calibration.push_back(cp);
    raw.push_back(mean);
  }
  const auto iso = isotonic_non_decreasing(raw);
  for (std::size_t i = 0; i < iso.size(); ++i) out.calibration[i].mean_score = iso[i];
  if (iso.front() == iso.back()) {
    throw Error(ErrorCode::kFlatCalibration,
                "every calibration fraction has the same mean score");
  }

  const double s = score.score;
  const auto& cal = out.calibration;
  if (s >= cal.back().mean_score) {
    out.position = EsPosition::kAtOrAboveTop;
    out.es_percent = cal.back().fraction * 100;
  } else if (s < cal.front().mean_score) {
    out.position = EsPosition::kBelowBottom;
    out.es_percent = cal.front().fraction * 100;
  } else {
    out.position = EsPosition::kInterpolated;
    std::size_t i = 0;
    while (cal[i].mean_score < s) ++i;
    if (cal[i].mean_score == s || i == 0) {
      out.es_percent = cal[i].fraction * 100;
    } else {
      const auto& lo = cal[i - 1];
      const auto& hi = cal[i];
      const double w = (s - lo.mean_score) / (hi.mean_score - lo.mean_score);
      out.es_percent = (lo.fraction + w * (hi.fraction - lo.fraction)) * 100;
    }
  }
  return out;
}

}  // namespace deideval
