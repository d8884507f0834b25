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

// Task-style comparisons: a propensity (distinguishability) score from a
// bin-frequency classifier, and per-subgroup linear regressions with
// deviation heatmaps.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/csv.hpp"
#include "deideval/dataset.hpp"
#include "deideval/fidelity.hpp"
#include "deideval/partition.hpp"

namespace deideval {

//===----------------------------------------------------------------------===//
// Propensity
//===----------------------------------------------------------------------===//

inline constexpr std::size_t kPropensityBins = 100;

struct PropensityResult {
  Schema schema;
  // kPropensityBins + 1 equally spaced edges over [0, 1].
  std::vector<double> bin_edges;
  std::vector<std::uint64_t> target_trace;
  std::vector<std::uint64_t> deid_trace;
  double divergence = 0;  // Jensen-Shannon, base 2
  double auc = 0;
  std::size_t occupied_bins = 0;  // bins of the joint partition
};

namespace detail {

inline double js_divergence(std::span<const std::uint64_t> a,
                            std::span<const std::uint64_t> b) {
  const double ta = std::accumulate(a.begin(), a.end(), 0.0);
  const double tb = std::accumulate(b.begin(), b.end(), 0.0);
  double js = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double p = a[i] / ta;
    const double q = b[i] / tb;
    const double m = 0.5 * (p + q);
    if (p > 0) js += 0.5 * p * std::log2(p / m);
    if (q > 0) js += 0.5 * q * std::log2(q / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

}  // namespace detail

// Each record of t and d is scored with p = d_count(b) / (t_count(b) +
// d_count(b)) where b is its bin over `schema` in the pooled data. The
// traces histogram these scores per dataset; the auc is that of p as a
// classifier for "record is deidentified", with ties counted half.
// An empty schema uses every non-weight feature.
inline PropensityResult propensity(const Dataset& t, const Dataset& d,
                                   const Schema& schema = {}) {
  detail::require_same_schema(t, d);
  if (t.row_count() == 0 || d.row_count() == 0) {
    throw Error(ErrorCode::kEmptyDataset, "propensity needs two nonempty datasets");
  }
  PropensityResult out;
  out.schema = schema.empty() ? t.dictionary().metric_features() : schema;
  const Dataset* parts[] = {&t, &d};
  const Partition p = Partition::build(parts, out.schema);
  const std::size_t nb = p.bin_count();
  out.occupied_bins = nb;
  std::vector<std::uint64_t> tc(nb, 0), dc(nb, 0);
  const std::size_t nt = t.row_count();
  for (std::size_t r = 0; r < p.row_count(); ++r) {
    (r < nt ? tc : dc)[p.row_bins()[r]] += 1;
  }

  for (std::size_t i = 0; i <= kPropensityBins; ++i) {
    out.bin_edges.push_back(static_cast<double>(i) / kPropensityBins);
  }
  out.target_trace.assign(kPropensityBins, 0);
  out.deid_trace.assign(kPropensityBins, 0);
  for (std::size_t b = 0; b < nb; ++b) {
    // Exact integer binning of dc / (tc + dc); p = 1 joins the last bin.
    const std::uint64_t slot = std::min<std::uint64_t>(
        kPropensityBins - 1, kPropensityBins * dc[b] / (tc[b] + dc[b]));
    out.target_trace[slot] += tc[b];
    out.deid_trace[slot] += dc[b];
  }
  out.divergence = detail::js_divergence(out.target_trace, out.deid_trace);

  // Mann-Whitney over bins sorted by their exact propensity.
  std::vector<std::size_t> order(nb);
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) {
    return static_cast<unsigned __int128>(dc[a]) * (tc[b] + dc[b]) <
           static_cast<unsigned __int128>(dc[b]) * (tc[a] + dc[a]);
  };
  std::stable_sort(order.begin(), order.end(), less);
  unsigned __int128 twice_wins = 0;
  std::uint64_t targets_below = 0;
  for (std::size_t i = 0, j; i < nb; i = j) {
    std::uint64_t tie_t = 0, tie_d = 0;
    for (j = i; j < nb && !less(order[i], order[j]); ++j) {
      tie_t += tc[order[j]];
      tie_d += dc[order[j]];
    }
    twice_wins += static_cast<unsigned __int128>(tie_d) * (2 * targets_below + tie_t);
    targets_below += tie_t;
  }
  out.auc = static_cast<double>(twice_wins) /
            (2.0 * static_cast<double>(nt) * static_cast<double>(d.row_count()));
  return out;
}

inline csv::Table propensity_table(const PropensityResult& r) {
  csv::Table t;
  t.header = {"bin_lo", "bin_hi", "target", "deid"};
  for (std::size_t i = 0; i < kPropensityBins; ++i) {
    t.rows.push_back({format_double(r.bin_edges[i]),
                      format_double(r.bin_edges[i + 1]),
                      std::to_string(r.target_trace[i]),
                      std::to_string(r.deid_trace[i])});
  }
  return t;
}

//===----------------------------------------------------------------------===//
// Regression
//===----------------------------------------------------------------------===//

struct RegressionLine {
  std::size_t n = 0;
  // Unset when fewer than two distinct x values are present.
  std::optional<double> slope;
  std::optional<double> intercept;

  bool insufficient_variation() const { return !slope.has_value(); }
};

// Ordinary least squares of y on x.
inline RegressionLine fit_line(std::span<const double> x,
                               std::span<const double> y) {
  RegressionLine line;
  line.n = x.size();
  if (x.empty()) return line;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= x.size();
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const bool varies =
      std::any_of(x.begin(), x.end(), [&](double v) { return v != x[0]; });
  if (!varies || sxx <= 0) return line;
  line.slope = sxy / sxx;
  line.intercept = my - *line.slope * mx;
  return line;
}

// cells[y][x]; each nonempty x column sums to 1.
struct Heatmap {
  std::vector<std::vector<double>> cells;
  std::vector<bool> empty_column;
};

struct RegressionGroup {
  std::vector<std::string> group_values;
  std::string label;
  RegressionLine target;
  RegressionLine deid;
  Heatmap target_heatmap;
  Heatmap deid_heatmap;
  std::vector<std::vector<double>> deviation;  // deid - target, [y][x]
};

struct RegressionResult {
  std::string x;
  std::string y;
  Schema group_features;
  std::vector<std::string> x_labels;  // in axis order
  std::vector<std::string> y_labels;
  std::vector<RegressionGroup> groups;
  RegressionGroup overall;
};

namespace detail {

// Axis position of a cell: ordinal rank, or discretization bin for numeric.
inline std::uint32_t axis_position(const Dataset& ds, std::size_t f,
                                   std::size_t row) {
  const FeatureSpec& s = ds.spec(f);
  return s.kind() == FeatureKind::kOrdinal ? s.rank_of(ds.column(f).codes[row])
                                           : ds.bin_code(f, row);
}

inline std::vector<std::string> axis_labels(const FeatureSpec& s) {
  std::vector<std::string> labels(s.cardinality());
  for (std::uint32_t c = 0; c < s.cardinality(); ++c) {
    const std::uint32_t pos = s.kind() == FeatureKind::kOrdinal ? s.rank_of(c) : c;
    labels[pos] = s.bin_label(c);
  }
  return labels;
}

inline Heatmap heatmap_of(const Dataset& ds, std::size_t fx, std::size_t fy,
                          std::span<const std::size_t> rows, std::size_t nx,
                          std::size_t ny) {
  Heatmap h;
  h.cells.assign(ny, std::vector<double>(nx, 0.0));
  std::vector<std::uint64_t> col(nx, 0);
  std::vector<std::vector<std::uint64_t>> counts(ny, std::vector<std::uint64_t>(nx, 0));
  for (std::size_t r : rows) {
    const auto x = axis_position(ds, fx, r);
    const auto y = axis_position(ds, fy, r);
    ++counts[y][x];
    ++col[x];
  }
  h.empty_column.assign(nx, false);
  for (std::size_t x = 0; x < nx; ++x) {
    if (col[x] == 0) {
      h.empty_column[x] = true;
      continue;
    }
    for (std::size_t y = 0; y < ny; ++y) {
      h.cells[y][x] = static_cast<double>(counts[y][x]) / col[x];
    }
  }
  return h;
}

inline RegressionLine line_of(const Dataset& ds, std::size_t fx, std::size_t fy,
                              std::span<const std::size_t> rows) {
  std::vector<double> xs, ys;
  xs.reserve(rows.size());
  ys.reserve(rows.size());
  for (std::size_t r : rows) {
    xs.push_back(ds.numeric_value(fx, r));
    ys.push_back(ds.numeric_value(fy, r));
  }
  return fit_line(xs, ys);
}

}  // namespace detail

// OLS of y on x (ordinal ranks or numeric values) within every observed
// combination of `group_features` in t and d, plus an "all" group. Heatmap
// axes follow ordinal rank order, or bin order for numeric features.
inline RegressionResult regression_metric(const Dataset& t, const Dataset& d,
                                          const std::string& x,
                                          const std::string& y,
                                          const Schema& group_features) {
  detail::require_same_schema(t, d);
  if (x == y) {
    throw Error(ErrorCode::kInvalidArgument, "regression x and y are the same feature");
  }
  const std::size_t fx = t.index_of(x);
  const std::size_t fy = t.index_of(y);
  for (std::size_t f : {fx, fy}) {
    const FeatureSpec& s = t.spec(f);
    if (!s.is_ordered() || !s.binnable()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "regression feature '" + s.name() +
                      "' must be ordinal or discretized numeric");
    }
  }
  for (const auto& g : group_features) {
    if (g == x || g == y) {
      throw Error(ErrorCode::kInvalidArgument,
                  "group feature '" + g + "' is also a regression variable");
    }
  }
  {
    std::vector<double> xs(t.row_count());
    for (std::size_t r = 0; r < xs.size(); ++r) xs[r] = t.numeric_value(fx, r);
    std::sort(xs.begin(), xs.end());
    if (std::unique(xs.begin(), xs.end()) - xs.begin() < 2) {
      throw Error(ErrorCode::kInsufficientData,
                  "target has fewer than two distinct values of " + x);
    }
  }

  RegressionResult out;
  out.x = x;
  out.y = y;
  out.group_features = group_features;
  out.x_labels = detail::axis_labels(t.spec(fx));
  out.y_labels = detail::axis_labels(t.spec(fy));
  const std::size_t nx = out.x_labels.size();
  const std::size_t ny = out.y_labels.size();

  auto analyse = [&](std::span<const std::size_t> trows,
                     std::span<const std::size_t> drows) {
    RegressionGroup g;
    g.target = detail::line_of(t, fx, fy, trows);
    g.deid = detail::line_of(d, fx, fy, drows);
    g.target_heatmap = detail::heatmap_of(t, fx, fy, trows, nx, ny);
    g.deid_heatmap = detail::heatmap_of(d, fx, fy, drows, nx, ny);
    g.deviation.assign(ny, std::vector<double>(nx, 0.0));
    for (std::size_t yy = 0; yy < ny; ++yy) {
      for (std::size_t xx = 0; xx < nx; ++xx) {
        g.deviation[yy][xx] =
            g.deid_heatmap.cells[yy][xx] - g.target_heatmap.cells[yy][xx];
      }
    }
    return g;
  };

  std::vector<std::size_t> all_t(t.row_count()), all_d(d.row_count());
  std::iota(all_t.begin(), all_t.end(), 0);
  std::iota(all_d.begin(), all_d.end(), 0);
  out.overall = analyse(all_t, all_d);
  out.overall.label = "all";

  if (group_features.empty()) return out;
  const Dataset* parts[] = {&t, &d};
  const Partition p = Partition::build(parts, group_features);
  std::vector<std::vector<std::size_t>> trows(p.bin_count()), drows(p.bin_count());
  for (std::size_t r = 0; r < p.row_count(); ++r) {
    if (r < t.row_count()) {
      trows[p.row_bins()[r]].push_back(r);
    } else {
      drows[p.row_bins()[r]].push_back(r - t.row_count());
    }
  }
  out.groups = parallel_map(p.bin_count(), [&](std::size_t b) {
    RegressionGroup g = analyse(trows[b], drows[b]);
    const auto key = p.key(b);
    for (std::size_t k = 0; k < group_features.size(); ++k) {
      g.group_values.push_back(
          t.spec(t.index_of(group_features[k])).bin_label(key[k]));
    }
    g.label = detail::group_label(group_features, g.group_values);
    return g;
  });
  return out;
}

inline csv::Table regression_lines_table(const RegressionResult& r) {
  csv::Table t;
  t.header = {"group",     "n_target",  "target_slope", "target_intercept",
              "n_deid",    "deid_slope", "deid_intercept"};
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("NA");
  };
  auto add = [&](const RegressionGroup& g) {
    t.rows.push_back({g.label, std::to_string(g.target.n), opt(g.target.slope),
                      opt(g.target.intercept), std::to_string(g.deid.n),
                      opt(g.deid.slope), opt(g.deid.intercept)});
  };
  add(r.overall);
  for (const auto& g : r.groups) add(g);
  return t;
}

// Long format: group, x, y, target, deid, deviation.
inline csv::Table regression_heatmap_table(const RegressionResult& r) {
  csv::Table t;
  t.header = {"group", r.x, r.y, "target", "deid", "deviation"};
  auto add = [&](const RegressionGroup& g) {
    for (std::size_t y = 0; y < r.y_labels.size(); ++y) {
      for (std::size_t x = 0; x < r.x_labels.size(); ++x) {
        t.rows.push_back({g.label, r.x_labels[x], r.y_labels[y],
                          format_double(g.target_heatmap.cells[y][x]),
                          format_double(g.deid_heatmap.cells[y][x]),
                          format_double(g.deviation[y][x])});
      }
    }
  };
  add(r.overall);
  for (const auto& g : r.groups) add(g);
  return t;
}

}  // namespace deideval
