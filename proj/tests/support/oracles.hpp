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

// Brute-force reference implementations. They work on rendered cell text
// through ordered maps and share no code with the library's partitioning.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deideval/dataset.hpp"

namespace deideval::oracle {

using Tuple = std::vector<std::string>;

inline Tuple tuple_of(const Dataset& ds, const std::vector<std::string>& features,
                      std::size_t row) {
  Tuple t;
  for (const auto& f : features) {
    const std::size_t i = ds.index_of(f);
    t.push_back(ds.spec(i).is_coded() ? ds.cell_text(i, row)
                                      : std::to_string(ds.bin_code(i, row)));
  }
  return t;
}

inline std::map<Tuple, std::size_t> tally(const Dataset& ds,
                                          const std::vector<std::string>& features) {
  std::map<Tuple, std::size_t> m;
  for (std::size_t r = 0; r < ds.row_count(); ++r) ++m[tuple_of(ds, features, r)];
  return m;
}

inline double tvd(const Dataset& a, const Dataset& b,
                  const std::vector<std::string>& features) {
  const auto ta = tally(a, features);
  const auto tb = tally(b, features);
  std::set<Tuple> keys;
  for (const auto& [k, c] : ta) keys.insert(k);
  for (const auto& [k, c] : tb) keys.insert(k);
  double s = 0;
  for (const auto& k : keys) {
    const double pa = ta.count(k) ? static_cast<double>(ta.at(k)) / a.row_count() : 0.0;
    const double pb = tb.count(k) ? static_cast<double>(tb.at(k)) / b.row_count() : 0.0;
    s += std::abs(pa - pb);
  }
  return s;
}

inline double entropy(const Dataset& ds, const std::vector<std::string>& features) {
  double h = 0;
  for (const auto& [k, c] : tally(ds, features)) {
    const double p = static_cast<double>(c) / ds.row_count();
    h -= p * std::log2(p);
  }
  return h;
}

struct KMarginal {
  int score = 0;
  double mean_tvd = 0;
  std::size_t subsets = 0;
};

// Every k-subset of `features` via bitmask enumeration.
inline KMarginal kmarginal_exhaustive(const Dataset& t, const Dataset& d,
                                      const std::vector<std::string>& features,
                                      std::size_t k) {
  KMarginal out;
  double sum = 0;
  const std::size_t n = features.size();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    std::vector<std::string> subset;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) subset.push_back(features[i]);
    }
    sum += tvd(t, d, subset);
    ++out.subsets;
  }
  out.mean_tvd = sum / out.subsets;
  out.score = static_cast<int>(std::lround(1000.0 * (1.0 - out.mean_tvd / 2.0)));
  return out;
}

struct Uem {
  std::size_t unique = 0;
  std::size_t matched = 0;
};

inline Uem uem(const Dataset& t, const Dataset& d,
               const std::vector<std::string>& features) {
  const auto tt = tally(t, features);
  const auto td = tally(d, features);
  Uem out;
  for (const auto& [k, c] : tt) {
    if (c != 1) continue;
    ++out.unique;
    if (td.count(k)) ++out.matched;
  }
  return out;
}

inline std::optional<double> kendall_tau_b(const std::vector<double>& x,
                                           const std::vector<double>& y) {
  double concordant = 0, discordant = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tx;
      } else if (dy == 0) {
        ++ty;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double denom = std::sqrt((concordant + discordant + tx) *
                                 (concordant + discordant + ty));
  if (denom == 0) return std::nullopt;
  return (concordant - discordant) / denom;
}

inline std::optional<double> pearson(const std::vector<double>& x,
                                     const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double vx = n * sxx - sx * sx;
  const double vy = n * syy - sy * sy;
  if (vx <= 0 || vy <= 0) return std::nullopt;
  return (n * sxy - sx * sy) / std::sqrt(vx * vy);
}

struct Eigen3 {
  std::array<double, 3> values;                 // descending
  std::array<std::array<double, 3>, 3> vectors; // unit, largest entry positive
};

// Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric solution
// of the characteristic cubic) and eigenvectors from cross products of rows
// of A - lambda I. Assumes distinct eigenvalues.
inline Eigen3 symmetric_eigen3(const std::array<std::array<double, 3>, 3>& a) {
  const double p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
  const double q = (a[0][0] + a[1][1] + a[2][2]) / 3;
  const double p2 = (a[0][0] - q) * (a[0][0] - q) + (a[1][1] - q) * (a[1][1] - q) +
                    (a[2][2] - q) * (a[2][2] - q) + 2 * p1;
  const double p = std::sqrt(p2 / 6);
  std::array<std::array<double, 3>, 3> b{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) b[i][j] = (a[i][j] - (i == j ? q : 0)) / p;
  }
  const double det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                       b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                       b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
  const double r = std::clamp(det_b / 2, -1.0, 1.0);
  const double phi = std::acos(r) / 3;
  Eigen3 out;
  out.values[0] = q + 2 * p * std::cos(phi);
  out.values[2] = q + 2 * p * std::cos(phi + 2 * std::numbers::pi / 3);
  out.values[1] = 3 * q - out.values[0] - out.values[2];
  for (int k = 0; k < 3; ++k) {
    std::array<std::array<double, 3>, 3> m = a;
    for (int i = 0; i < 3; ++i) m[i][i] -= out.values[k];
    std::array<double, 3> best{};
    double best_norm = -1;
    for (int i = 0; i < 3; ++i) {
      for (int j = i + 1; j < 3; ++j) {
        const std::array<double, 3> c = {m[i][1] * m[j][2] - m[i][2] * m[j][1],
                                         m[i][2] * m[j][0] - m[i][0] * m[j][2],
                                         m[i][0] * m[j][1] - m[i][1] * m[j][0]};
        const double nrm = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
        if (nrm > best_norm) {
          best_norm = nrm;
          best = c;
        }
      }
    }
    int big = 0;
    for (int i = 0; i < 3; ++i) {
      best[i] /= best_norm;
      if (std::abs(best[i]) > std::abs(best[big])) big = i;
    }
    if (best[big] < 0) {
      for (double& v : best) v = -v;
    }
    out.vectors[k] = best;
  }
  return out;
}

}  // namespace deideval::oracle
