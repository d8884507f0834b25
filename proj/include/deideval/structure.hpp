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

// Structural diagnostics: record predicates, consistency rules, and a PCA
// comparison of target and deidentified data in the target's frame.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/csv.hpp"
#include "deideval/dataset.hpp"
#include "deideval/fidelity.hpp"
#include "json.hpp"

namespace deideval {

//===----------------------------------------------------------------------===//
// Predicates and rules
//===----------------------------------------------------------------------===//

enum class Comparator { kEq, kNe, kLt, kLe, kGt, kGe };

inline Comparator parse_comparator(std::string_view op) {
  if (op == "=" || op == "==") return Comparator::kEq;
  if (op == "!=") return Comparator::kNe;
  if (op == "<") return Comparator::kLt;
  if (op == "<=") return Comparator::kLe;
  if (op == ">") return Comparator::kGt;
  if (op == ">=") return Comparator::kGe;
  throw Error(ErrorCode::kParse, "unknown comparator '" + std::string(op) + "'");
}

inline const char* comparator_symbol(Comparator c) {
  switch (c) {
    case Comparator::kEq: return "=";
    case Comparator::kNe: return "!=";
    case Comparator::kLt: return "<";
    case Comparator::kLe: return "<=";
    case Comparator::kGt: return ">";
    case Comparator::kGe: return ">=";
  }
  return "?";
}

// feature <op> value. Ordinal features order by rank, numeric by value.
struct Condition {
  std::string feature;
  Comparator op = Comparator::kEq;
  std::string value;

  std::string to_string() const {
    return feature + comparator_symbol(op) + value;
  }
};

// A conjunction of conditions bound to one dictionary.
class RowPredicate {
 public:
  RowPredicate() = default;

  RowPredicate(const DataDictionary& dict, std::span<const Condition> conds) {
    for (const auto& c : conds) terms_.push_back(compile(dict, c));
  }

  bool empty() const { return terms_.empty(); }

  bool operator()(const Dataset& ds, std::size_t row) const {
    for (const auto& t : terms_) {
      if (!test(ds, t, row)) return false;
    }
    return true;
  }

  std::vector<bool> mask(const Dataset& ds) const {
    std::vector<bool> out(ds.row_count());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = (*this)(ds, r);
    return out;
  }

 private:
  struct Term {
    std::size_t feature;
    Comparator op;
    FeatureKind kind;
    double operand;  // code, rank or value
  };

  static Term compile(const DataDictionary& dict, const Condition& c) {
    const std::size_t f = dict.index_of(c.feature);
    const FeatureSpec& s = dict.feature(f);
    Term t{f, c.op, s.kind(), 0};
    const bool ordering = c.op != Comparator::kEq && c.op != Comparator::kNe;
    if (ordering && s.kind() == FeatureKind::kCategorical) {
      throw Error(ErrorCode::kInvalidArgument,
                  "comparator '" + std::string(comparator_symbol(c.op)) +
                      "' is not valid for categorical feature '" + c.feature + "'");
    }
    if (s.is_coded()) {
      const auto code = s.find_code(c.value);
      if (!code) {
        throw Error(ErrorCode::kOutOfDomain,
                    "value '" + c.value + "' not in domain of " + c.feature,
                    {0, c.feature, c.value});
      }
      t.operand = s.kind() == FeatureKind::kOrdinal && ordering
                      ? s.rank_of(*code)
                      : *code;
    } else {
      const auto v = parse_double(c.value);
      if (!v) {
        throw Error(ErrorCode::kParse,
                    "value '" + c.value + "' for " + c.feature + " is not a number",
                    {0, c.feature, c.value});
      }
      t.operand = *v;
    }
    return t;
  }

  static bool test(const Dataset& ds, const Term& t, std::size_t row) {
    double v;
    const bool ordering = t.op != Comparator::kEq && t.op != Comparator::kNe;
    if (t.kind == FeatureKind::kNumeric) {
      v = ds.column(t.feature).values[row];
    } else if (t.kind == FeatureKind::kOrdinal && ordering) {
      v = ds.spec(t.feature).rank_of(ds.column(t.feature).codes[row]);
    } else {
      v = ds.column(t.feature).codes[row];
    }
    switch (t.op) {
      case Comparator::kEq: return v == t.operand;
      case Comparator::kNe: return v != t.operand;
      case Comparator::kLt: return v < t.operand;
      case Comparator::kLe: return v <= t.operand;
      case Comparator::kGt: return v > t.operand;
      case Comparator::kGe: return v >= t.operand;
    }
    return false;
  }

  std::vector<Term> terms_;
};

inline std::vector<Condition> conditions_of(const SubgroupSelector& sel) {
  std::vector<Condition> out;
  for (const auto& [f, v] : sel.terms) out.push_back({f, Comparator::kEq, v});
  return out;
}

// Records matching every `when` condition must match every `require`
// condition.
struct ConsistencyRule {
  std::string name;
  std::vector<Condition> when;
  std::vector<Condition> require;

  std::vector<std::string> features() const {
    std::vector<std::string> out;
    for (const auto* list : {&when, &require}) {
      for (const auto& c : *list) {
        if (std::find(out.begin(), out.end(), c.feature) == out.end()) {
          out.push_back(c.feature);
        }
      }
    }
    return out;
  }
};

namespace detail {

inline std::vector<Condition> parse_conditions(const nlohmann::json& arr,
                                               const std::string& rule) {
  if (!arr.is_array()) {
    throw Error(ErrorCode::kParse, "rule '" + rule + "': conditions must be an array");
  }
  std::vector<Condition> out;
  for (const auto& jc : arr) {
    if (!jc.is_object() || !jc.contains("feature") || !jc.contains("op") ||
        !jc.contains("value")) {
      throw Error(ErrorCode::kParse,
                  "rule '" + rule + "': condition needs feature, op and value");
    }
    Condition c;
    c.feature = jc["feature"].get<std::string>();
    c.op = parse_comparator(jc["op"].get<std::string>());
    const auto& v = jc["value"];
    if (v.is_string()) {
      c.value = v.get<std::string>();
    } else if (v.is_number()) {
      c.value = v.is_number_float() ? format_double(v.get<double>()) : v.dump();
    } else {
      throw Error(ErrorCode::kParse,
                  "rule '" + rule + "': value must be a string or number");
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline nlohmann::json conditions_json(const std::vector<Condition>& conds) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : conds) {
    arr.push_back({{"feature", c.feature}, {"op", comparator_symbol(c.op)},
                   {"value", c.value}});
  }
  return arr;
}

}  // namespace detail

// Rules document: [{"name", "when": [{feature, op, value}], "require": [...]}]
inline std::vector<ConsistencyRule> load_rules(std::string_view document) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("rules file: ") + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::kParse, "rules file must be an array");
  std::vector<ConsistencyRule> rules;
  for (const auto& jr : j) {
    if (!jr.is_object() || !jr.contains("name")) {
      throw Error(ErrorCode::kParse, "every rule needs a name");
    }
    ConsistencyRule r;
    r.name = jr["name"].get<std::string>();
    r.when = detail::parse_conditions(jr.value("when", nlohmann::json::array()), r.name);
    r.require = detail::parse_conditions(
        jr.value("require", nlohmann::json::array()), r.name);
    if (r.require.empty()) {
      throw Error(ErrorCode::kParse, "rule '" + r.name + "' has no require clause");
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

inline nlohmann::json rules_json(const std::vector<ConsistencyRule>& rules) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rules) {
    arr.push_back({{"name", r.name},
                   {"when", detail::conditions_json(r.when)},
                   {"require", detail::conditions_json(r.require)}});
  }
  return arr;
}

// Illustrative age, work and housing rules over excerpt-style features.
inline std::vector<ConsistencyRule> default_rules() {
  return {
      {"age_marital", {{"AGEP", Comparator::kLt, "15"}}, {{"MSP", Comparator::kEq, "N"}}},
      {"age_employment", {{"AGEP", Comparator::kLt, "16"}}, {{"ESR", Comparator::kEq, "N"}}},
      {"group_quarters_tenure",
       {{"HOUSING_TYPE", Comparator::kGe, "2"}},
       {{"OWN_RENT", Comparator::kEq, "0"}}},
  };
}

struct RuleResult {
  std::string name;
  std::uint64_t violations = 0;
  std::vector<std::size_t> example_rows;  // 0-based, at most kMaxExamples
  bool skipped = false;
  std::string reason;

  static constexpr std::size_t kMaxExamples = 10;
};

// Counts rows matching every `when` condition that fail some `require`
// condition.
inline std::vector<RuleResult> consistency_check(
    const Dataset& ds, const std::vector<ConsistencyRule>& rules) {
  std::vector<std::pair<RowPredicate, std::vector<RowPredicate>>> compiled;
  for (const auto& r : rules) {
    std::vector<RowPredicate> req;
    for (const auto& c : r.require) {
      req.emplace_back(ds.dictionary(), std::span<const Condition>(&c, 1));
    }
    compiled.emplace_back(RowPredicate(ds.dictionary(), r.when), std::move(req));
  }
  return parallel_map(rules.size(), [&](std::size_t i) {
    RuleResult out;
    out.name = rules[i].name;
    const auto& [when, req] = compiled[i];
    for (std::size_t row = 0; row < ds.row_count(); ++row) {
      if (!when(ds, row)) continue;
      const bool ok = std::all_of(req.begin(), req.end(),
                                  [&](const RowPredicate& p) { return p(ds, row); });
      if (ok) continue;
      ++out.violations;
      if (out.example_rows.size() < RuleResult::kMaxExamples) {
        out.example_rows.push_back(row);
      }
    }
    return out;
  });
}

//===----------------------------------------------------------------------===//
// PCA
//===----------------------------------------------------------------------===//

struct EigenDecomposition {
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[i] pairs values[i]
};

// Cyclic Jacobi for a symmetric matrix (row-major, n x n). Eigenvectors are
// unit length with their largest-magnitude entry positive (first such entry
// on ties); equal eigenvalues order by the lexicographically larger vector.
inline EigenDecomposition symmetric_eigen(std::vector<double> a, std::size_t n,
                                          double tol = 1e-10,
                                          int max_sweeps = 100) {
  if (a.size() != n * n) {
    throw Error(ErrorCode::kInvalidArgument, "matrix is not n x n");
  }
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto off_norm = [&] {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    }
    return std::sqrt(2 * s);
  };
  double scale = 0;
  for (double x : a) scale += x * x;
  scale = std::max(std::sqrt(scale), 1e-300);

  for (int sweep = 0; sweep < max_sweeps && off_norm() > tol * scale; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  EigenDecomposition out;
  std::vector<std::pair<double, std::vector<double>>> pairs;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> vec(n);
    std::size_t big = 0;
    for (std::size_t k = 0; k < n; ++k) {
      vec[k] = v[k * n + j];
      if (std::abs(vec[k]) > std::abs(vec[big]) + 1e-12) big = k;
    }
    if (vec[big] < 0) {
      for (double& x : vec) x = -x;
    }
    pairs.emplace_back(a[j * n + j], std::move(vec));
  }
  const double tie = tol * scale;
  std::sort(pairs.begin(), pairs.end(), [tie](const auto& x, const auto& y) {
    if (std::abs(x.first - y.first) > tie) return x.first > y.first;
    return std::lexicographical_compare(y.second.begin(), y.second.end(),
                                        x.second.begin(), x.second.end());
  });
  for (auto& [val, vec] : pairs) {
    out.values.push_back(val);
    out.vectors.push_back(std::move(vec));
  }
  return out;
}

struct PcaComparison {
  std::vector<std::string> axes;  // encoded axis labels
  std::vector<bool> dropped;      // zero-variance axes left out of the fit
  std::vector<std::vector<double>> loadings;  // per component, over axes
  std::vector<double> explained_variance;     // eigenvalues, descending
  double total_variance = 0;                  // trace of the fitted matrix
  std::vector<std::vector<double>> target_projection;  // [row][component]
  std::vector<std::vector<double>> deid_projection;
  std::vector<bool> target_highlight;
  std::vector<bool> deid_highlight;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kMaxComponents = 5;

namespace detail {

struct Encoder {
  std::vector<std::string> labels;
  struct Source {
    std::size_t feature;
    std::optional<std::uint32_t> indicator;  // one-hot code
  };
  std::vector<Source> sources;

  explicit Encoder(const DataDictionary& dict) {
    for (std::size_t f = 0; f < dict.size(); ++f) {
      const FeatureSpec& s = dict.feature(f);
      if (s.is_weight()) continue;
      if (s.kind() == FeatureKind::kCategorical) {
        for (std::uint32_t c = 0; c < s.cardinality(); ++c) {
          labels.push_back(s.name() + "=" + s.values()[c]);
          sources.push_back({f, c});
        }
      } else {
        labels.push_back(s.name());
        sources.push_back({f, std::nullopt});
      }
    }
  }

  double value(const Dataset& ds, std::size_t axis, std::size_t row) const {
    const Source& s = sources[axis];
    if (s.indicator) return ds.column(s.feature).codes[row] == *s.indicator ? 1.0 : 0.0;
    return ds.numeric_value(s.feature, row);
  }
};

}  // namespace detail

// Principal components of the target's standardized encoding (categorical
// features one-hot, ordinal ranks, numeric values), with both datasets
// projected onto them. Standardization uses target statistics throughout.
inline PcaComparison pca_compare(const Dataset& t, const Dataset& d,
                                 const std::vector<Condition>& highlight = {}) {
  detail::require_same_schema(t, d);
  if (t.row_count() < 2) {
    throw Error(ErrorCode::kInsufficientData, "PCA needs at least two target rows");
  }
  const detail::Encoder enc(t.dictionary());
  const std::size_t m = enc.labels.size();
  if (m < 2) {
    throw Error(ErrorCode::kInsufficientData,
                "PCA needs at least two encoded dimensions");
  }
  PcaComparison out;
  out.axes = enc.labels;
  const std::size_t n = t.row_count();

  std::vector<double> mean(m, 0.0), sd(m, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t r = 0; r < n; ++r) mean[a] += enc.value(t, a, r);
    mean[a] /= n;
    for (std::size_t r = 0; r < n; ++r) {
      const double dv = enc.value(t, a, r) - mean[a];
      sd[a] += dv * dv;
    }
    sd[a] = std::sqrt(sd[a] / (n - 1));
  }
  std::vector<std::size_t> kept;
  out.dropped.assign(m, false);
  for (std::size_t a = 0; a < m; ++a) {
    if (sd[a] > 0) {
      kept.push_back(a);
    } else {
      out.dropped[a] = true;
      out.warnings.push_back("axis " + enc.labels[a] +
                             " has zero variance and was dropped");
    }
  }
  for (const auto& w : out.warnings) log_message(LogLevel::kWarn, w);
  const std::size_t k = kept.size();

  auto standardized = [&](const Dataset& ds) {
    std::vector<double> z(ds.row_count() * k);
    for (std::size_t r = 0; r < ds.row_count(); ++r) {
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t a = kept[i];
        z[r * k + i] = (enc.value(ds, a, r) - mean[a]) / sd[a];
      }
    }
    return z;
  };
  const std::vector<double> zt = standardized(t);
  const std::vector<double> zd = standardized(d);

  if (k > 0) {
    // Ordered reduction by row blocks keeps the sum independent of workers.
    constexpr std::size_t kBlock = 4096;
    const std::size_t blocks = (n + kBlock - 1) / kBlock;
    const auto partial = parallel_map(blocks, [&](std::size_t b) {
      std::vector<double> c(k * k, 0.0);
      for (std::size_t r = b * kBlock; r < std::min(n, (b + 1) * kBlock); ++r) {
        const double* row = &zt[r * k];
        for (std::size_t i = 0; i < k; ++i) {
          if (row[i] == 0) continue;
          for (std::size_t j = i; j < k; ++j) c[i * k + j] += row[i] * row[j];
        }
      }
      return c;
    });
    std::vector<double> cov(k * k, 0.0);
    for (const auto& c : partial) {
      for (std::size_t i = 0; i < k * k; ++i) cov[i] += c[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i; j < k; ++j) {
        cov[i * k + j] /= (n - 1);
        cov[j * k + i] = cov[i * k + j];
      }
      out.total_variance += cov[i * k + i];
    }
    const EigenDecomposition eig = symmetric_eigen(cov, k);
    const double floor = 1e-10 * std::max(1.0, out.total_variance);
    for (std::size_t c = 0; c < eig.values.size() && c < kMaxComponents; ++c) {
      if (eig.values[c] <= floor) break;
      out.explained_variance.push_back(eig.values[c]);
      std::vector<double> full(m, 0.0);
      for (std::size_t i = 0; i < k; ++i) full[kept[i]] = eig.vectors[c][i];
      out.loadings.push_back(std::move(full));
    }
  }

  auto project = [&](const std::vector<double>& z, std::size_t rows) {
    std::vector<std::vector<double>> p(rows,
                                       std::vector<double>(out.loadings.size(), 0.0));
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < out.loadings.size(); ++c) {
        double s = 0;
        for (std::size_t i = 0; i < k; ++i) s += z[r * k + i] * out.loadings[c][kept[i]];
        p[r][c] = s;
      }
    }
    return p;
  };
  out.target_projection = project(zt, n);
  out.deid_projection = project(zd, d.row_count());
  const RowPredicate pred(t.dictionary(), highlight);
  out.target_highlight = pred.empty() ? std::vector<bool>(n, false) : pred.mask(t);
  out.deid_highlight =
      pred.empty() ? std::vector<bool>(d.row_count(), false) : pred.mask(d);
  return out;
}

// One row per record: dataset, row, pc1.., highlight.
inline csv::Table pca_projection_table(const PcaComparison& p) {
  csv::Table t;
  t.header = {"dataset", "row"};
  for (std::size_t c = 0; c < p.loadings.size(); ++c) {
    t.header.push_back("pc" + std::to_string(c + 1));
  }
  t.header.push_back("highlight");
  auto add = [&](const char* name, const std::vector<std::vector<double>>& proj,
                 const std::vector<bool>& hl) {
    for (std::size_t r = 0; r < proj.size(); ++r) {
      csv::Record rec = {name, std::to_string(r)};
      for (double v : proj[r]) rec.push_back(format_double(v));
      rec.push_back(hl[r] ? "1" : "0");
      t.rows.push_back(std::move(rec));
    }
  };
  add("target", p.target_projection, p.target_highlight);
  add("deid", p.deid_projection, p.deid_highlight);
  return t;
}

}  // namespace deideval
