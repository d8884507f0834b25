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

// Data dictionaries, validated columnar datasets, and the feature-subset and
// subgroup views every metric is computed over.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/csv.hpp"
#include "json.hpp"

namespace deideval {

enum class FeatureKind { kCategorical, kOrdinal, kNumeric };

inline const char* feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kCategorical: return "categorical";
    case FeatureKind::kOrdinal: return "ordinal";
    case FeatureKind::kNumeric: return "numeric";
  }
  return "?";
}

// Normalized representation of a categorical code. Integer renderings lose
// their sign prefix and leading zeros, so "01", "+1" and 1 are the same code.
inline std::string canonical_code(std::string_view raw) {
  std::string_view s = trim(raw);
  std::string_view digits = s;
  bool negative = false;
  if (!digits.empty() && (digits.front() == '+' || digits.front() == '-')) {
    negative = digits.front() == '-';
    digits.remove_prefix(1);
  }
  const bool all_digits =
      !digits.empty() &&
      std::all_of(digits.begin(), digits.end(),
                  [](char c) { return c >= '0' && c <= '9'; });
  if (!all_digits) return std::string(s);
  while (digits.size() > 1 && digits.front() == '0') digits.remove_prefix(1);
  if (digits == "0") return "0";
  return (negative ? "-" : "") + std::string(digits);
}

//===----------------------------------------------------------------------===//
// FeatureSpec
//===----------------------------------------------------------------------===//

class FeatureSpec {
 public:
  static FeatureSpec categorical(std::string name,
                                 std::vector<std::string> values,
                                 bool is_weight = false) {
    FeatureSpec f;
    f.name_ = std::move(name);
    f.kind_ = FeatureKind::kCategorical;
    f.values_ = std::move(values);
    f.is_weight_ = is_weight;
    f.finish_coded();
    return f;
  }

  // `rank` lists the domain values from lowest to highest. When absent the
  // declaration order of `values` is the order.
  static FeatureSpec ordinal(std::string name, std::vector<std::string> values,
                             std::optional<std::vector<std::string>> rank = {},
                             bool is_weight = false) {
    FeatureSpec f;
    f.name_ = std::move(name);
    f.kind_ = FeatureKind::kOrdinal;
    f.values_ = std::move(values);
    f.is_weight_ = is_weight;
    f.finish_coded();
    f.ranks_.resize(f.values_.size());
    if (rank) {
      if (rank->size() != f.values_.size()) {
        throw Error(ErrorCode::kInvalidDictionary,
                    "ordinal_rank of '" + f.name_ +
                        "' must list every domain value exactly once");
      }
      std::vector<bool> seen(f.values_.size(), false);
      for (std::size_t r = 0; r < rank->size(); ++r) {
        auto code = f.find_code((*rank)[r]);
        if (!code || seen[*code]) {
          throw Error(ErrorCode::kInvalidDictionary,
                      "ordinal_rank of '" + f.name_ +
                          "' is not a total order over the domain");
        }
        seen[*code] = true;
        f.ranks_[*code] = static_cast<std::uint32_t>(r);
      }
      f.has_explicit_rank_ = true;
    } else {
      for (std::size_t i = 0; i < f.ranks_.size(); ++i) {
        f.ranks_[i] = static_cast<std::uint32_t>(i);
      }
    }
    return f;
  }

  // Numeric features keep raw values. For histogram metrics they are binned
  // by `cut_points` when given, else by the default equal-width rule (see
  // bin_of). `discretize = false` marks a feature that must never be binned.
  static FeatureSpec numeric(std::string name, double min, double max,
                             std::vector<double> cut_points = {},
                             bool is_weight = false, bool discretize = true) {
    FeatureSpec f;
    f.name_ = std::move(name);
    f.kind_ = FeatureKind::kNumeric;
    f.min_ = min;
    f.max_ = max;
    f.is_weight_ = is_weight;
    f.discretize_ = discretize;
    if (!std::isfinite(min) || !std::isfinite(max) || min > max) {
      throw Error(ErrorCode::kInvalidDictionary,
                  "numeric feature '" + f.name_ + "' needs finite min <= max");
    }
    if (!std::is_sorted(cut_points.begin(), cut_points.end()) ||
        std::adjacent_find(cut_points.begin(), cut_points.end()) !=
            cut_points.end()) {
      throw Error(ErrorCode::kInvalidDictionary,
                  "cut_points of '" + f.name_ + "' must be strictly increasing");
    }
    f.cut_points_ = std::move(cut_points);
    if (!f.cut_points_.empty()) {
      f.bin_count_ = static_cast<std::uint32_t>(f.cut_points_.size() + 1);
    } else if (f.integral_range() && max - min + 1 <= kDefaultNumericBins) {
      f.bin_count_ = static_cast<std::uint32_t>(max - min + 1);
    } else if (min == max) {
      f.bin_count_ = 1;
    } else {
      f.bin_count_ = kDefaultNumericBins;
    }
    return f;
  }

  static constexpr std::uint32_t kDefaultNumericBins = 10;

  const std::string& name() const { return name_; }
  FeatureKind kind() const { return kind_; }
  bool is_weight() const { return is_weight_; }
  bool is_coded() const { return kind_ != FeatureKind::kNumeric; }
  bool is_ordered() const { return kind_ != FeatureKind::kCategorical; }
  bool binnable() const { return is_coded() || discretize_; }
  bool has_explicit_rank() const { return has_explicit_rank_; }

  // Domain values in declaration order (coded features only).
  const std::vector<std::string>& values() const { return values_; }
  double min() const { return min_; }
  double max() const { return max_; }
  const std::vector<double>& cut_points() const { return cut_points_; }

  // Number of histogram bins (domain size for coded features).
  std::uint32_t cardinality() const {
    return is_coded() ? static_cast<std::uint32_t>(values_.size()) : bin_count_;
  }

  std::optional<std::uint32_t> find_code(std::string_view raw) const {
    auto it = index_.find(canonical_code(raw));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // 0-based position of a code in the ordinal order.
  std::uint32_t rank_of(std::uint32_t code) const {
    return kind_ == FeatureKind::kOrdinal ? ranks_[code] : code;
  }

  bool in_range(double v) const { return v >= min_ && v <= max_; }

  std::uint32_t bin_of(double v) const {
    if (!cut_points_.empty()) {
      return static_cast<std::uint32_t>(
          std::upper_bound(cut_points_.begin(), cut_points_.end(), v) -
          cut_points_.begin());
    }
    if (bin_count_ == 1) return 0;
    double pos;
    if (integral_range() && max_ - min_ + 1 <= kDefaultNumericBins) {
      pos = std::floor(v - min_);
    } else {
      pos = std::floor((v - min_) / (max_ - min_) * bin_count_);
    }
    return static_cast<std::uint32_t>(
        std::clamp(pos, 0.0, static_cast<double>(bin_count_ - 1)));
  }

  // Human-readable label of a bin code.
  std::string bin_label(std::uint32_t code) const {
    if (is_coded()) return values_[code];
    const auto [lo, hi] = bin_bounds(code);
    if (integral_range() && cut_points_.empty() &&
        max_ - min_ + 1 <= kDefaultNumericBins) {
      return format_double(lo);
    }
    return "[" + format_double(lo) + "," + format_double(hi) + ")";
  }

  // A value that lands in the given bin; used when records are synthesized
  // from bin counts.
  double bin_representative(std::uint32_t code) const {
    if (integral_range() && cut_points_.empty() &&
        max_ - min_ + 1 <= kDefaultNumericBins) {
      return min_ + code;
    }
    const auto [lo, hi] = bin_bounds(code);
    const double mid = 0.5 * (lo + hi);
    return bin_of(mid) == code ? mid : lo;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name_;
    j["kind"] = feature_kind_name(kind_);
    if (is_coded()) {
      j["values"] = values_;
      if (has_explicit_rank_) {
        std::vector<std::string> order(values_.size());
        for (std::size_t c = 0; c < values_.size(); ++c) {
          order[ranks_[c]] = values_[c];
        }
        j["ordinal_rank"] = order;
      }
    } else {
      j["range"] = {min_, max_};
      if (!cut_points_.empty()) j["cut_points"] = cut_points_;
      if (!discretize_) j["discretize"] = false;
    }
    if (is_weight_) j["is_weight"] = true;
    return j;
  }

  bool same_schema(const FeatureSpec& o) const {
    return name_ == o.name_ && kind_ == o.kind_ && values_ == o.values_ &&
           ranks_ == o.ranks_ && min_ == o.min_ && max_ == o.max_ &&
           cut_points_ == o.cut_points_ && discretize_ == o.discretize_;
  }

 private:
  FeatureSpec() = default;

  bool integral_range() const {
    return std::floor(min_) == min_ && std::floor(max_) == max_;
  }

  std::pair<double, double> bin_bounds(std::uint32_t code) const {
    if (!cut_points_.empty()) {
      const double lo = code == 0 ? min_ : cut_points_[code - 1];
      const double hi = code == cut_points_.size() ? max_ : cut_points_[code];
      return {lo, hi};
    }
    if (integral_range() && max_ - min_ + 1 <= kDefaultNumericBins) {
      return {min_ + code, min_ + code + 1};
    }
    const double width = (max_ - min_) / bin_count_;
    return {min_ + width * code, min_ + width * (code + 1)};
  }

  void finish_coded() {
    if (values_.empty()) {
      throw Error(ErrorCode::kInvalidDictionary,
                  "feature '" + name_ + "' has an empty domain");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      values_[i] = canonical_code(values_[i]);
      if (values_[i].empty()) {
        throw Error(ErrorCode::kInvalidDictionary,
                    "feature '" + name_ + "' has an empty domain value");
      }
      if (!index_.emplace(values_[i], static_cast<std::uint32_t>(i)).second) {
        throw Error(ErrorCode::kInvalidDictionary,
                    "feature '" + name_ + "' repeats domain value '" +
                        values_[i] + "'");
      }
    }
  }

  std::string name_;
  FeatureKind kind_ = FeatureKind::kCategorical;
  std::vector<std::string> values_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::uint32_t> ranks_;
  bool has_explicit_rank_ = false;
  double min_ = 0;
  double max_ = 0;
  std::vector<double> cut_points_;
  std::uint32_t bin_count_ = 0;
  bool discretize_ = true;
  bool is_weight_ = false;
};

//===----------------------------------------------------------------------===//
// DataDictionary
//===----------------------------------------------------------------------===//

class DataDictionary {
 public:
  using SubsetMap = std::map<std::string, std::vector<std::string>>;

  DataDictionary() = default;
  explicit DataDictionary(std::vector<FeatureSpec> features,
                          SubsetMap subsets = {})
      : features_(std::move(features)), subsets_(std::move(subsets)) {
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (!index_.emplace(features_[i].name(), i).second) {
        throw Error(ErrorCode::kDuplicateFeature,
                    "feature '" + features_[i].name() + "' declared twice");
      }
    }
    for (const auto& [name, members] : subsets_) {
      for (const auto& m : members) {
        if (!index_.count(m)) {
          throw Error(ErrorCode::kUnknownFeature,
                      "subset '" + name + "' references undeclared feature '" +
                          m + "'");
        }
      }
    }
  }

  const std::vector<FeatureSpec>& features() const { return features_; }
  std::size_t size() const { return features_.size(); }
  const FeatureSpec& feature(std::size_t i) const { return features_[i]; }
  const SubsetMap& subsets() const { return subsets_; }

  std::optional<std::size_t> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(std::string_view name) const {
    auto i = find(name);
    if (!i) {
      throw Error(ErrorCode::kUnknownFeature,
                  "unknown feature '" + std::string(name) + "'");
    }
    return *i;
  }

  const FeatureSpec& feature(std::string_view name) const {
    return features_[index_of(name)];
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& f : features_) out.push_back(f.name());
    return out;
  }

  // Every feature except sampling weights, in dictionary order.
  std::vector<std::string> metric_features() const {
    std::vector<std::string> out;
    for (const auto& f : features_) {
      if (!f.is_weight()) out.push_back(f.name());
    }
    return out;
  }

  const std::vector<std::string>& subset(std::string_view name) const {
    auto it = subsets_.find(std::string(name));
    if (it == subsets_.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown feature subset '" + std::string(name) + "'");
    }
    return it->second;
  }

  // Dictionary over `names` (dictionary order kept). Subsets survive only if
  // all their members do.
  DataDictionary restrict_to(std::span<const std::string> names) const {
    std::vector<bool> keep(features_.size(), false);
    for (const auto& n : names) keep[index_of(n)] = true;
    std::vector<FeatureSpec> fs;
    std::set<std::string> kept;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (keep[i]) {
        fs.push_back(features_[i]);
        kept.insert(features_[i].name());
      }
    }
    SubsetMap subs;
    for (const auto& [name, members] : subsets_) {
      if (std::all_of(members.begin(), members.end(),
                      [&](const std::string& m) { return kept.count(m); })) {
        subs.emplace(name, members);
      }
    }
    return DataDictionary(std::move(fs), std::move(subs));
  }

  // Same features with the same domains (subsets are ignored).
  bool same_schema(const DataDictionary& o) const {
    if (features_.size() != o.features_.size()) return false;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (!features_[i].same_schema(o.features_[i])) return false;
    }
    return true;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["features"] = nlohmann::ordered_json::array();
    for (const auto& f : features_) j["features"].push_back(f.to_json());
    j["subsets"] = nlohmann::ordered_json::object();
    for (const auto& [name, members] : subsets_) j["subsets"][name] = members;
    return j;
  }

 private:
  std::vector<FeatureSpec> features_;
  std::unordered_map<std::string, std::size_t> index_;
  SubsetMap subsets_;
};

namespace detail {

inline std::string json_code(const nlohmann::json& v,
                             const std::string& feature) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  throw Error(ErrorCode::kInvalidDictionary,
              "feature '" + feature +
                  "': domain values must be strings or integers");
}

inline std::vector<std::string> json_codes(const nlohmann::json& arr,
                                           const std::string& feature,
                                           const char* key) {
  if (!arr.is_array()) {
    throw Error(ErrorCode::kInvalidDictionary,
                "feature '" + feature + "': '" + key + "' must be an array");
  }
  std::vector<std::string> out;
  for (const auto& v : arr) out.push_back(json_code(v, feature));
  return out;
}

}  // namespace detail

// Parses the dictionary document:
//   {"features": [{"name", "kind", "values" | "range", "ordinal_rank"?,
//                  "cut_points"?, "discretize"?, "is_weight"?}, ...],
//    "subsets": {"name": ["FEATURE", ...]}}
inline DataDictionary load_dictionary(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("dictionary: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("features") ||
      !doc["features"].is_array()) {
    throw Error(ErrorCode::kParse,
                "dictionary must be an object with a 'features' array");
  }
  std::vector<FeatureSpec> features;
  for (const auto& jf : doc["features"]) {
    if (!jf.is_object() || !jf.contains("name") || !jf["name"].is_string() ||
        !jf.contains("kind") || !jf["kind"].is_string()) {
      throw Error(ErrorCode::kParse,
                  "each feature needs string 'name' and 'kind'");
    }
    const std::string name = jf["name"].get<std::string>();
    const std::string kind = jf["kind"].get<std::string>();
    const bool is_weight = jf.value("is_weight", false);
    if (kind == "categorical" || kind == "ordinal") {
      if (!jf.contains("values")) {
        throw Error(ErrorCode::kInvalidDictionary,
                    "feature '" + name + "' needs 'values'");
      }
      auto values = detail::json_codes(jf["values"], name, "values");
      if (kind == "categorical") {
        if (jf.contains("ordinal_rank")) {
          throw Error(ErrorCode::kInvalidDictionary,
                      "categorical feature '" + name +
                          "' cannot declare ordinal_rank");
        }
        features.push_back(
            FeatureSpec::categorical(name, std::move(values), is_weight));
      } else {
        std::optional<std::vector<std::string>> rank;
        if (jf.contains("ordinal_rank")) {
          rank = detail::json_codes(jf["ordinal_rank"], name, "ordinal_rank");
        }
        features.push_back(FeatureSpec::ordinal(name, std::move(values),
                                                std::move(rank), is_weight));
      }
    } else if (kind == "numeric") {
      const auto& range = jf.contains("range") ? jf["range"] : nlohmann::json();
      if (!range.is_array() || range.size() != 2 || !range[0].is_number() ||
          !range[1].is_number()) {
        throw Error(ErrorCode::kInvalidDictionary,
                    "numeric feature '" + name + "' needs 'range': [min, max]");
      }
      std::vector<double> cuts;
      if (jf.contains("cut_points")) {
        cuts = jf["cut_points"].get<std::vector<double>>();
      }
      features.push_back(FeatureSpec::numeric(
          name, range[0].get<double>(), range[1].get<double>(),
          std::move(cuts), is_weight, jf.value("discretize", true)));
    } else {
      throw Error(ErrorCode::kInvalidDictionary,
                  "feature '" + name + "' has unknown kind '" + kind + "'");
    }
  }
  DataDictionary::SubsetMap subsets;
  if (doc.contains("subsets")) {
    if (!doc["subsets"].is_object()) {
      throw Error(ErrorCode::kParse, "'subsets' must be an object");
    }
    for (const auto& [name, members] : doc["subsets"].items()) {
      subsets[name] = members.get<std::vector<std::string>>();
    }
  }
  return DataDictionary(std::move(features), std::move(subsets));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path,
                       std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

inline DataDictionary load_dictionary_file(const std::filesystem::path& path) {
  return load_dictionary(read_file(path));
}

//===----------------------------------------------------------------------===//
// Dataset
//===----------------------------------------------------------------------===//

// Coded features fill `codes`; numeric features fill `values`.
struct Column {
  std::vector<std::uint32_t> codes;
  std::vector<double> values;
};

// Immutable columnar table bound to its dictionary. Columns are shared
// between views, so feature selection does not copy data.
class Dataset {
 public:
  Dataset() : dict_(std::make_shared<const DataDictionary>()) {}

  static Dataset from_columns(DataDictionary dict, std::vector<Column> columns) {
    if (columns.size() != dict.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "column count does not match dictionary");
    }
    Dataset ds;
    ds.rows_ = 0;
    for (std::size_t f = 0; f < columns.size(); ++f) {
      const FeatureSpec& spec = dict.feature(f);
      Column& col = columns[f];
      const std::size_t n = spec.is_coded() ? col.codes.size() : col.values.size();
      if (f == 0) ds.rows_ = n;
      if (n != ds.rows_) {
        throw Error(ErrorCode::kRaggedRow,
                    "column '" + spec.name() + "' has a different length");
      }
      if (spec.is_coded()) {
        for (std::size_t r = 0; r < n; ++r) {
          if (col.codes[r] >= spec.cardinality()) {
            throw Error(ErrorCode::kOutOfDomain,
                        "code out of domain in '" + spec.name() + "'",
                        {r + 1, spec.name(), std::to_string(col.codes[r])});
          }
        }
        col.values.clear();
      } else {
        for (std::size_t r = 0; r < n; ++r) {
          if (!std::isfinite(col.values[r]) || !spec.in_range(col.values[r])) {
            throw Error(ErrorCode::kOutOfDomain,
                        "value out of range in '" + spec.name() + "'",
                        {r + 1, spec.name(), format_double(col.values[r])});
          }
        }
        col.codes.clear();
      }
    }
    ds.dict_ = std::make_shared<const DataDictionary>(std::move(dict));
    for (auto& c : columns) {
      ds.columns_.push_back(std::make_shared<const Column>(std::move(c)));
    }
    return ds;
  }

  const DataDictionary& dictionary() const { return *dict_; }
  std::size_t row_count() const { return rows_; }
  std::size_t feature_count() const { return columns_.size(); }
  const Column& column(std::size_t f) const { return *columns_[f]; }
  const FeatureSpec& spec(std::size_t f) const { return dict_->feature(f); }
  std::size_t index_of(std::string_view name) const {
    return dict_->index_of(name);
  }

  // Histogram bin of a cell: the code for coded features, the
  // discretization bin for numeric ones.
  std::uint32_t bin_code(std::size_t f, std::size_t row) const {
    const FeatureSpec& s = spec(f);
    return s.is_coded() ? columns_[f]->codes[row]
                        : s.bin_of(columns_[f]->values[row]);
  }

  // Value used by numeric metrics: the 0-based ordinal rank for ordinal
  // features, the raw value for numeric ones.
  double numeric_value(std::size_t f, std::size_t row) const {
    const FeatureSpec& s = spec(f);
    switch (s.kind()) {
      case FeatureKind::kOrdinal: return s.rank_of(columns_[f]->codes[row]);
      case FeatureKind::kNumeric: return columns_[f]->values[row];
      case FeatureKind::kCategorical: break;
    }
    throw Error(ErrorCode::kInvalidArgument,
                "categorical feature '" + s.name() + "' has no numeric value");
  }

  std::string cell_text(std::size_t f, std::size_t row) const {
    const FeatureSpec& s = spec(f);
    return s.is_coded() ? s.values()[columns_[f]->codes[row]]
                        : format_double(columns_[f]->values[row]);
  }

  // Internal view constructor.
  static Dataset view(std::shared_ptr<const DataDictionary> dict,
                      std::vector<std::shared_ptr<const Column>> columns,
                      std::size_t rows) {
    Dataset ds;
    ds.dict_ = std::move(dict);
    ds.columns_ = std::move(columns);
    ds.rows_ = rows;
    return ds;
  }

  const std::shared_ptr<const Column>& shared_column(std::size_t f) const {
    return columns_[f];
  }

 private:
  std::shared_ptr<const DataDictionary> dict_;
  std::vector<std::shared_ptr<const Column>> columns_;
  std::size_t rows_ = 0;
};

inline Dataset load_dataset(std::string_view table, const DataDictionary& dict) {
  auto records = csv::parse(table);
  if (records.empty()) {
    throw Error(ErrorCode::kEmptyFile, "data file has no header row");
  }
  const csv::Record& header = records.front();
  std::vector<std::size_t> dict_index(header.size());
  std::vector<bool> present(dict.size(), false);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(trim(header[c]));
    auto idx = dict.find(name);
    if (!idx) {
      throw Error(ErrorCode::kUnknownFeature,
                  "column '" + name + "' is not in the dictionary");
    }
    if (present[*idx]) {
      throw Error(ErrorCode::kDuplicateFeature,
                  "column '" + name + "' appears twice");
    }
    present[*idx] = true;
    dict_index[c] = *idx;
  }
  std::vector<std::string> names;
  std::vector<std::size_t> source_column(dict.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    source_column[dict_index[c]] = c;
  }
  for (std::size_t f = 0; f < dict.size(); ++f) {
    if (present[f]) names.push_back(dict.feature(f).name());
  }
  DataDictionary restricted = dict.restrict_to(names);

  const std::size_t n_rows = records.size() - 1;
  std::vector<Column> columns(restricted.size());
  std::vector<std::size_t> from(restricted.size());
  for (std::size_t f = 0; f < restricted.size(); ++f) {
    from[f] = source_column[dict.index_of(restricted.feature(f).name())];
    if (restricted.feature(f).is_coded()) {
      columns[f].codes.reserve(n_rows);
    } else {
      columns[f].values.reserve(n_rows);
    }
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    const csv::Record& rec = records[r + 1];
    if (rec.size() != header.size()) {
      throw Error(ErrorCode::kRaggedRow,
                  "row " + std::to_string(r + 1) + " has " +
                      std::to_string(rec.size()) + " fields, expected " +
                      std::to_string(header.size()),
                  {r + 1, "", ""});
    }
    for (std::size_t f = 0; f < restricted.size(); ++f) {
      const FeatureSpec& spec = restricted.feature(f);
      const std::string& cell = rec[from[f]];
      if (trim(cell).empty()) {
        throw Error(ErrorCode::kMissingValue,
                    "row " + std::to_string(r + 1) + ", column " + spec.name() +
                        ": missing value",
                    {r + 1, spec.name(), cell});
      }
      if (spec.is_coded()) {
        auto code = spec.find_code(cell);
        if (!code) {
          throw Error(ErrorCode::kOutOfDomain,
                      "row " + std::to_string(r + 1) + ", column " +
                          spec.name() + ": value '" + cell +
                          "' is not in the domain",
                      {r + 1, spec.name(), cell});
        }
        columns[f].codes.push_back(*code);
      } else {
        auto v = parse_double(cell);
        if (!v || !spec.in_range(*v)) {
          throw Error(ErrorCode::kOutOfDomain,
                      "row " + std::to_string(r + 1) + ", column " +
                          spec.name() + ": value '" + cell +
                          "' is outside [" + format_double(spec.min()) + ", " +
                          format_double(spec.max()) + "]",
                      {r + 1, spec.name(), cell});
        }
        columns[f].values.push_back(*v);
      }
    }
  }
  return Dataset::from_columns(std::move(restricted), std::move(columns));
}

inline Dataset load_dataset_file(const std::filesystem::path& path,
                                 const DataDictionary& dict) {
  return load_dataset(read_file(path), dict);
}

inline std::string write_dataset(const Dataset& ds) {
  std::string out;
  csv::append_record(out, ds.dictionary().feature_names());
  csv::Record rec(ds.feature_count());
  for (std::size_t r = 0; r < ds.row_count(); ++r) {
    for (std::size_t f = 0; f < ds.feature_count(); ++f) {
      rec[f] = ds.cell_text(f, r);
    }
    csv::append_record(out, rec);
  }
  return out;
}

inline void write_dataset_file(const std::filesystem::path& path,
                               const Dataset& ds) {
  write_file(path, write_dataset(ds));
}

//===----------------------------------------------------------------------===//
// Views
//===----------------------------------------------------------------------===//

inline Dataset select_features(const Dataset& ds,
                               std::span<const std::string> names) {
  if (names.empty()) {
    throw Error(ErrorCode::kEmptySelection, "feature selection is empty");
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    ds.index_of(n);
    if (!seen.insert(n).second) {
      throw Error(ErrorCode::kDuplicateFeature,
                  "feature '" + n + "' selected twice");
    }
  }
  auto dict = std::make_shared<const DataDictionary>(
      ds.dictionary().restrict_to(names));
  std::vector<std::shared_ptr<const Column>> cols;
  for (const auto& f : dict->features()) {
    cols.push_back(ds.shared_column(ds.index_of(f.name())));
  }
  return Dataset::view(std::move(dict), std::move(cols), ds.row_count());
}

inline Dataset select_features(const Dataset& ds,
                               std::initializer_list<std::string> names) {
  std::vector<std::string> v(names);
  return select_features(ds, std::span<const std::string>(v));
}

// Rows in the given order (indices may repeat).
inline Dataset take_rows(const Dataset& ds,
                         std::span<const std::size_t> rows) {
  std::vector<Column> cols(ds.feature_count());
  for (std::size_t f = 0; f < ds.feature_count(); ++f) {
    const Column& src = ds.column(f);
    if (ds.spec(f).is_coded()) {
      cols[f].codes.reserve(rows.size());
      for (std::size_t r : rows) cols[f].codes.push_back(src.codes.at(r));
    } else {
      cols[f].values.reserve(rows.size());
      for (std::size_t r : rows) cols[f].values.push_back(src.values.at(r));
    }
  }
  return Dataset::from_columns(ds.dictionary(), std::move(cols));
}

// Rows of `a` followed by rows of `b`; both must share a schema.
inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (!a.dictionary().same_schema(b.dictionary())) {
    throw Error(ErrorCode::kSchemaMismatch, "datasets have different schemas");
  }
  std::vector<Column> cols(a.feature_count());
  for (std::size_t f = 0; f < a.feature_count(); ++f) {
    const Column& ca = a.column(f);
    const Column& cb = b.column(f);
    cols[f].codes = ca.codes;
    cols[f].codes.insert(cols[f].codes.end(), cb.codes.begin(), cb.codes.end());
    cols[f].values = ca.values;
    cols[f].values.insert(cols[f].values.end(), cb.values.begin(),
                          cb.values.end());
  }
  return Dataset::from_columns(a.dictionary(), std::move(cols));
}

// Conjunction of feature = value terms. Values use the dictionary's code
// rendering (numeric features compare numerically).
struct SubgroupSelector {
  std::vector<std::pair<std::string, std::string>> terms;

  // Parses "F1=v1,F2=v2". The empty string and "all" are the empty
  // conjunction.
  static SubgroupSelector parse(std::string_view text) {
    SubgroupSelector sel;
    if (trim(text).empty() || trim(text) == "all") return sel;
    for (const auto& part : split(text, ',')) {
      const auto eq = part.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCode::kParse,
                    "subgroup term '" + part + "' is not FEATURE=value");
      }
      sel.terms.emplace_back(std::string(trim(part.substr(0, eq))),
                             std::string(trim(part.substr(eq + 1))));
    }
    return sel;
  }

  std::string label() const {
    if (terms.empty()) return "all";
    std::string out;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i > 0) out += ";";
      out += terms[i].first + "=" + terms[i].second;
    }
    return out;
  }

  // Throws UnknownFeature / OutOfDomain when a term does not fit `dict`.
  void validate(const DataDictionary& dict) const { (void)compile(dict); }

  // Row mask over `ds`.
  std::vector<bool> mask(const Dataset& ds) const {
    const auto compiled = compile(ds.dictionary());
    std::vector<bool> out(ds.row_count(), true);
    for (const auto& t : compiled) {
      const Column& col = ds.column(t.feature);
      for (std::size_t r = 0; r < out.size(); ++r) {
        if (!out[r]) continue;
        out[r] = t.numeric ? col.values[r] == t.value : col.codes[r] == t.code;
      }
    }
    return out;
  }

 private:
  struct Compiled {
    std::size_t feature;
    bool numeric;
    std::uint32_t code;
    double value;
  };

  std::vector<Compiled> compile(const DataDictionary& dict) const {
    std::vector<Compiled> out;
    for (const auto& [name, raw] : terms) {
      const std::size_t f = dict.index_of(name);
      const FeatureSpec& spec = dict.feature(f);
      Compiled c{f, !spec.is_coded(), 0, 0};
      if (spec.is_coded()) {
        auto code = spec.find_code(raw);
        if (!code) {
          throw Error(ErrorCode::kOutOfDomain,
                      "subgroup value '" + raw + "' not in domain of " + name,
                      {0, name, raw});
        }
        c.code = *code;
      } else {
        auto v = parse_double(raw);
        if (!v || !spec.in_range(*v)) {
          throw Error(ErrorCode::kOutOfDomain,
                      "subgroup value '" + raw + "' outside range of " + name,
                      {0, name, raw});
        }
        c.value = *v;
      }
      out.push_back(c);
    }
    return out;
  }
};

inline std::vector<std::size_t> matching_rows(const Dataset& ds,
                                              const SubgroupSelector& sel) {
  const auto m = sel.mask(ds);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.size(); ++r) {
    if (m[r]) rows.push_back(r);
  }
  return rows;
}

inline Dataset filter_subgroup(const Dataset& ds, const SubgroupSelector& sel) {
  if (sel.terms.empty()) {
    sel.validate(ds.dictionary());
    return ds;
  }
  const auto rows = matching_rows(ds, sel);
  return take_rows(ds, rows);
}

}  // namespace deideval
