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

// Full evaluation runs: configuration, section orchestration, the report
// document and its sidecar tables.

#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include "deideval/common.hpp"
#include "deideval/csv.hpp"
#include "deideval/dataset.hpp"
#include "deideval/dispersal.hpp"
#include "deideval/fidelity.hpp"
#include "deideval/privacy.hpp"
#include "deideval/structure.hpp"
#include "deideval/task_metrics.hpp"
#include "json.hpp"

namespace deideval {

using nlohmann::json;

inline constexpr int kReportSchemaVersion = 1;

//===----------------------------------------------------------------------===//
// Configuration
//===----------------------------------------------------------------------===//

struct RunConfig {
  std::optional<std::string> feature_subset;  // dictionary subset name
  Schema features;                            // explicit list
  KMarginalConfig kmarginal;
  std::vector<double> es_fractions = default_es_fractions();
  std::size_t es_trials = 10;
  Schema group_features;
  std::optional<std::size_t> group_k;  // default |group_features| + 2
  std::optional<std::string> geo_feature;
  std::optional<std::string> regression_x;
  std::optional<std::string> regression_y;
  Schema propensity_schema;
  Schema uem_schema;
  std::optional<std::vector<ConsistencyRule>> rules;  // unset: defaults
  std::vector<Condition> highlight;
  Schema dispersal_order;
  std::vector<SubgroupSelector> dispersal_groups;
  std::uint64_t seed = 0;
  std::optional<unsigned> workers;
  json echo = json::object();  // the configuration document as given
};

namespace detail {

inline Schema string_list(const json& j, const char* key) {
  if (!j.is_array()) {
    throw Error(ErrorCode::kParse, std::string("config: '") + key + "' must be a list");
  }
  Schema out;
  for (const auto& v : j) {
    if (!v.is_string()) {
      throw Error(ErrorCode::kParse,
                  std::string("config: '") + key + "' must list strings");
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_number()) return v.dump();
  throw Error(ErrorCode::kParse, "config: expected a string or number");
}

template <typename T>
T get_as(const json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kParse, std::string("config: bad value for '") + key + "'");
  }
}

}  // namespace detail

// Parses the run configuration document. Relative rule file paths resolve
// against `base_dir`.
inline RunConfig parse_run_config(std::string_view document,
                                  const std::filesystem::path& base_dir = {}) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kParse, "config must be an object");
  static const std::set<std::string> known = {
      "features", "kmarginal", "equivalent_subsample", "group_features",
      "group_k", "geo_feature", "regression", "propensity_schema",
      "uem_schema", "rules", "highlight", "dispersal", "seed", "workers"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw Error(ErrorCode::kParse, "config: unknown key '" + key + "'");
    }
  }
  RunConfig c;
  c.echo = j;
  if (!j.contains("seed")) {
    throw Error(ErrorCode::kParse, "config: 'seed' is required");
  }
  c.seed = detail::get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("workers")) {
    c.workers = detail::get_as<unsigned>(j["workers"], "workers");
  }
  if (j.contains("features")) {
    const auto& f = j["features"];
    if (f.is_string()) {
      c.feature_subset = f.get<std::string>();
    } else {
      c.features = detail::string_list(f, "features");
    }
  }
  if (j.contains("kmarginal")) {
    const auto& k = j["kmarginal"];
    c.kmarginal.k = detail::get_as<std::size_t>(k.value("k", json(3)), "k");
    c.kmarginal.n_subsets =
        detail::get_as<std::size_t>(k.value("n_subsets", json(50)), "n_subsets");
    c.kmarginal.exhaustive =
        detail::get_as<bool>(k.value("exhaustive", json(false)), "exhaustive");
    if (k.contains("seed")) {
      c.kmarginal.seed = detail::get_as<std::uint64_t>(k["seed"], "kmarginal.seed");
    }
    if (k.contains("always_include")) {
      c.kmarginal.always_include =
          detail::string_list(k["always_include"], "always_include");
    }
  }
  if (j.contains("equivalent_subsample")) {
    const auto& e = j["equivalent_subsample"];
    if (e.contains("fractions")) {
      c.es_fractions = detail::get_as<std::vector<double>>(e["fractions"], "fractions");
    }
    c.es_trials = detail::get_as<std::size_t>(e.value("trials", json(10)), "trials");
  }
  if (j.contains("group_features")) {
    c.group_features = detail::string_list(j["group_features"], "group_features");
  }
  if (j.contains("group_k")) c.group_k = detail::get_as<std::size_t>(j["group_k"], "group_k");
  if (j.contains("geo_feature")) {
    c.geo_feature = detail::get_as<std::string>(j["geo_feature"], "geo_feature");
  }
  if (j.contains("regression")) {
    const auto& r = j["regression"];
    if (!r.contains("x") || !r.contains("y")) {
      throw Error(ErrorCode::kParse, "config: regression needs x and y");
    }
    c.regression_x = detail::get_as<std::string>(r["x"], "regression.x");
    c.regression_y = detail::get_as<std::string>(r["y"], "regression.y");
  }
  if (j.contains("propensity_schema")) {
    c.propensity_schema = detail::string_list(j["propensity_schema"], "propensity_schema");
  }
  if (j.contains("uem_schema")) {
    c.uem_schema = detail::string_list(j["uem_schema"], "uem_schema");
  }
  if (j.contains("rules")) {
    const auto& r = j["rules"];
    if (r.is_string()) {
      std::filesystem::path p = r.get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      c.rules = load_rules(read_file(p));
    } else {
      c.rules = load_rules(r.dump());
    }
  }
  if (j.contains("highlight")) {
    const auto& h = j["highlight"];
    if (h.is_object()) {
      for (const auto& [f, v] : h.items()) {
        c.highlight.push_back({f, Comparator::kEq, detail::scalar_text(v)});
      }
    } else if (h.is_array()) {
      for (const auto& jc : h) {
        c.highlight.push_back({detail::get_as<std::string>(jc.at("feature"), "feature"),
                               parse_comparator(jc.at("op").get<std::string>()),
                               detail::scalar_text(jc.at("value"))});
      }
    } else {
      throw Error(ErrorCode::kParse, "config: highlight must be an object or list");
    }
  }
  if (j.contains("dispersal")) {
    const auto& d = j["dispersal"];
    c.dispersal_order = detail::string_list(d.value("order", json::array()), "order");
    for (const auto& g : d.value("groups", json::array())) {
      c.dispersal_groups.push_back(
          SubgroupSelector::parse(detail::get_as<std::string>(g, "groups")));
    }
    if (c.dispersal_groups.empty()) c.dispersal_groups.push_back({});
  }
  return c;
}

//===----------------------------------------------------------------------===//
// Report document
//===----------------------------------------------------------------------===//

enum class SectionStatus { kOk, kSkipped, kFailed };

inline const char* section_status_name(SectionStatus s) {
  switch (s) {
    case SectionStatus::kOk: return "ok";
    case SectionStatus::kSkipped: return "skipped";
    case SectionStatus::kFailed: return "failed";
  }
  return "?";
}

inline SectionStatus parse_section_status(std::string_view s) {
  if (s == "ok") return SectionStatus::kOk;
  if (s == "skipped") return SectionStatus::kSkipped;
  if (s == "failed") return SectionStatus::kFailed;
  throw Error(ErrorCode::kParse, "unknown section status '" + std::string(s) + "'");
}

struct Section {
  SectionStatus status = SectionStatus::kOk;
  std::string reason;
  json body = json::object();
  // Plot-ready sidecar tables by file stem. Not part of the document.
  std::map<std::string, csv::Table> tables;

  bool operator==(const Section& o) const {
    return status == o.status && reason == o.reason && body == o.body;
  }
};

struct EvaluationReport {
  int schema_version = kReportSchemaVersion;
  json metadata = json::object();
  std::map<std::string, Section> sections;

  bool any_failed() const {
    for (const auto& [name, s] : sections) {
      if (s.status == SectionStatus::kFailed) return true;
    }
    return false;
  }

  bool operator==(const EvaluationReport& o) const {
    return schema_version == o.schema_version && metadata == o.metadata &&
           sections == o.sections;
  }
};

inline const std::vector<std::string>& report_section_names() {
  static const std::vector<std::string> names = {
      "univariate",
      "correlations",
      "kmarginal.overall",
      "kmarginal.by_geography",
      "kmarginal.by_group",
      "kmarginal.equivalent_subsample",
      "propensity",
      "regression",
      "pca",
      "consistency",
      "privacy.uem",
      "dispersal",
  };
  return names;
}

inline json report_to_json(const EvaluationReport& r) {
  json sections = json::object();
  for (const auto& [name, s] : r.sections) {
    json js = {{"status", section_status_name(s.status)}, {"body", s.body}};
    if (!s.reason.empty()) js["reason"] = s.reason;
    sections[name] = std::move(js);
  }
  return {{"schema_version", r.schema_version},
          {"metadata", r.metadata},
          {"sections", std::move(sections)}};
}

inline std::string dump_report(const EvaluationReport& r) {
  return report_to_json(r).dump(2) + "\n";
}

inline EvaluationReport report_from_json(const json& j) {
  if (!j.is_object() || !j.contains("schema_version")) {
    throw Error(ErrorCode::kParse, "report has no schema_version");
  }
  EvaluationReport r;
  r.schema_version = j["schema_version"].get<int>();
  if (r.schema_version != kReportSchemaVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                "report schema version " + std::to_string(r.schema_version) +
                    " is not supported");
  }
  r.metadata = j.value("metadata", json::object());
  const json sections = j.value("sections", json::object());
  for (const auto& [name, js] : sections.items()) {
    Section s;
    s.status = parse_section_status(js.at("status").get<std::string>());
    s.reason = js.value("reason", "");
    s.body = js.value("body", json::object());
    r.sections.emplace(name, std::move(s));
  }
  return r;
}

inline EvaluationReport load_report(std::string_view document) {
  try {
    return report_from_json(json::parse(document));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("report: ") + e.what());
  }
}

// The report masked for comparisons: the timestamp is the only field that
// varies between identical runs.
inline json masked_report_json(const EvaluationReport& r) {
  json j = report_to_json(r);
  j["metadata"]["generated_at"] = "MASKED";
  return j;
}

// Writes report.json plus one CSV per sidecar table into `dir`.
inline void write_report_bundle(const EvaluationReport& r,
                                const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  }
  write_file(dir / "report.json", dump_report(r));
  for (const auto& [name, s] : r.sections) {
    for (const auto& [stem, table] : s.tables) {
      write_file(dir / (stem + ".csv"), table.to_string());
    }
  }
}

//===----------------------------------------------------------------------===//
// Section bodies
//===----------------------------------------------------------------------===//

namespace detail {

inline json opt_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json kmarginal_json(const KMarginalScore& s) {
  json subsets = json::array();
  for (const auto& p : s.per_subset) {
    subsets.push_back({{"features", p.features}, {"tvd", p.tvd}});
  }
  return {{"score", s.score},
          {"mean_tvd", s.mean_tvd},
          {"subsets", std::move(subsets)},
          {"warnings", s.warnings}};
}

inline csv::Table kmarginal_table(const KMarginalScore& s) {
  csv::Table t;
  t.header = {"subset", "tvd"};
  for (const auto& p : s.per_subset) {
    t.rows.push_back({join(p.features, "+"), format_double(p.tvd)});
  }
  return t;
}

inline json line_json(const RegressionLine& l) {
  return {{"n", l.n},
          {"slope", opt_json(l.slope)},
          {"intercept", opt_json(l.intercept)},
          {"insufficient_variation", l.insufficient_variation()}};
}

inline json regression_group_json(const RegressionGroup& g) {
  double max_dev = 0;
  for (const auto& row : g.deviation) {
    for (double v : row) max_dev = std::max(max_dev, std::abs(v));
  }
  std::vector<std::size_t> empty_t, empty_d;
  for (std::size_t x = 0; x < g.target_heatmap.empty_column.size(); ++x) {
    if (g.target_heatmap.empty_column[x]) empty_t.push_back(x);
    if (g.deid_heatmap.empty_column[x]) empty_d.push_back(x);
  }
  return {{"label", g.label},
          {"values", g.group_values},
          {"target", line_json(g.target)},
          {"deid", line_json(g.deid)},
          {"max_abs_deviation", max_dev},
          {"target_heatmap", g.target_heatmap.cells},
          {"deviation_heatmap", g.deviation},
          {"empty_target_columns", empty_t},
          {"empty_deid_columns", empty_d}};
}

inline json rule_results_json(const std::vector<RuleResult>& rs) {
  json arr = json::array();
  for (const auto& r : rs) {
    json jr = {{"name", r.name},
               {"violations", r.violations},
               {"example_rows", r.example_rows},
               {"skipped", r.skipped}};
    if (!r.reason.empty()) jr["reason"] = r.reason;
    arr.push_back(std::move(jr));
  }
  return arr;
}

// Rules whose features are absent from `dict` are reported as skipped.
inline std::vector<RuleResult> check_rules(const Dataset& ds,
                                           const std::vector<ConsistencyRule>& rules) {
  std::vector<ConsistencyRule> runnable;
  std::vector<std::optional<std::string>> missing(rules.size());
  for (std::size_t i = 0; i < rules.size(); ++i) {
    for (const auto& f : rules[i].features()) {
      if (!ds.dictionary().find(f)) {
        missing[i] = "feature " + f + " not evaluated";
        break;
      }
    }
    if (!missing[i]) runnable.push_back(rules[i]);
  }
  auto results = consistency_check(ds, runnable);
  std::vector<RuleResult> out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (missing[i]) {
      RuleResult r;
      r.name = rules[i].name;
      r.skipped = true;
      r.reason = *missing[i];
      out.push_back(std::move(r));
    } else {
      out.push_back(std::move(results[next++]));
    }
  }
  return out;
}

inline json fingerprint(const Dataset& ds) {
  json card = json::object();
  for (std::size_t f = 0; f < ds.feature_count(); ++f) {
    std::set<std::uint32_t> seen;
    if (ds.spec(f).binnable()) {
      for (std::size_t r = 0; r < ds.row_count(); ++r) seen.insert(ds.bin_code(f, r));
    } else {
      std::set<double> vals(ds.column(f).values.begin(), ds.column(f).values.end());
      card[ds.spec(f).name()] = vals.size();
      continue;
    }
    card[ds.spec(f).name()] = seen.size();
  }
  return {{"rows", ds.row_count()}, {"observed_cardinalities", std::move(card)}};
}

inline std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// Seed of one metric's random stream.
inline std::uint64_t metric_seed(const RunConfig& cfg, std::string_view label) {
  return derive_seed(cfg.seed, label);
}

// The evaluated feature list: the configured subset or list, else every
// non-weight feature of the target.
inline Schema evaluated_features(const Dataset& t, const RunConfig& cfg) {
  if (cfg.feature_subset) return t.dictionary().subset(*cfg.feature_subset);
  if (!cfg.features.empty()) return cfg.features;
  return t.dictionary().metric_features();
}

// Checks that every feature the configuration names exists in `ds` and
// that the k-marginal settings fit.
inline void validate_run_config(const Dataset& ds, const RunConfig& cfg) {
  auto need = [&](const std::string& f, const char* what) {
    if (!ds.dictionary().find(f)) {
      throw Error(ErrorCode::kUnknownFeature,
                  std::string(what) + " feature '" + f + "' is not evaluated");
    }
  };
  for (const auto& f : cfg.kmarginal.always_include) need(f, "always_include");
  for (const auto& f : cfg.group_features) need(f, "group");
  if (cfg.geo_feature) need(*cfg.geo_feature, "geography");
  if (cfg.regression_x) need(*cfg.regression_x, "regression");
  if (cfg.regression_y) need(*cfg.regression_y, "regression");
  for (const auto& f : cfg.propensity_schema) need(f, "propensity");
  for (const auto& f : cfg.uem_schema) need(f, "uem");
  for (const auto& f : cfg.dispersal_order) need(f, "dispersal");
  for (const auto& c : cfg.highlight) need(c.feature, "highlight");
  for (const auto& g : cfg.dispersal_groups) g.validate(ds.dictionary());
  if (cfg.kmarginal.k == 0 || cfg.kmarginal.k > ds.dictionary().metric_features().size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "kmarginal.k = " + std::to_string(cfg.kmarginal.k) +
                    " does not fit the evaluated features");
  }
  (void)RowPredicate(ds.dictionary(), cfg.highlight);
}

// Runs every metric. Load and validation problems throw; a metric that
// fails is recorded in its section and the others still run.
inline EvaluationReport evaluate(const Dataset& target_in, const Dataset& deid_in,
                                 const RunConfig& cfg) {
  const Schema features = evaluated_features(target_in, cfg);
  const Dataset t = select_features(target_in, features);
  const Dataset d = select_features(deid_in, features);
  if (!t.dictionary().same_schema(d.dictionary())) {
    throw Error(ErrorCode::kSchemaMismatch,
                "target and deidentified data disagree on the evaluated features");
  }
  if (t.row_count() == 0) throw Error(ErrorCode::kEmptyDataset, "target is empty");
  validate_run_config(t, cfg);

  KMarginalConfig kcfg = cfg.kmarginal;
  if (!kcfg.seed) kcfg.seed = metric_seed(cfg, "kmarginal");
  const std::uint64_t group_seed = metric_seed(cfg, "kmarginal.by_group");
  const std::uint64_t geo_seed = metric_seed(cfg, "kmarginal.by_geography");
  const std::uint64_t es_seed = metric_seed(cfg, "equivalent_subsample");

  using Body = std::function<Section()>;
  auto ok = [](json body) {
    Section s;
    s.body = std::move(body);
    return s;
  };
  auto skipped = [](std::string reason) {
    Section s;
    s.status = SectionStatus::kSkipped;
    s.reason = std::move(reason);
    return s;
  };
  std::vector<std::pair<std::string, Body>> jobs;

  jobs.emplace_back("univariate", [&] {
    json arr = json::array();
    csv::Table tab;
    tab.header = {"feature", "value", "target", "deid"};
    for (const auto& f : univariate_report(t, d)) {
      json entries = json::array();
      for (const auto& e : f.entries) {
        entries.push_back({{"value", e.value}, {"target", e.target}, {"deid", e.deid}});
        tab.rows.push_back({f.feature, e.value, format_double(e.target),
                            format_double(e.deid)});
      }
      arr.push_back({{"feature", f.feature}, {"tvd", f.tvd}, {"entries", entries}});
    }
    Section s = ok({{"features", arr}});
    s.tables["univariate"] = std::move(tab);
    return s;
  });

  jobs.emplace_back("correlations", [&] {
    json body = json::object();
    csv::Table tab;
    tab.header = {"method", "feature_a", "feature_b", "target", "deid", "delta"};
    for (auto m : {CorrelationMethod::kPearson, CorrelationMethod::kKendallTauB}) {
      const auto c = correlation_difference(t, d, m);
      const std::size_t n = c.features.size();
      json delta = json::array(), target = json::array(), deid = json::array();
      std::size_t undefined = 0;
      double max_delta = 0;
      for (std::size_t i = 0; i < n; ++i) {
        json rd = json::array(), rt = json::array(), rr = json::array();
        for (std::size_t j = 0; j < n; ++j) {
          rd.push_back(detail::opt_json(c.delta[i * n + j]));
          rt.push_back(detail::opt_json(c.target[i * n + j]));
          rr.push_back(detail::opt_json(c.deid[i * n + j]));
          if (j > i) {
            if (!c.delta[i * n + j]) ++undefined;
            else max_delta = std::max(max_delta, *c.delta[i * n + j]);
            auto txt = [](const std::optional<double>& v) {
              return v ? format_double(*v) : std::string("NA");
            };
            tab.rows.push_back({correlation_method_name(m), c.features[i],
                                c.features[j], txt(c.target[i * n + j]),
                                txt(c.deid[i * n + j]), txt(c.delta[i * n + j])});
          }
        }
        delta.push_back(rd);
        target.push_back(rt);
        deid.push_back(rr);
      }
      body[correlation_method_name(m)] = {{"features", c.features},
                                          {"delta", delta},
                                          {"target", target},
                                          {"deid", deid},
                                          {"max_delta", max_delta},
                                          {"undefined_pairs", undefined}};
    }
    Section s = ok(std::move(body));
    s.tables["correlations"] = std::move(tab);
    return s;
  });

  jobs.emplace_back("kmarginal.overall", [&] {
    const auto score = kmarginal_score(t, d, kcfg);
    json body = detail::kmarginal_json(score);
    body["k"] = kcfg.k;
    body["exhaustive"] = kcfg.exhaustive;
    Section s = ok(std::move(body));
    s.tables["kmarginal_subsets"] = detail::kmarginal_table(score);
    return s;
  });

  jobs.emplace_back("kmarginal.by_geography", [&] {
    if (!cfg.geo_feature) return skipped("no geo_feature configured");
    KMarginalConfig gc = kcfg;
    gc.seed = geo_seed;
    const auto g = kmarginal_by_geography(t, d, *cfg.geo_feature, gc);
    json scores = json::array();
    csv::Table tab;
    tab.header = {cfg.geo_feature.value(), "score", "mean_tvd", "n_target", "n_deid",
                  "missing_in_deid"};
    for (const auto& s : g.scores) {
      scores.push_back({{"value", s.value},
                        {"score", s.score.score},
                        {"mean_tvd", s.score.mean_tvd},
                        {"n_target", s.n_target},
                        {"n_deid", s.n_deid},
                        {"missing_in_deid", s.missing_in_deid}});
      tab.rows.push_back({s.value, std::to_string(s.score.score),
                          format_double(s.score.mean_tvd), std::to_string(s.n_target),
                          std::to_string(s.n_deid), s.missing_in_deid ? "1" : "0"});
    }
    json body = {{"geo_feature", g.geo_feature},
                 {"subsets", g.subsets},
                 {"scores", scores},
                 {"warnings", g.warnings}};
    if (!g.scores.empty()) {
      body["worst"] = {{"value", g.scores[g.worst].value},
                       {"score", g.scores[g.worst].score.score}};
    }
    Section s = ok(std::move(body));
    s.tables["kmarginal_by_geography"] = std::move(tab);
    return s;
  });

  jobs.emplace_back("kmarginal.by_group", [&] {
    if (cfg.group_features.empty()) return skipped("no group_features configured");
    KMarginalConfig gc = kcfg;
    gc.seed = group_seed;
    gc.k = cfg.group_k.value_or(cfg.group_features.size() + 2);
    const auto g = kmarginal_by_group(t, d, cfg.group_features, gc);
    json groups = json::array();
    csv::Table tab;
    tab.header = {"group", "score", "mean_tvd", "n_target", "n_deid", "missing_in_deid"};
    for (const auto& s : g.groups) {
      groups.push_back({{"label", s.label},
                        {"values", s.group_values},
                        {"score", s.score.score},
                        {"mean_tvd", s.score.mean_tvd},
                        {"n_target", s.n_target},
                        {"n_deid", s.n_deid},
                        {"missing_in_deid", s.missing_in_deid}});
      tab.rows.push_back({s.label, std::to_string(s.score.score),
                          format_double(s.score.mean_tvd), std::to_string(s.n_target),
                          std::to_string(s.n_deid), s.missing_in_deid ? "1" : "0"});
    }
    Section s = ok({{"group_features", g.group_features},
                    {"k", gc.k},
                    {"subsets", g.subsets},
                    {"groups", groups},
                    {"warnings", g.warnings}});
    s.tables["kmarginal_by_group"] = std::move(tab);
    return s;
  });

  jobs.emplace_back("kmarginal.equivalent_subsample", [&] {
    const auto score = kmarginal_score(t, d, kcfg);
    const auto es =
        equivalent_subsample(t, score, cfg.es_fractions, cfg.es_trials, es_seed);
    json cal = json::array();
    csv::Table tab;
    tab.header = {"fraction", "mean_score", "raw_mean_score", "stddev"};
    for (const auto& c : es.calibration) {
      cal.push_back({{"fraction", c.fraction},
                     {"mean_score", c.mean_score},
                     {"raw_mean_score", c.raw_mean_score},
                     {"stddev", c.stddev}});
      tab.rows.push_back({format_double(c.fraction), format_double(c.mean_score),
                          format_double(c.raw_mean_score), format_double(c.stddev)});
    }
    Section s = ok({{"deid_score", es.deid_score},
                    {"es_percent", es.es_percent},
                    {"position", es_position_name(es.position)},
                    {"summary", es.describe()},
                    {"trials", cfg.es_trials},
                    {"calibration", cal}});
    s.tables["equivalent_subsample"] = std::move(tab);
    return s;
  });

  jobs.emplace_back("propensity", [&] {
    const auto p = propensity(t, d, cfg.propensity_schema);
    Section s = ok({{"schema", p.schema},
                    {"auc", p.auc},
                    {"divergence", p.divergence},
                    {"occupied_bins", p.occupied_bins},
                    {"target_trace", p.target_trace},
                    {"deid_trace", p.deid_trace}});
    s.tables["propensity"] = propensity_table(p);
    return s;
  });

  jobs.emplace_back("regression", [&] {
    if (!cfg.regression_x || !cfg.regression_y) {
      return skipped("no regression x/y configured");
    }
    const auto r =
        regression_metric(t, d, *cfg.regression_x, *cfg.regression_y, cfg.group_features);
    json groups = json::array();
    for (const auto& g : r.groups) groups.push_back(detail::regression_group_json(g));
    Section s = ok({{"x", r.x},
                    {"y", r.y},
                    {"group_features", r.group_features},
                    {"x_labels", r.x_labels},
                    {"y_labels", r.y_labels},
                    {"overall", detail::regression_group_json(r.overall)},
                    {"groups", groups}});
    s.tables["regression_lines"] = regression_lines_table(r);
    s.tables["regression_heatmaps"] = regression_heatmap_table(r);
    return s;
  });

  jobs.emplace_back("pca", [&] {
    const auto p = pca_compare(t, d, cfg.highlight);
    json hl = json::array();
    for (const auto& c : cfg.highlight) hl.push_back(c.to_string());
    std::vector<std::string> dropped;
    for (std::size_t a = 0; a < p.axes.size(); ++a) {
      if (p.dropped[a]) dropped.push_back(p.axes[a]);
    }
    Section s = ok({{"axes", p.axes},
                    {"dropped_axes", dropped},
                    {"loadings", p.loadings},
                    {"explained_variance", p.explained_variance},
                    {"total_variance", p.total_variance},
                    {"highlight", hl},
                    {"highlighted_target",
                     std::count(p.target_highlight.begin(), p.target_highlight.end(), true)},
                    {"highlighted_deid",
                     std::count(p.deid_highlight.begin(), p.deid_highlight.end(), true)},
                    {"warnings", p.warnings}});
    s.tables["pca_projections"] = pca_projection_table(p);
    return s;
  });

  jobs.emplace_back("consistency", [&] {
    const auto& rules = cfg.rules ? *cfg.rules : default_rules();
    Section s = ok({{"rules", rules_json(rules)},
                    {"target", detail::rule_results_json(detail::check_rules(t, rules))},
                    {"deid", detail::rule_results_json(detail::check_rules(d, rules))},
                    {"default_rules", !cfg.rules.has_value()}});
    return s;
  });

  jobs.emplace_back("privacy.uem", [&] {
    const auto u = unique_exact_match(t, d, cfg.uem_schema);
    return ok({{"schema", u.schema},
               {"unique_target_records", u.unique_target_records},
               {"matched_unique", u.matched_unique},
               {"percent", u.percent},
               {"no_unique_records", u.no_unique_records}});
  });

  jobs.emplace_back("dispersal", [&] {
    if (cfg.dispersal_order.empty()) return skipped("no dispersal order configured");
    const auto profile = dispersal_profile(t, cfg.dispersal_order, cfg.dispersal_groups);
    const auto steps = dispersal_steps(t, cfg.dispersal_order, cfg.dispersal_groups);
    json subgroups = json::array();
    for (const auto& sp : profile.subgroups) {
      json pts = json::array();
      for (const auto& pt : sp.points) {
        pts.push_back({{"n_features", pt.n_features},
                       {"dispersal", pt.dispersal},
                       {"avg_bin_size", pt.avg_bin_size}});
      }
      subgroups.push_back(
          {{"label", sp.label}, {"rows", sp.rows}, {"skipped", sp.skipped}, {"points", pts}});
    }
    Section s = ok({{"order", profile.feature_order}, {"subgroups", subgroups}});
    s.tables["dispersal_profile"] = profile_table(profile);
    s.tables["dispersal_steps"] = steps_table(steps);
    return s;
  });

  auto sections = parallel_map(jobs.size(), [&](std::size_t i) {
    try {
      return jobs[i].second();
    } catch (const Error& e) {
      Section s;
      s.status = SectionStatus::kFailed;
      s.reason = e.what();
      log_message(LogLevel::kWarn, jobs[i].first + " failed: " + s.reason);
      return s;
    }
  });

  EvaluationReport report;
  json seeds = {{"master", cfg.seed},
                {"kmarginal", *kcfg.seed},
                {"kmarginal.by_group", group_seed},
                {"kmarginal.by_geography", geo_seed},
                {"equivalent_subsample", es_seed}};
  json config = cfg.echo;
  config.erase("workers");
  report.metadata = {{"tool_version", std::string(kToolVersion)},
                     {"generated_at", detail::utc_timestamp()},
                     {"seeds", seeds},
                     {"config", config},
                     {"features", features},
                     {"target", detail::fingerprint(t)},
                     {"deid", detail::fingerprint(d)}};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    report.sections.emplace(jobs[i].first, std::move(sections[i]));
  }
  return report;
}

}  // namespace deideval
