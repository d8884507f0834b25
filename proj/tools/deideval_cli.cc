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

// Command-line front end. Exit codes: 0 success, 1 usage error,
// 2 validation error, 3 metric failure.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deideval/deid.hpp"
#include "deideval/dispersal.hpp"
#include "deideval/report.hpp"

namespace {

namespace fs = std::filesystem;
using namespace deideval;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitMetric = 3;

void print_error(const Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  if (const auto& loc = e.location(); loc && loc->row > 0) {
    std::cerr << "  at row " << loc->row << ", column " << loc->column
              << ", value '" << loc->value << "'\n";
  } else if (loc) {
    std::cerr << "  feature " << loc->column << ", value '" << loc->value << "'\n";
  }
}

Schema list_option(const std::string& text) {
  Schema out;
  if (text.empty()) return out;
  for (auto& s : split(text, ',')) {
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

struct EvaluateArgs {
  std::string target, deid, dict, config, out;
  unsigned workers = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  EvaluationReport report;
  try {
    const DataDictionary dict = load_dictionary_file(a.dict);
    const RunConfig cfg =
        parse_run_config(read_file(a.config), fs::path(a.config).parent_path());
    if (a.workers > 0) {
      set_worker_count(a.workers);
    } else if (cfg.workers) {
      set_worker_count(*cfg.workers);
    }
    const Dataset t = load_dataset_file(a.target, dict);
    const Dataset d = load_dataset_file(a.deid, dict);
    report = evaluate(t, d, cfg);
    write_report_bundle(report, a.out);
  } catch (const Error& e) {
    print_error(e);
    return kExitValidation;
  }
  for (const auto& [name, s] : report.sections) {
    if (s.status == SectionStatus::kFailed) {
      std::cerr << "section " << name << " failed: " << s.reason << "\n";
    }
  }
  const auto& km = report.sections.at("kmarginal.overall");
  if (km.status == SectionStatus::kOk) {
    std::cout << "k-marginal score: " << km.body["score"].get<int>() << "\n";
  }
  const auto& uem = report.sections.at("privacy.uem");
  if (uem.status == SectionStatus::kOk) {
    std::cout << "unique exact match: "
              << format_double(uem.body["percent"].get<double>()) << "%\n";
  }
  std::cout << "report written to " << (fs::path(a.out) / "report.json").string()
            << "\n";
  return report.any_failed() ? kExitMetric : kExitOk;
}

struct DispersalArgs {
  std::string data, dict, order, out;
  std::vector<std::string> groups;
};

int run_dispersal(const DispersalArgs& a) {
  Dataset ds;
  Schema order = list_option(a.order);
  std::vector<SubgroupSelector> groups;
  try {
    const DataDictionary dict = load_dictionary_file(a.dict);
    ds = load_dataset_file(a.data, dict);
    for (const auto& f : order) ds.index_of(f);
    for (const auto& g : a.groups) {
      groups.push_back(SubgroupSelector::parse(g));
      groups.back().validate(ds.dictionary());
    }
    if (groups.empty()) groups.push_back({});
  } catch (const Error& e) {
    print_error(e);
    return kExitValidation;
  }
  try {
    const auto profile = dispersal_profile(ds, order, groups);
    const auto steps = dispersal_steps(ds, order, groups);
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + a.out);
    const csv::Table table = profile_table(profile);
    write_file(fs::path(a.out) / "dispersal_profile.csv", table.to_string());
    write_file(fs::path(a.out) / "dispersal_steps.csv", steps_table(steps).to_string());
    std::cout << table.to_string();
  } catch (const Error& e) {
    print_error(e);
    return kExitMetric;
  }
  return kExitOk;
}

struct DeidArgs {
  std::string method, data, dict, out, schema, features;
  double fraction = 1.0;
  double rate = 0.0;
  double epsilon = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t max_cells = 10'000'000;
};

int run_deid(const DeidArgs& a) {
  try {
    const DataDictionary dict = load_dictionary_file(a.dict);
    const Dataset t = load_dataset_file(a.data, dict);
    Dataset out;
    if (a.method == "identity") {
      out = deid_identity(t);
    } else if (a.method == "subsample") {
      out = deid_subsample(t, a.fraction, a.seed);
    } else if (a.method == "swap") {
      Schema features = list_option(a.features);
      if (features.empty()) features = t.dictionary().metric_features();
      out = deid_swap(t, a.rate, features, a.seed);
    } else {
      DpHistogramParams p;
      p.epsilon = a.epsilon;
      p.schema = list_option(a.schema);
      p.max_cells = a.max_cells;
      p.seed = a.seed;
      out = deid_dp_histogram(t, p);
    }
    write_dataset_file(a.out, out);
    std::cout << "wrote " << out.row_count() << " rows to " << a.out << "\n";
  } catch (const Error& e) {
    print_error(e);
    return kExitValidation;
  }
  return kExitOk;
}

int run_validate(const std::string& data, const std::string& dict_path) {
  try {
    const DataDictionary dict = load_dictionary_file(dict_path);
    const Dataset ds = load_dataset_file(data, dict);
    std::cout << "ok: " << ds.row_count() << " rows, " << ds.feature_count()
              << " features\n";
  } catch (const Error& e) {
    print_error(e);
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evaluate deidentified tabular data against its target"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Run every metric and write a report");
  evaluate_cmd->add_option("--target", ev.target, "Target data CSV")->required();
  evaluate_cmd->add_option("--deid", ev.deid, "Deidentified data CSV")->required();
  evaluate_cmd->add_option("--dict", ev.dict, "Data dictionary JSON")->required();
  evaluate_cmd->add_option("--config", ev.config, "Run configuration JSON")->required();
  evaluate_cmd->add_option("--out", ev.out, "Output directory")->required();
  evaluate_cmd->add_option("--workers", ev.workers, "Worker threads (default: all cores)");

  DispersalArgs dp;
  auto* dispersal_cmd =
      app.add_subcommand("dispersal", "Subgroup dispersal profile and per-step bounds");
  dispersal_cmd->add_option("--data", dp.data, "Data CSV")->required();
  dispersal_cmd->add_option("--dict", dp.dict, "Data dictionary JSON")->required();
  dispersal_cmd->add_option("--order", dp.order, "Feature order f1,f2,...")->required();
  dispersal_cmd->add_option("--group", dp.groups, "Subgroup F=v,... (repeatable)");
  dispersal_cmd->add_option("--out", dp.out, "Output directory")->required();

  DeidArgs de;
  auto* deid_cmd = app.add_subcommand("deid", "Produce a baseline deidentified dataset");
  deid_cmd->add_option("method", de.method, "identity | subsample | swap | dphist")
      ->required()
      ->check(CLI::IsMember({"identity", "subsample", "swap", "dphist"}));
  deid_cmd->add_option("--data", de.data, "Target data CSV")->required();
  deid_cmd->add_option("--dict", de.dict, "Data dictionary JSON")->required();
  deid_cmd->add_option("--fraction", de.fraction, "subsample: kept fraction in (0, 1]");
  deid_cmd->add_option("--rate", de.rate, "swap: swapped fraction in [0, 1]");
  deid_cmd->add_option("--features", de.features, "swap: features f1,... (default all)");
  deid_cmd->add_option("--epsilon", de.epsilon, "dphist: privacy parameter");
  deid_cmd->add_option("--schema", de.schema, "dphist: features f1,... (default all)");
  deid_cmd->add_option("--max-cells", de.max_cells, "dphist: contingency table cap");
  deid_cmd->add_option("--seed", de.seed, "Random seed")->required();
  deid_cmd->add_option("--out", de.out, "Output CSV")->required();

  std::string vdata, vdict;
  auto* validate_cmd = app.add_subcommand("validate", "Check a data file against a dictionary");
  validate_cmd->add_option("--data", vdata, "Data CSV")->required();
  validate_cmd->add_option("--dict", vdict, "Data dictionary JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*evaluate_cmd) return run_evaluate(ev);
  if (*dispersal_cmd) return run_dispersal(dp);
  if (*deid_cmd) return run_deid(de);
  if (*validate_cmd) return run_validate(vdata, vdict);
  return kExitUsage;
}
