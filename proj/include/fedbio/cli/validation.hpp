#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedbio {

struct CheckResult {
  int criterion = 0;  // acceptance criterion number, 0 for supplementary checks
  std::string name;
  bool pass = false;
  std::string detail;  // one line with the measured quantities and thresholds
  double seconds = 0.0;
  nlohmann::json data;  // measured values, machine readable
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool pass() const;
  nlohmann::json to_json() const;  // no wall-clock fields, so verdicts are reproducible
};

// Individual checks. Tolerances and sample counts are fixed inside each function.
CheckResult check_oracle_correctness();          // 1
CheckResult check_iterative_rate();              // 2
CheckResult check_noniterative_bound();          // 3
CheckResult check_sketch_statistics();           // 4
CheckResult check_error_feedback();              // 5
CheckResult check_ledger_exactness();            // 6
CheckResult check_noisy_label_recovery();        // 7
CheckResult check_shapley_consistency();         // 8
CheckResult check_compression_trend();           // 9
CheckResult check_estimator_oracle_agreement();  // supplementary
CheckResult check_subspace_embedding();          // supplementary

using CheckFn = std::function<CheckResult()>;

/// Runs the checks of a suite in order, timing each one. `on_result` sees every result as it completes.
SuiteReport run_suite(const std::string& suite, const std::vector<CheckFn>& checks,
                      const std::function<void(const CheckResult&)>& on_result = {});

/// Suites exposed by the CLI: estimators, sketches, shapley, experiments, all.
std::vector<std::string> suite_names();
std::vector<CheckFn> suite_checks(const std::string& suite);

/// "PASS criterion 3: ..." or "FAIL ...".
std::string format_result(const CheckResult& r);

}  // namespace fedbio
