// Acceptance gate: one PASS/FAIL line per criterion. Arguments select criteria by number (default: all).

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "fedbio/cli/validation.hpp"
#include "fedbio/core.hpp"

int main(int argc, char** argv) {
  const std::vector<fedbio::CheckFn> all = {
      fedbio::check_oracle_correctness,  fedbio::check_iterative_rate,       fedbio::check_noniterative_bound,
      fedbio::check_sketch_statistics,   fedbio::check_error_feedback,       fedbio::check_ledger_exactness,
      fedbio::check_noisy_label_recovery, fedbio::check_shapley_consistency, fedbio::check_compression_trend};
  std::vector<fedbio::CheckFn> chosen;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > static_cast<int>(all.size())) {
      std::fprintf(stderr, "unknown criterion '%s' (expected 1..%zu)\n", argv[i], all.size());
      return 2;
    }
    chosen.push_back(all[static_cast<std::size_t>(n - 1)]);
  }
  if (chosen.empty()) chosen = all;
  fedbio::set_warning_handler([](const std::string&) {});
  const auto report = fedbio::run_suite("acceptance", chosen, [](const fedbio::CheckResult& r) {
    std::printf("%s\n", fedbio::format_result(r).c_str());
    std::fflush(stdout);
  });
  return report.pass() ? 0 : 1;
}
