#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace deltal {

struct CriterionResult {
  std::string id;     // "A1" .. "A7"
  std::string title;
  bool pass = false;
  std::vector<std::string> details;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::uint64_t seed = 0;
  int jobs = 1;
};

std::vector<std::string> acceptance_ids();

// Throws std::invalid_argument for an unknown id.
CriterionResult run_criterion(const std::string& id, const AcceptanceOptions& options = {});

// Runs every criterion in order; `on_result` sees each one as it finishes.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options = {},
                                            const std::function<void(const CriterionResult&)>& on_result = {});

// "A1 PASS  <title>  (1.2 s)" followed by indented details.
std::string format_result(const CriterionResult& result);

}  // namespace deltal
