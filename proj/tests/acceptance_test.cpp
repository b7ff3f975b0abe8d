// Prints one PASS/FAIL line per acceptance criterion. With criterion ids as
// arguments only those run. Exit status is 1 when any selected criterion fails.

#include <iostream>
#include <string>
#include <vector>

#include "deltal/acceptance.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> ids(argv + 1, argv + argc);
  if (ids.empty()) ids = deltal::acceptance_ids();
  bool all = true;
  for (const auto& id : ids) {
    const deltal::CriterionResult r = deltal::run_criterion(id);
    all = all && r.pass;
    std::cout << deltal::format_result(r) << std::flush;
  }
  return all ? 0 : 1;
}
