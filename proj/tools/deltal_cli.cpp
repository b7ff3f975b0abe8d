#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "deltal/acceptance.hpp"
#include "deltal/config.hpp"
#include "deltal/errors.hpp"
#include "deltal/experiment.hpp"
#include "deltal/report.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitViolation = 1;
constexpr int kExitError = 2;

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags, bool needs_config) {
  auto* opt = cmd->add_option("--config", flags.config, "experiment config file");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "run only this seed instead of the config's list");
  cmd->add_option("--out", flags.out, "output directory (overrides output_dir)");
  cmd->add_option("--jobs", flags.jobs, "worker threads")->check(CLI::PositiveNumber);
}

int run_config(const RunFlags& flags, bool training) {
  deltal::ExperimentConfig config = deltal::parse_config(deltal::read_file(flags.config));
  const bool is_train = config.kind == deltal::ExperimentKind::TrainCompare;
  if (is_train != training) {
    throw deltal::ConfigInvalid(0, "experiment.kind",
                                fmt::format("{} belongs to the `{}` subcommand", deltal::to_string(config.kind),
                                            is_train ? "train" : "stats"));
  }
  if (flags.seed) config.seeds = {*flags.seed};
  if (!flags.out.empty()) config.output_dir = flags.out;
  const deltal::ReportBundle bundle = deltal::run_experiment(config, flags.jobs);
  deltal::write_bundle(bundle, config.output_dir);
  std::cout << bundle.summary << fmt::format("\noutputs: {} ({} files + manifest)\n", config.output_dir,
                                             bundle.files.size() + 1);
  return bundle.pass ? kExitPass : kExitViolation;
}

int run_verify(std::uint64_t seed, int jobs, const std::vector<std::string>& only) {
  const deltal::AcceptanceOptions options{seed, jobs};
  bool all = true;
  const auto show = [&](const deltal::CriterionResult& r) {
    all = all && r.pass;
    std::cout << deltal::format_result(r) << std::flush;
  };
  if (only.empty()) {
    deltal::run_acceptance(options, show);
  } else {
    for (const auto& id : only) show(deltal::run_criterion(id, options));
  }
  std::cout << (all ? "all criteria passed\n" : "some criteria failed\n");
  return all ? kExitPass : kExitViolation;
}

int run_report(const std::string& dir) {
  const deltal::ManifestCheck check = deltal::verify_manifest(dir);
  std::cout << fmt::format("kind: {}\nconfig hash: {}\nrecorded result: {}\n", check.kind, check.config_hash,
                           check.pass ? "PASS" : "FAIL");
  if (!check.ok()) {
    std::cout << "manifest problems:\n";
    for (const auto& p : check.problems) std::cout << "  " << p << "\n";
    return kExitError;
  }
  std::cout << "manifest: all files present and unmodified\n\n" << deltal::read_file(std::filesystem::path(dir) / "summary.txt");
  return check.pass ? kExitPass : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Length-aware loss aggregation lab: estimator statistics and toy policy-gradient training"};
  app.require_subcommand(1);

  std::uint64_t verify_seed = 0;
  int verify_jobs = 1;
  std::vector<std::string> only;
  auto* verify = app.add_subcommand("verify", "run the acceptance criteria A1-A7");
  verify->add_option("--seed", verify_seed, "base seed");
  verify->add_option("--jobs", verify_jobs, "worker threads")->check(CLI::PositiveNumber);
  verify->add_option("--only", only, "criteria to run, e.g. --only A3 A6");

  RunFlags stats_flags;
  auto* stats = app.add_subcommand("stats", "run a statistics experiment from a config");
  add_run_flags(stats, stats_flags, true);

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "run a training comparison from a config");
  add_run_flags(train, train_flags, true);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "check an output directory against its manifest and show the summary");
  report->add_option("--out,dir", report_dir, "output directory")->required();

  app.add_subcommand("config-reference", "print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitError;
  }

  try {
    if (*verify) return run_verify(verify_seed, verify_jobs, only);
    if (*stats) return run_config(stats_flags, false);
    if (*train) return run_config(train_flags, true);
    if (*report) return run_report(report_dir);
    std::cout << deltal::config_reference();
    return kExitPass;
  } catch (const deltal::ConfigInvalid& e) {
    std::cerr << e.what() << "\n";
  } catch (const deltal::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return kExitError;
}
