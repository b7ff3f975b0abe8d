#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deltal/config.hpp"
#include "deltal/report.hpp"
#include "deltal/trainer.hpp"

namespace deltal {

struct TrainRun {
  AggregationScheme scheme;
  std::string label;
  std::uint64_t seed = 0;
  TrainTrace trace;
  double final_score = 0.0;
  std::optional<double> monotonicity;
};

struct SchemeSummary {
  AggregationScheme scheme;
  std::string label;
  std::vector<double> finals;  // per seed, in config order
  std::vector<std::optional<double>> monotonicity;
  double mean_final = 0.0;
  double mean_monotonicity = 0.0;  // undefined seeds count as 0
};

struct TrainComparison {
  std::vector<std::uint64_t> seeds;
  std::vector<TrainRun> runs;  // scheme-major
  std::vector<SchemeSummary> schemes;
};

// Every scheme of the config trained from initial_policy on every seed.
TrainComparison compare_training(const ExperimentConfig& config, int jobs = 1);

// Directional training criterion: DeltaL(alpha = 1) has a mean final score at
// least that of DrGRPO and DAPO, and a mean monotonicity of at least 0.8 and at
// least every GRPO/DAPO/DrGRPO mean minus 0.05.
struct TrainVerdict {
  bool applicable = false;  // DeltaL(1), DrGRPO and DAPO all present
  bool final_ok = false;
  bool monotonicity_ok = false;
  std::vector<std::string> lines;

  bool pass() const { return applicable && final_ok && monotonicity_ok; }
};

inline constexpr double kMinMonotonicity = 0.8;
inline constexpr double kMonotonicitySlack = 0.05;

TrainVerdict train_verdict(const TrainComparison& comparison);

// Runs the experiment and renders its outputs in memory. Nothing is written.
ReportBundle run_experiment(const ExperimentConfig& config, int jobs = 1);

}  // namespace deltal
