#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deltal/aggregation.hpp"
#include "deltal/policy.hpp"
#include "deltal/trainer.hpp"

namespace deltal {

enum class ExperimentKind { VarianceLength, CvOrdering, Table1Check, OptimalityCheck, TrainCompare };

const char* to_string(ExperimentKind kind);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::CvOrdering;
  TaskSpec task = default_task();
  std::vector<AggregationScheme> schemes;
  std::optional<TrainConfig> train;  // scheme and seed are set per run
  double init_stop_logit = kDefaultInitStopLogit;
  std::size_t samples = 0;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;

  int group_size = 8;
  std::vector<int> lengths;         // fixed length multiset (OptimalityCheck)
  std::size_t random_vectors = 0;   // CvOrdering sweep size, OptimalityCheck weight trials
  double logit_scale = 1.0;         // random instance logits (Table1Check)
  std::size_t min_bin_count = 30;   // VarianceLength

  bool operator==(const ExperimentConfig&) const = default;
};

// GRPO, DAPO, DrGRPO(M) and DeltaL(alpha, M) for every alpha in `alphas`.
std::vector<AggregationScheme> default_schemes(double m, const std::vector<double>& alphas);

// Strict parser for the sectioned `key = value` format. Every value is JSON.
// Throws ConfigInvalid with the offending line and field.
ExperimentConfig parse_config(std::string_view text);

// Canonical text; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// FNV-1a over the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// Every accepted key with its type, default and meaning.
std::string config_reference();

}  // namespace deltal
