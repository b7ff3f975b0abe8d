#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "deltal/aggregation.hpp"
#include "deltal/gradient.hpp"
#include "deltal/grad_vector.hpp"
#include "deltal/policy.hpp"
#include "deltal/random.hpp"

namespace deltal {

inline constexpr int kDynamicSamplingRetries = 8;
inline constexpr double kDefaultInitStopLogit = -1.5;

struct TrainConfig {
  AggregationScheme scheme = DeltaL{1.0, 16.0};
  AdvantageMode advantage_mode = AdvantageMode::MeanStd;
  ClipConfig clip{true, 0.2, 0.3};
  int prompts_per_batch = 16;
  int rollouts_per_prompt = 8;
  int minibatches_per_batch = 1;
  double learning_rate = 4.0;
  int steps = 500;
  int eval_every = 25;
  int eval_k = 8;
  int eval_prompts = 256;
  bool dynamic_sampling = false;
  bool overlong_filtering = false;
  // DAPO normalizes by the summed lengths of the whole batch rather than of
  // each minibatch.
  bool dapo_full_batch = true;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  int step = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;  // over every sampled response, filtered or not
  double entropy = 0.0;
  double grad_norm = 0.0;     // norm of the summed update direction of the step
  double scheme_scale = 0.0;  // sum of aggregation weights over the step
  int degenerate_groups = 0;  // groups used with all-equal rewards
  int resamples = 0;
  int exhausted_groups = 0;   // dynamic sampling hit the retry cap
  int filtered = 0;           // truncated responses masked from the loss

  bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
  int step = 0;
  double avg_at_k = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

struct TrainTrace {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  std::vector<double> eval_scores() const;
  double final_score() const;
  bool operator==(const TrainTrace&) const = default;
};

struct TrainResult {
  PolicyParams params;
  TrainTrace trace;
};

// One step's rollouts, all drawn from the snapshot policy.
struct Batch {
  std::vector<RolloutGroup> groups;
  int resamples = 0;
  int exhausted_groups = 0;
};

Batch sample_batch(const PolicyTables& snapshot, const TaskSpec& task, const TrainConfig& config, int step);

struct UpdateDirection {
  GradVector direction;  // sum_i x_i g_i
  double weight_sum = 0.0;
  int filtered = 0;
};

// Aggregated gradient of one minibatch at `params`. Weights come from the
// flat length list of the minibatch; `batch_length_sum` replaces the DAPO
// denominator when dapo_full_batch is set.
UpdateDirection minibatch_direction(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                    const TrainConfig& config, double batch_length_sum);

// Zero logits except `stop_logit` on STOP in every state. A negative value
// starts training from mostly long, often truncated responses.
PolicyParams initial_policy(const TaskSpec& task, double stop_logit = kDefaultInitStopLogit);

// Gradient ascent from `init`. Evaluations run at step 0, every eval_every
// steps and after the last step, on a stream separate from training.
TrainResult train(const TrainConfig& config, const TaskSpec& task, const PolicyParams& init);

// Mean reward over k samples for each of n_prompts prompts.
double evaluate_avg_at_k(const PolicyParams& params, const TaskSpec& task, int k, int n_prompts, Rng& rng);

// Pearson correlation of scores against 0, 1, 2, ...; nullopt when the scores
// are constant. Throws std::invalid_argument with fewer than two scores.
std::optional<double> monotonicity_score(std::span<const double> scores);

// Token-averaged next-token entropy over n sampled responses.
double policy_entropy(const PolicyParams& params, const TaskSpec& task, int n, Rng& rng);

}  // namespace deltal
