#include "deltal/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace deltal {

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;

double token_entropy(const PolicyTables& tables, std::span<const Trajectory> trajs, double& tokens) {
  double total = 0.0;
  for (const auto& t : trajs) {
    int state = 0;
    for (int token : t.tokens) {
      total += tables.entropy(state);
      state = tables.state_after(token);
    }
    tokens += static_cast<double>(t.tokens.size());
  }
  return total;
}

}  // namespace

void TrainConfig::validate() const {
  deltal::validate(scheme);
  clip.validate();
  const auto bad = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (rollouts_per_prompt < 2) bad(fmt::format("rollouts_per_prompt must be >= 2, got {}", rollouts_per_prompt));
  if (prompts_per_batch < 1) bad(fmt::format("prompts_per_batch must be >= 1, got {}", prompts_per_batch));
  if (minibatches_per_batch < 1 || prompts_per_batch % minibatches_per_batch != 0) {
    bad(fmt::format("minibatches_per_batch ({}) must divide prompts_per_batch ({})", minibatches_per_batch,
                    prompts_per_batch));
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    bad(fmt::format("learning_rate must be finite and >= 0, got {}", learning_rate));
  }
  if (steps < 1) bad(fmt::format("steps must be >= 1, got {}", steps));
  if (eval_every < 1) bad(fmt::format("eval_every must be >= 1, got {}", eval_every));
  if (eval_k < 1) bad(fmt::format("eval_k must be >= 1, got {}", eval_k));
  if (eval_prompts < 1) bad(fmt::format("eval_prompts must be >= 1, got {}", eval_prompts));
}

std::vector<double> TrainTrace::eval_scores() const {
  std::vector<double> out;
  out.reserve(evals.size());
  for (const auto& e : evals) out.push_back(e.avg_at_k);
  return out;
}

double TrainTrace::final_score() const { return evals.empty() ? 0.0 : evals.back().avg_at_k; }

Batch sample_batch(const PolicyTables& snapshot, const TaskSpec& task, const TrainConfig& config, int step) {
  Batch batch;
  batch.groups.reserve(static_cast<std::size_t>(config.prompts_per_batch));
  for (int p = 0; p < config.prompts_per_batch; ++p) {
    Rng rng = make_rng(config.seed, {kTrainStream, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(p)});
    const auto draw_group = [&] {
      std::vector<Trajectory> trajs;
      trajs.reserve(static_cast<std::size_t>(config.rollouts_per_prompt));
      for (int i = 0; i < config.rollouts_per_prompt; ++i) trajs.push_back(sample_trajectory(snapshot, task, rng));
      return make_group(p, std::move(trajs), config.advantage_mode);
    };
    RolloutGroup group = draw_group();
    if (config.dynamic_sampling) {
      int retries = 0;
      while (group.degenerate && retries < kDynamicSamplingRetries) {
        group = draw_group();
        ++retries;
      }
      batch.resamples += retries;
      if (group.degenerate) ++batch.exhausted_groups;
    }
    batch.groups.push_back(std::move(group));
  }
  return batch;
}

UpdateDirection minibatch_direction(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                    const TrainConfig& config, double batch_length_sum) {
  const PolicyTables tables(params);
  std::vector<GradVector> grads;
  std::vector<int> lengths;
  UpdateDirection out{GradVector(params.size()), 0.0, 0};
  for (const auto& group : groups) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Trajectory& t = group.trajectories[i];
      if (config.overlong_filtering && t.truncated) {
        ++out.filtered;
        continue;
      }
      grads.push_back(sample_gradient(tables, t, group.advantages[i], config.clip));
      lengths.push_back(t.length());
    }
  }
  if (grads.empty()) return out;

  WeightVector weights;
  if (std::holds_alternative<Dapo>(config.scheme) && config.dapo_full_batch) {
    weights.weights.assign(grads.size(), 1.0 / batch_length_sum);
  } else {
    weights = scheme_weights(config.scheme, lengths);
  }
  out.direction = aggregate(grads, weights);
  out.weight_sum = weights.sum();
  return out;
}

PolicyParams initial_policy(const TaskSpec& task, double stop_logit) {
  task.validate();
  PolicyParams params(task.vocab_size, task.vocab_size);
  for (int s = 0; s < task.vocab_size; ++s) params.logit(s, kStopToken) = stop_logit;
  return params;
}

TrainResult train(const TrainConfig& config, const TaskSpec& task, const PolicyParams& init) {
  config.validate();
  task.validate();
  init.validate();
  if (init.vocab_size() != task.vocab_size) {
    throw std::invalid_argument(
        fmt::format("policy vocab {} does not match task vocab {}", init.vocab_size(), task.vocab_size));
  }

  TrainResult result{init, {}};
  PolicyParams& params = result.params;
  const auto evaluate = [&](int step) {
    Rng rng = make_rng(config.seed, {kEvalStream, static_cast<std::uint64_t>(step)});
    result.trace.evals.push_back({step, evaluate_avg_at_k(params, task, config.eval_k, config.eval_prompts, rng)});
  };

  const auto per_minibatch = static_cast<std::size_t>(config.prompts_per_batch / config.minibatches_per_batch);
  for (int step = 0; step < config.steps; ++step) {
    if (step % config.eval_every == 0) evaluate(step);

    const PolicyTables snapshot(params);
    const Batch batch = sample_batch(snapshot, task, config, step);

    StepRecord rec;
    rec.step = step;
    rec.resamples = batch.resamples;
    rec.exhausted_groups = batch.exhausted_groups;
    double responses = 0.0;
    double tokens = 0.0;
    double entropy = 0.0;
    double kept_length = 0.0;
    for (const auto& g : batch.groups) {
      if (g.degenerate) ++rec.degenerate_groups;
      entropy += token_entropy(snapshot, g.trajectories, tokens);
      for (const auto& t : g.trajectories) {
        rec.mean_reward += t.reward;
        rec.mean_length += t.length();
        responses += 1.0;
        if (!(config.overlong_filtering && t.truncated)) kept_length += t.length();
      }
    }
    rec.mean_reward /= responses;
    rec.mean_length /= responses;
    rec.entropy = entropy / tokens;

    GradVector total(params.size());
    const std::span<const RolloutGroup> groups(batch.groups);
    for (int mb = 0; mb < config.minibatches_per_batch; ++mb) {
      const auto part = groups.subspan(static_cast<std::size_t>(mb) * per_minibatch, per_minibatch);
      const UpdateDirection dir = minibatch_direction(params, part, config, kept_length);
      auto values = params.values();
      for (std::size_t k = 0; k < values.size(); ++k) values[k] += config.learning_rate * dir.direction[k];
      total += dir.direction;
      rec.scheme_scale += dir.weight_sum;
      rec.filtered += dir.filtered;
    }
    rec.grad_norm = total.norm();
    result.trace.steps.push_back(rec);
  }
  evaluate(config.steps);
  return result;
}

double evaluate_avg_at_k(const PolicyParams& params, const TaskSpec& task, int k, int n_prompts, Rng& rng) {
  if (k < 1 || n_prompts < 1) throw std::invalid_argument("k and n_prompts must be >= 1");
  const PolicyTables tables(params);
  double total = 0.0;
  for (int p = 0; p < n_prompts; ++p) {
    int hits = 0;
    for (int i = 0; i < k; ++i) hits += sample_trajectory(tables, task, rng).reward;
    total += static_cast<double>(hits) / k;
  }
  return total / n_prompts;
}

std::optional<double> monotonicity_score(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw std::invalid_argument(fmt::format("monotonicity needs at least 2 scores, got {}", scores.size()));
  }
  const double n = static_cast<double>(scores.size());
  const double mx = (n - 1.0) / 2.0;
  double my = 0.0;
  for (double s : scores) my += s;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double dx = static_cast<double>(i) - mx;
    const double dy = scores[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double policy_entropy(const PolicyParams& params, const TaskSpec& task, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const PolicyTables tables(params);
  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) trajs.push_back(sample_trajectory(tables, task, rng));
  double tokens = 0.0;
  const double total = token_entropy(tables, trajs, tokens);
  return total / tokens;
}

}  // namespace deltal
