#include "deltal/enumeration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "deltal/errors.hpp"

namespace deltal {

namespace {

constexpr std::uint64_t kSaturated = std::numeric_limits<std::uint64_t>::max();

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > kSaturated / a) return kSaturated;
  return a * b;
}

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) {
  return a > kSaturated - b ? kSaturated : a + b;
}

}  // namespace

std::uint64_t count_trajectories(const TaskSpec& task) {
  task.validate();
  const auto content = static_cast<std::uint64_t>(task.vocab_size - 1);
  // Responses that stop at position k < max_len, then every response that
  // reaches max_len (stopping there or truncated).
  std::uint64_t total = 0;
  std::uint64_t prefixes = 1;  // content^(k-1)
  for (int k = 1; k < task.max_len; ++k) {
    total = sat_add(total, prefixes);
    prefixes = sat_mul(prefixes, content);
  }
  return sat_add(total, sat_mul(prefixes, static_cast<std::uint64_t>(task.vocab_size)));
}

void for_each_trajectory(const PolicyParams& params, const TaskSpec& task,
                         const std::function<void(const EnumeratedTrajectory&)>& visit) {
  if (params.vocab_size() != task.vocab_size) {
    throw DimensionMismatch(fmt::format("policy vocab {} does not match task vocab {}",
                                        params.vocab_size(), task.vocab_size));
  }
  const std::uint64_t leaves = count_trajectories(task);
  if (leaves > kMaxEnumeratedTrajectories) {
    throw EnumerationTooLarge(fmt::format("instance has {} responses, enumeration limit is {}",
                                          leaves == kSaturated ? std::string("> 2^64")
                                                               : std::to_string(leaves),
                                          kMaxEnumeratedTrajectories));
  }

  const PolicyTables tables(params);
  const auto L = static_cast<std::size_t>(task.max_len);
  const auto V = params.vocab_size();
  const auto dim = params.size();

  // Depth-indexed stacks; level d holds the prefix state after d tokens.
  std::vector<int> tokens(L);
  std::vector<int> next_token(L + 1, 0);
  std::vector<int> states(L + 1, 0);
  std::vector<double> probs(L + 1, 1.0);
  std::vector<GradVector> scores(L + 1, GradVector(dim));

  EnumeratedTrajectory leaf;
  std::size_t depth = 0;
  while (true) {
    if (next_token[depth] >= V) {
      if (depth == 0) break;
      --depth;
      continue;
    }
    const int token = next_token[depth]++;
    const int state = states[depth];
    const auto p = tables.probs(state);
    tokens[depth] = token;

    GradVector& score = scores[depth + 1];
    score = scores[depth];
    const auto base = static_cast<std::size_t>(state * V);
    for (std::size_t j = 0; j < p.size(); ++j) score[base + j] -= p[j];
    score[base + static_cast<std::size_t>(token)] += 1.0;
    probs[depth + 1] = probs[depth] * p[static_cast<std::size_t>(token)];

    if (token == kStopToken || depth + 1 == L) {
      const std::span<const int> seq(tokens.data(), depth + 1);
      leaf.tokens = seq;
      leaf.probability = probs[depth + 1];
      leaf.reward = reward(task, seq);
      leaf.score = &score;
      visit(leaf);
      continue;
    }
    ++depth;
    states[depth] = tables.state_after(token);
    next_token[depth] = 0;
  }
}

double enumerate_expected_reward(const PolicyParams& params, const TaskSpec& task) {
  double total = 0.0;
  for_each_trajectory(params, task, [&](const EnumeratedTrajectory& t) {
    total += t.probability * t.reward;
  });
  return total;
}

GradVector enumerate_exact_gradient(const PolicyParams& params, const TaskSpec& task,
                                    AdvantageMode mode) {
  const double mean = enumerate_expected_reward(params, task);
  double scale = 1.0;
  if (mode == AdvantageMode::MeanStd) {
    // Binary reward: Var(r) = p (1 - p).
    const double std = std::sqrt(std::max(mean * (1.0 - mean), 0.0));
    if (std == 0.0) return GradVector(params.size());
    scale = 1.0 / std;
  }
  GradVector grad(params.size());
  for_each_trajectory(params, task, [&](const EnumeratedTrajectory& t) {
    const double adv = (t.reward - mean) * scale;
    grad.add_scaled(t.probability * adv, *t.score);
  });
  return grad;
}

}  // namespace deltal
