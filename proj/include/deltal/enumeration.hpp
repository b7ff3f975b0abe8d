#pragma once

// Exhaustive enumeration of every response of a small instance. This is the
// ground truth for gradient bias: nothing here samples.

#include <cstdint>
#include <functional>
#include <span>

#include "deltal/gradient.hpp"
#include "deltal/policy.hpp"

namespace deltal {

inline constexpr std::uint64_t kMaxEnumeratedTrajectories = 10'000'000;

// Number of distinct responses (leaves of the generation tree), saturating at
// UINT64_MAX.
std::uint64_t count_trajectories(const TaskSpec& task);

struct EnumeratedTrajectory {
  std::span<const int> tokens;
  double probability = 0.0;
  int reward = 0;
  const GradVector* score = nullptr;  // sum_t grad log pi along the response
};

// Visits every response in lexicographic token order. Throws
// EnumerationTooLarge past kMaxEnumeratedTrajectories leaves.
void for_each_trajectory(const PolicyParams& params, const TaskSpec& task,
                         const std::function<void(const EnumeratedTrajectory&)>& visit);

double enumerate_expected_reward(const PolicyParams& params, const TaskSpec& task);

// sum_tau P(tau) * A(tau) * sum_t grad log pi, with A = r - E[r] (MeanOnly) or
// (r - E[r]) / std(r) (MeanStd, zero vector when std(r) == 0). Under MeanOnly
// this equals grad E[r].
GradVector enumerate_exact_gradient(const PolicyParams& params, const TaskSpec& task,
                                    AdvantageMode mode);

}  // namespace deltal
