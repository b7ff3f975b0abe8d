#pragma once

// Per-sample policy gradients g_i and group-relative advantages.

#include <span>
#include <vector>

#include "deltal/grad_vector.hpp"
#include "deltal/policy.hpp"

namespace deltal {

enum class AdvantageMode {
  MeanStd,   // (r - mean) / std, population std
  MeanOnly,  // r - mean
};

const char* to_string(AdvantageMode mode);

struct ClipConfig {
  bool enabled = false;
  double eps_low = 0.2;
  double eps_high = 0.3;

  // Throws std::invalid_argument unless 0 < eps_low <= eps_high < 1 (when enabled).
  void validate() const;
  bool operator==(const ClipConfig&) const = default;
};

struct Advantages {
  std::vector<double> values;
  bool degenerate = false;  // all rewards equal
};

// Throws GroupTooSmall for fewer than two rewards. A zero-variance group gets
// all-zero advantages and degenerate = true in either mode.
Advantages compute_advantages(std::span<const double> rewards, AdvantageMode mode);

struct RolloutGroup {
  int prompt_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;
  bool degenerate = false;

  std::size_t size() const { return trajectories.size(); }
  std::vector<int> lengths() const;
};

// Computes advantages from the trajectories' rewards.
RolloutGroup make_group(int prompt_id, std::vector<Trajectory> trajectories, AdvantageMode mode);

// Sum_t grad log pi(o_t | s_t) under `tables`, i.e. the sample gradient for a
// unit advantage without clipping.
GradVector score_function(const PolicyTables& tables, const Trajectory& traj);

// Unnormalized sample gradient. With clipping disabled this is
// A * sum_t grad log pi. With clipping enabled each token contributes
// A * grad r_t, r_t = pi/pi_old, unless the clipped constant branch of
// min(r A, clip(r, 1 - eps_low, 1 + eps_high) A) is active, in which case it
// contributes nothing. pi_old is taken from traj.logprobs.
GradVector sample_gradient(const PolicyTables& tables, const Trajectory& traj, double advantage,
                           const ClipConfig& clip);
GradVector sample_gradient(const PolicyParams& params, const Trajectory& traj, double advantage,
                           const ClipConfig& clip);

std::vector<GradVector> group_gradients(const PolicyParams& params, const RolloutGroup& group,
                                        const ClipConfig& clip);

}  // namespace deltal
