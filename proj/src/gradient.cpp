#include "deltal/gradient.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "deltal/errors.hpp"

namespace deltal {

const char* to_string(AdvantageMode mode) {
  return mode == AdvantageMode::MeanStd ? "MeanStd" : "MeanOnly";
}

void ClipConfig::validate() const {
  if (!enabled) return;
  if (!(eps_low > 0.0 && eps_low <= eps_high && eps_high < 1.0)) {
    throw std::invalid_argument(
        fmt::format("clip ratios must satisfy 0 < eps_low <= eps_high < 1 (got {}, {})", eps_low,
                    eps_high));
  }
}

Advantages compute_advantages(std::span<const double> rewards, AdvantageMode mode) {
  if (rewards.size() < 2) {
    throw GroupTooSmall(fmt::format("advantages need a group of at least 2, got {}", rewards.size()));
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;

  Advantages out;
  out.values.resize(rewards.size());
  bool all_equal = true;
  for (double r : rewards) all_equal = all_equal && r == rewards.front();

  if (all_equal) {
    out.degenerate = true;
    return out;  // zeros
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) out.values[i] = rewards[i] - mean;
  if (mode == AdvantageMode::MeanStd) {
    double ss = 0.0;
    for (double a : out.values) ss += a * a;
    const double std = std::sqrt(ss / n);
    if (std == 0.0) {
      std::fill(out.values.begin(), out.values.end(), 0.0);
      out.degenerate = true;
      return out;
    }
    for (double& a : out.values) a /= std;
  }
  return out;
}

std::vector<int> RolloutGroup::lengths() const {
  std::vector<int> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) out.push_back(t.length());
  return out;
}

RolloutGroup make_group(int prompt_id, std::vector<Trajectory> trajectories, AdvantageMode mode) {
  std::vector<double> rewards;
  rewards.reserve(trajectories.size());
  for (const auto& t : trajectories) rewards.push_back(static_cast<double>(t.reward));
  auto adv = compute_advantages(rewards, mode);
  RolloutGroup group;
  group.prompt_id = prompt_id;
  group.trajectories = std::move(trajectories);
  group.advantages = std::move(adv.values);
  group.degenerate = adv.degenerate;
  return group;
}

namespace {

void check_trajectory(const PolicyTables& tables, const Trajectory& traj, bool need_logprobs) {
  if (traj.tokens.empty()) throw DimensionMismatch("trajectory has no tokens");
  for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
    const int token = traj.tokens[t];
    if (token < 0 || token >= tables.vocab_size()) {
      throw DimensionMismatch(
          fmt::format("token {} at position {} outside vocab of {}", token, t, tables.vocab_size()));
    }
    if (token == kStopToken && t + 1 != traj.tokens.size()) {
      throw DimensionMismatch(fmt::format("STOP at position {} is not the last token", t));
    }
  }
  if (need_logprobs && traj.logprobs.size() != traj.tokens.size()) {
    throw DimensionMismatch(fmt::format("trajectory has {} tokens but {} old log-probs",
                                        traj.tokens.size(), traj.logprobs.size()));
  }
}

// grad += coeff * (e_token - pi(. | state)) in the row of `state`.
void add_token_score(const PolicyTables& tables, int state, int token, double coeff,
                     GradVector& grad) {
  const auto p = tables.probs(state);
  const auto base = static_cast<std::size_t>(state * tables.vocab_size());
  for (std::size_t j = 0; j < p.size(); ++j) grad[base + j] -= coeff * p[j];
  grad[base + static_cast<std::size_t>(token)] += coeff;
}

}  // namespace

GradVector score_function(const PolicyTables& tables, const Trajectory& traj) {
  check_trajectory(tables, traj, false);
  GradVector grad(static_cast<std::size_t>(tables.num_states() * tables.vocab_size()));
  int state = 0;
  for (int token : traj.tokens) {
    add_token_score(tables, state, token, 1.0, grad);
    state = tables.state_after(token);
  }
  return grad;
}

GradVector sample_gradient(const PolicyTables& tables, const Trajectory& traj, double advantage,
                           const ClipConfig& clip) {
  if (!std::isfinite(advantage)) throw std::invalid_argument("advantage must be finite");
  if (!clip.enabled) {
    GradVector grad = score_function(tables, traj);
    grad *= advantage;
    return grad;
  }
  clip.validate();
  check_trajectory(tables, traj, true);
  GradVector grad(static_cast<std::size_t>(tables.num_states() * tables.vocab_size()));
  int state = 0;
  for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
    const int token = traj.tokens[t];
    const double ratio = std::exp(tables.logprob(state, token) - traj.logprobs[t]);
    const bool clipped = (advantage > 0.0 && ratio > 1.0 + clip.eps_high) ||
                         (advantage < 0.0 && ratio < 1.0 - clip.eps_low);
    // d r_t / d theta = r_t * grad log pi(o_t | s_t)
    if (!clipped) add_token_score(tables, state, token, ratio, grad);
    state = tables.state_after(token);
  }
  grad *= advantage;
  return grad;
}

GradVector sample_gradient(const PolicyParams& params, const Trajectory& traj, double advantage,
                           const ClipConfig& clip) {
  return sample_gradient(PolicyTables(params), traj, advantage, clip);
}

std::vector<GradVector> group_gradients(const PolicyParams& params, const RolloutGroup& group,
                                        const ClipConfig& clip) {
  if (group.advantages.size() != group.trajectories.size()) {
    throw DimensionMismatch(fmt::format("group has {} trajectories but {} advantages",
                                        group.trajectories.size(), group.advantages.size()));
  }
  const PolicyTables tables(params);
  std::vector<GradVector> out;
  out.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    out.push_back(sample_gradient(tables, group.trajectories[i], group.advantages[i], clip));
  }
  return out;
}

}  // namespace deltal
