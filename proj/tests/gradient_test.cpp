#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "deltal/enumeration.hpp"
#include "deltal/errors.hpp"
#include "deltal/gradient.hpp"
#include "test_support.hpp"

namespace deltal {
namespace {

TaskSpec task_for(int vocab, int max_len) {
  TaskSpec t;
  t.vocab_size = vocab;
  t.max_len = max_len;
  t.target = 3;
  t.reward_rule = SumEqualsTarget{};
  return t;
}

TEST(ComputeAdvantages, StandardizedExample) {
  const std::vector<double> r = {1, 0, 0, 1};
  const auto adv = compute_advantages(r, AdvantageMode::MeanStd);
  EXPECT_FALSE(adv.degenerate);
  const std::vector<double> expected = {1, -1, -1, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(adv.values[i], expected[i]);
}

TEST(ComputeAdvantages, DegenerateGroupIsFlagged) {
  const std::vector<double> r = {1, 1, 1};
  for (auto mode : {AdvantageMode::MeanStd, AdvantageMode::MeanOnly}) {
    const auto adv = compute_advantages(r, mode);
    EXPECT_TRUE(adv.degenerate);
    EXPECT_EQ(adv.values, std::vector<double>(3, 0.0));
  }
}

TEST(ComputeAdvantages, MeanOnlyCenters) {
  const std::vector<double> r = {1, 0};
  const auto adv = compute_advantages(r, AdvantageMode::MeanOnly);
  EXPECT_EQ(adv.values, (std::vector<double>{0.5, -0.5}));
  EXPECT_FALSE(adv.degenerate);
}

TEST(ComputeAdvantages, RejectsSingletons) {
  const std::vector<double> r = {1};
  EXPECT_THROW(compute_advantages(r, AdvantageMode::MeanOnly), GroupTooSmall);
  EXPECT_THROW(compute_advantages({}, AdvantageMode::MeanStd), GroupTooSmall);
}

TEST(ComputeAdvantages, StandardizedMomentsOnRandomGroups) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> size(2, 64);
  std::bernoulli_distribution coin(0.3);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(size(gen)));
    const bool binary = trial % 2 == 0;
    for (double& v : r) v = binary ? (coin(gen) ? 1.0 : 0.0) : normal(gen);
    const auto std_adv = compute_advantages(r, AdvantageMode::MeanStd);
    const auto centered = compute_advantages(r, AdvantageMode::MeanOnly);
    const bool all_equal = std::all_of(r.begin(), r.end(), [&](double v) { return v == r[0]; });
    ASSERT_EQ(std_adv.degenerate, all_equal);
    ASSERT_EQ(centered.degenerate, all_equal);
    if (all_equal) continue;
    const double n = static_cast<double>(r.size());
    const double mean = std::accumulate(std_adv.values.begin(), std_adv.values.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : std_adv.values) ss += (a - mean) * (a - mean);
    EXPECT_LT(std::abs(mean), 1e-10);
    EXPECT_LT(std::abs(std::sqrt(ss / n) - 1.0), 1e-10);
    const double cmean = std::accumulate(centered.values.begin(), centered.values.end(), 0.0) / n;
    EXPECT_LT(std::abs(cmean), 1e-10);
  }
}

TEST(SampleGradient, ZeroAdvantageGivesZeroVector) {
  std::mt19937_64 gen(2);
  const auto params = testing::random_params(5, 5, gen);
  Rng rng(3);
  const auto traj = sample_trajectory(params, task_for(5, 6), rng);
  for (bool clip : {false, true}) {
    const auto g = sample_gradient(params, traj, 0.0, ClipConfig{clip, 0.2, 0.3});
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(SampleGradient, OnPolicyClippingIsIdentity) {
  std::mt19937_64 gen(4);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto params = testing::random_params(6, 6, gen, 2.0);
    const auto traj = sample_trajectory(params, task_for(6, 8), rng);
    const double adv = trial % 2 ? 1.7 : -0.6;
    const auto plain = sample_gradient(params, traj, adv, ClipConfig{});
    const auto clipped = sample_gradient(params, traj, adv, ClipConfig{true, 0.2, 0.3});
    EXPECT_EQ(plain, clipped);
  }
}

TEST(SampleGradient, TwoTokenSoftmaxClosedForm) {
  const double a = 0.3, b = -1.1, adv = 1.25;
  const PolicyParams params(1, 2, {a, b});
  Trajectory traj;
  traj.tokens = {kStopToken};
  traj.logprobs = {testing::ref_log_prob(params, 0, 0)};
  const double p = std::exp(a) / (std::exp(a) + std::exp(b));
  const auto g = sample_gradient(params, traj, adv, ClipConfig{});
  EXPECT_NEAR(g[0], adv * (1.0 - p), 1e-15);
  // d/db log p0 = -p1 = -(1 - p0)
  EXPECT_NEAR(g[1], adv * (p - 1.0), 1e-15);
  const auto fd = testing::central_difference(params, [&](const PolicyParams& q) {
    return adv * testing::ref_log_prob(q, 0, 0);
  });
  EXPECT_NEAR(g[0], fd[0], 1e-6);
  EXPECT_NEAR(g[1], fd[1], 1e-6);
}

TEST(SampleGradient, MatchesFiniteDifferencesOnRandomTriples) {
  std::mt19937_64 gen(6);
  std::uniform_int_distribution<int> vocab(2, 6);
  std::uniform_int_distribution<int> len(1, 10);
  std::normal_distribution<double> normal(0.0, 1.0);
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int v = vocab(gen);
    const int states = trial % 3 == 0 ? 1 : v;
    const auto params = testing::random_params(states, v, gen, 1.5);
    const auto traj = sample_trajectory(params, task_for(v, len(gen)), rng);
    const double adv = normal(gen);
    const auto g = sample_gradient(params, traj, adv, ClipConfig{});
    const auto fd = testing::central_difference(params, [&](const PolicyParams& q) {
      return adv * testing::ref_sequence_log_prob(q, traj.tokens);
    });
    for (std::size_t k = 0; k < fd.size(); ++k) ASSERT_NEAR(g[k], fd[k], 1e-6) << trial << ":" << k;
  }
}

// Oracle for the clipped case: differentiate the surrogate
// sum_t min(r_t A, clip(r_t) A) numerically. Old log-probs are perturbed so
// that tokens land on both branches, away from the kinks.
TEST(SampleGradient, ClippedMatchesFiniteDifferencesOfSurrogate) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> shift(-0.6, 0.6);
  const ClipConfig clip{true, 0.2, 0.3};
  Rng rng(9);
  int clipped_tokens = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto params = testing::random_params(4, 4, gen);
    auto traj = sample_trajectory(params, task_for(4, 8), rng);
    for (double& lp : traj.logprobs) {
      double delta = shift(gen);
      const double r = std::exp(-delta);
      if (std::abs(r - 0.8) < 1e-3 || std::abs(r - 1.3) < 1e-3) delta += 0.01;
      lp += delta;
    }
    const double adv = trial % 2 ? 0.9 : -1.4;
    const auto surrogate = [&](const PolicyParams& q) {
      double s = 0.0;
      int state = 0;
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const int token = traj.tokens[t];
        const double r = std::exp(testing::ref_log_prob(q, state, token) - traj.logprobs[t]);
        s += std::min(r * adv, std::clamp(r, 1.0 - clip.eps_low, 1.0 + clip.eps_high) * adv);
        state = token % q.num_states();
      }
      return s;
    };
    {
      int state = 0;
      for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
        const double r = std::exp(testing::ref_log_prob(params, state, traj.tokens[t]) - traj.logprobs[t]);
        if ((adv > 0 && r > 1.3) || (adv < 0 && r < 0.8)) ++clipped_tokens;
        state = traj.tokens[t] % params.num_states();
      }
    }
    const auto g = sample_gradient(params, traj, adv, clip);
    const auto fd = testing::central_difference(params, surrogate, 1e-6);
    for (std::size_t k = 0; k < fd.size(); ++k) ASSERT_NEAR(g[k], fd[k], 1e-6) << trial << ":" << k;
  }
  EXPECT_GT(clipped_tokens, 10);  // both branches exercised
}

TEST(SampleGradient, LinearInAdvantage) {
  std::mt19937_64 gen(10);
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto params = testing::random_params(5, 5, gen);
    const auto traj = sample_trajectory(params, task_for(5, 7), rng);
    const auto base = sample_gradient(params, traj, 0.37, ClipConfig{});
    for (double c : {2.0, -0.5, 8.0}) {
      EXPECT_EQ(sample_gradient(params, traj, c * 0.37, ClipConfig{}), c * base);
    }
    const double c = -1.9;
    const auto scaled = sample_gradient(params, traj, c * 0.37, ClipConfig{});
    for (std::size_t k = 0; k < base.dim(); ++k) EXPECT_NEAR(scaled[k], c * base[k], 1e-15);
  }
}

TEST(SampleGradient, RejectsInconsistentTrajectories) {
  const PolicyParams params(3, 3);
  Trajectory traj;
  traj.tokens = {1, 5, kStopToken};
  traj.logprobs = {-1, -1, -1};
  EXPECT_THROW(sample_gradient(params, traj, 1.0, ClipConfig{}), DimensionMismatch);
  traj.tokens = {1, kStopToken, 2};
  EXPECT_THROW(sample_gradient(params, traj, 1.0, ClipConfig{}), DimensionMismatch);
  traj.tokens = {1, 2};
  traj.logprobs = {-1};
  EXPECT_THROW(sample_gradient(params, traj, 1.0, ClipConfig{true, 0.2, 0.3}), DimensionMismatch);
}

TEST(SampleGradient, UnbiasedWithExactBaseline) {
  std::mt19937_64 gen(12);
  const auto params = testing::random_params(3, 3, gen);
  const auto task = task_for(3, 5);
  const auto exact = enumerate_exact_gradient(params, task, AdvantageMode::MeanOnly);
  const double baseline = enumerate_expected_reward(params, task);
  const PolicyTables tables(params);

  constexpr int n = 100000;
  std::vector<double> sum(exact.dim(), 0.0), sumsq(exact.dim(), 0.0);
  Rng rng(13);
  for (int i = 0; i < n; ++i) {
    const auto traj = sample_trajectory(tables, task, rng);
    const auto g = sample_gradient(tables, traj, traj.reward - baseline, ClipConfig{});
    for (std::size_t k = 0; k < g.dim(); ++k) {
      sum[k] += g[k];
      sumsq[k] += g[k] * g[k];
    }
  }
  for (std::size_t k = 0; k < exact.dim(); ++k) {
    const double mean = sum[k] / n;
    const double se = std::sqrt((sumsq[k] / n - mean * mean) / n);
    EXPECT_NEAR(mean, exact[k], 4.0 * se) << k;
  }
}

RolloutGroup sample_group(const PolicyParams& params, const TaskSpec& task, int g, Rng& rng) {
  std::vector<Trajectory> trajs;
  for (int i = 0; i < g; ++i) trajs.push_back(sample_trajectory(params, task, rng));
  return make_group(0, std::move(trajs), AdvantageMode::MeanStd);
}

TEST(GroupGradients, DegenerateGroupGivesZeros) {
  PolicyParams params(3, 3);
  for (int s = 0; s < 3; ++s) params.logit(s, kStopToken) = 50.0;
  const auto task = task_for(3, 4);  // target 3 unreachable with STOP-only responses
  Rng rng(14);
  const auto group = sample_group(params, task, 6, rng);
  ASSERT_TRUE(group.degenerate);
  for (const auto& g : group_gradients(params, group, ClipConfig{})) {
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(GroupGradients, MatchesIndividualCallsAndPermutes) {
  std::mt19937_64 gen(15);
  const auto params = testing::random_params(4, 4, gen);
  auto task = task_for(4, 6);
  task.reward_rule = SumEqualsTarget{2};
  Rng rng(16);
  RolloutGroup group;
  do {
    group = sample_group(params, task, 5, rng);
  } while (group.degenerate);
  const ClipConfig clip{true, 0.2, 0.3};
  const auto grads = group_gradients(params, group, clip);
  ASSERT_EQ(grads.size(), 5U);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    EXPECT_EQ(grads[i], sample_gradient(params, group.trajectories[i], group.advantages[i], clip));
  }
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  RolloutGroup permuted = group;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    permuted.trajectories[i] = group.trajectories[perm[i]];
    permuted.advantages[i] = group.advantages[perm[i]];
  }
  const auto pgrads = group_gradients(params, permuted, clip);
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(pgrads[i], grads[perm[i]]);
}

}  // namespace
}  // namespace deltal
