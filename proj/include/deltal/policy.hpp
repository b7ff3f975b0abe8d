#pragma once

// Tabular autoregressive toy policy and its verifiable-reward task.
//
// Vocabulary: token 0 is STOP, content token k in [1, vocab_size) carries the
// integer value k. The policy is a first-order chain: the logits row used for
// the next token is selected by the last emitted token (row 0 at the start).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deltal/random.hpp"

namespace deltal {

inline constexpr int kStopToken = 0;

class PolicyParams {
 public:
  // All-zero logits, i.e. the uniform policy.
  PolicyParams(int num_states, int vocab_size);
  PolicyParams(int num_states, int vocab_size, std::vector<double> logits);

  int num_states() const { return num_states_; }
  int vocab_size() const { return vocab_size_; }
  std::size_t size() const { return logits_.size(); }

  std::size_t index(int state, int token) const {
    return static_cast<std::size_t>(state) * static_cast<std::size_t>(vocab_size_) +
           static_cast<std::size_t>(token);
  }
  double logit(int state, int token) const { return logits_[index(state, token)]; }
  double& logit(int state, int token) { return logits_[index(state, token)]; }

  std::span<const double> row(int state) const;
  std::span<const double> values() const { return logits_; }
  std::span<double> values() { return logits_; }

  // Row selected after emitting `token`.
  int state_after(int token) const { return token % num_states_; }

  // Throws std::invalid_argument on non-finite entries or bad shape.
  void validate() const;

  bool operator==(const PolicyParams&) const = default;

 private:
  int num_states_;
  int vocab_size_;
  std::vector<double> logits_;
};

// Success iff the sum of content-token values equals `target`; when modulus > 0
// the comparison is done modulo `modulus`.
struct SumEqualsTarget {
  int modulus = 0;
  bool operator==(const SumEqualsTarget&) const = default;
};

// Success iff the trajectory length is even (or odd when even == false).
struct ParityOfLength {
  bool even = true;
  bool operator==(const ParityOfLength&) const = default;
};

using RewardRule = std::variant<SumEqualsTarget, ParityOfLength>;

struct TaskSpec {
  int vocab_size = 10;
  int max_len = 16;
  int target = 1;
  RewardRule reward_rule = SumEqualsTarget{2};

  // Throws std::invalid_argument.
  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

// Digits 1..9 plus STOP, responses up to 16 tokens, reward for an odd digit sum.
TaskSpec default_task();

std::string describe(const RewardRule& rule);

struct Trajectory {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // log pi(token_t | state_t) under the sampling params
  int reward = 0;
  bool truncated = false;  // max_len reached without STOP

  int length() const { return static_cast<int>(tokens.size()); }
  double total_logprob() const;
};

// Per-state softmax tables for one parameter setting.
class PolicyTables {
 public:
  explicit PolicyTables(const PolicyParams& params);

  int num_states() const { return num_states_; }
  int vocab_size() const { return vocab_size_; }
  int state_after(int token) const { return token % num_states_; }

  std::span<const double> probs(int state) const;
  std::span<const double> logprobs(int state) const;
  double logprob(int state, int token) const {
    return logprobs_[static_cast<std::size_t>(state * vocab_size_ + token)];
  }
  // Entropy of the next-token distribution in `state`.
  double entropy(int state) const { return entropies_[static_cast<std::size_t>(state)]; }

  // Inverse-CDF draw from the row of `state`.
  int draw(int state, Rng& rng) const;

 private:
  int num_states_;
  int vocab_size_;
  std::vector<double> probs_;
  std::vector<double> logprobs_;
  std::vector<double> cdf_;
  std::vector<double> entropies_;
};

// Numerically stable log-softmax of one logits row.
std::vector<double> log_softmax(std::span<const double> logits);

int reward(const TaskSpec& task, std::span<const int> tokens);

// Samples one response. The reward and per-token log-probs are filled in.
Trajectory sample_trajectory(const PolicyTables& tables, const TaskSpec& task, Rng& rng);
Trajectory sample_trajectory(const PolicyParams& params, const TaskSpec& task, Rng& rng);

// Sum of log pi(o_t | s_t) of `tokens` under `tables`, recomputed from scratch.
double sequence_logprob(const PolicyTables& tables, std::span<const int> tokens);

// Exact E[r] by a forward pass over (state, running sum) occupancies. Works for
// any instance size; the enumeration routines are the independent check.
double expected_reward(const PolicyParams& params, const TaskSpec& task);

// Exact distribution of the response length: entry L-1 is P(length == L).
std::vector<double> length_distribution(const PolicyParams& params, const TaskSpec& task);

}  // namespace deltal
