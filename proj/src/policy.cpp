#include "deltal/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace deltal {

PolicyParams::PolicyParams(int num_states, int vocab_size)
    : PolicyParams(num_states, vocab_size,
                   std::vector<double>(static_cast<std::size_t>(std::max(num_states, 0)) *
                                           static_cast<std::size_t>(std::max(vocab_size, 0)),
                                       0.0)) {}

PolicyParams::PolicyParams(int num_states, int vocab_size, std::vector<double> logits)
    : num_states_(num_states), vocab_size_(vocab_size), logits_(std::move(logits)) {
  validate();
}

std::span<const double> PolicyParams::row(int state) const {
  return std::span<const double>(logits_).subspan(index(state, 0),
                                                  static_cast<std::size_t>(vocab_size_));
}

void PolicyParams::validate() const {
  if (num_states_ < 1) throw std::invalid_argument("policy needs at least one state");
  if (vocab_size_ < 2) throw std::invalid_argument("policy needs STOP plus one content token");
  if (logits_.size() != static_cast<std::size_t>(num_states_) * static_cast<std::size_t>(vocab_size_)) {
    throw std::invalid_argument(fmt::format("logit table has {} entries, expected {}x{}",
                                            logits_.size(), num_states_, vocab_size_));
  }
  for (double v : logits_) {
    if (!std::isfinite(v)) throw std::invalid_argument("policy logits must be finite");
  }
}

void TaskSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("task vocab_size must be >= 2");
  if (max_len < 1) throw std::invalid_argument("task max_len must be >= 1");
  if (const auto* sum = std::get_if<SumEqualsTarget>(&reward_rule); sum && sum->modulus < 0) {
    throw std::invalid_argument("SumEqualsTarget modulus must be >= 0");
  }
}

TaskSpec default_task() { return TaskSpec{}; }

std::string describe(const RewardRule& rule) {
  if (const auto* sum = std::get_if<SumEqualsTarget>(&rule)) {
    return sum->modulus > 0 ? fmt::format("SumEqualsTarget(mod {})", sum->modulus)
                            : std::string("SumEqualsTarget");
  }
  return std::get<ParityOfLength>(rule).even ? "ParityOfLength(even)" : "ParityOfLength(odd)";
}

double Trajectory::total_logprob() const {
  double s = 0.0;
  for (double lp : logprobs) s += lp;
  return s;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - hi);
  const double lse = hi + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
  return out;
}

PolicyTables::PolicyTables(const PolicyParams& params)
    : num_states_(params.num_states()), vocab_size_(params.vocab_size()) {
  const auto n = params.size();
  probs_.resize(n);
  logprobs_.resize(n);
  cdf_.resize(n);
  entropies_.resize(static_cast<std::size_t>(num_states_));
  for (int s = 0; s < num_states_; ++s) {
    const auto lp = log_softmax(params.row(s));
    double cum = 0.0;
    double h = 0.0;
    for (int j = 0; j < vocab_size_; ++j) {
      const auto k = params.index(s, j);
      logprobs_[k] = lp[static_cast<std::size_t>(j)];
      probs_[k] = std::exp(logprobs_[k]);
      cum += probs_[k];
      cdf_[k] = cum;
      if (probs_[k] > 0.0) h -= probs_[k] * logprobs_[k];
    }
    entropies_[static_cast<std::size_t>(s)] = std::max(h, 0.0);
  }
}

std::span<const double> PolicyTables::probs(int state) const {
  return std::span<const double>(probs_).subspan(static_cast<std::size_t>(state * vocab_size_),
                                                 static_cast<std::size_t>(vocab_size_));
}

std::span<const double> PolicyTables::logprobs(int state) const {
  return std::span<const double>(logprobs_).subspan(static_cast<std::size_t>(state * vocab_size_),
                                                    static_cast<std::size_t>(vocab_size_));
}

int PolicyTables::draw(int state, Rng& rng) const {
  const double u = uniform01(rng);
  const auto base = static_cast<std::size_t>(state * vocab_size_);
  int last_positive = 0;
  for (int j = 0; j < vocab_size_; ++j) {
    const double p = probs_[base + static_cast<std::size_t>(j)];
    if (p <= 0.0) continue;
    if (u < cdf_[base + static_cast<std::size_t>(j)]) return j;
    last_positive = j;
  }
  // u landed in the rounding gap above the final cumulative sum.
  return last_positive;
}

namespace {

bool sum_rewarded(long long sum, int target, int modulus) {
  if (modulus == 0) return sum == target;
  const long long r = ((sum - target) % modulus + modulus) % modulus;
  return r == 0;
}

}  // namespace

int reward(const TaskSpec& task, std::span<const int> tokens) {
  if (const auto* rule = std::get_if<SumEqualsTarget>(&task.reward_rule)) {
    long long sum = 0;
    for (int t : tokens) sum += t;  // STOP has value 0
    return sum_rewarded(sum, task.target, rule->modulus) ? 1 : 0;
  }
  const bool even = tokens.size() % 2 == 0;
  return even == std::get<ParityOfLength>(task.reward_rule).even ? 1 : 0;
}

Trajectory sample_trajectory(const PolicyTables& tables, const TaskSpec& task, Rng& rng) {
  Trajectory traj;
  traj.tokens.reserve(static_cast<std::size_t>(task.max_len));
  traj.logprobs.reserve(static_cast<std::size_t>(task.max_len));
  int state = 0;
  bool stopped = false;
  for (int t = 0; t < task.max_len; ++t) {
    const int token = tables.draw(state, rng);
    traj.tokens.push_back(token);
    traj.logprobs.push_back(tables.logprob(state, token));
    if (token == kStopToken) {
      stopped = true;
      break;
    }
    state = tables.state_after(token);
  }
  traj.truncated = !stopped;
  traj.reward = reward(task, traj.tokens);
  return traj;
}

Trajectory sample_trajectory(const PolicyParams& params, const TaskSpec& task, Rng& rng) {
  return sample_trajectory(PolicyTables(params), task, rng);
}

double sequence_logprob(const PolicyTables& tables, std::span<const int> tokens) {
  double s = 0.0;
  int state = 0;
  for (int token : tokens) {
    s += tables.logprob(state, token);
    state = tables.state_after(token);
  }
  return s;
}

namespace {

void check_compatible(const PolicyParams& params, const TaskSpec& task) {
  task.validate();
  if (params.vocab_size() != task.vocab_size) {
    throw std::invalid_argument(fmt::format("policy vocab {} does not match task vocab {}",
                                            params.vocab_size(), task.vocab_size));
  }
}

}  // namespace

double expected_reward(const PolicyParams& params, const TaskSpec& task) {
  check_compatible(params, task);
  const PolicyTables tables(params);
  const int S = params.num_states();
  const int V = params.vocab_size();

  // The running-sum key is whatever the reward rule needs to know about the
  // prefix: sum mod m, the sum clamped just above the target, or nothing.
  int keys = 1;
  const auto* sum_rule = std::get_if<SumEqualsTarget>(&task.reward_rule);
  if (sum_rule && sum_rule->modulus > 0) keys = sum_rule->modulus;
  if (sum_rule && sum_rule->modulus == 0) keys = std::max(task.target, 0) + 2;
  const auto advance = [&](int key, int token) {
    if (!sum_rule) return 0;
    if (sum_rule->modulus > 0) return (key + token) % sum_rule->modulus;
    return std::min(key + token, keys - 1);
  };
  const auto rewarded = [&](int key, int length) {
    if (!sum_rule) return (length % 2 == 0) == std::get<ParityOfLength>(task.reward_rule).even;
    if (sum_rule->modulus > 0) return sum_rewarded(key, task.target, sum_rule->modulus);
    return key < keys - 1 && key == task.target;
  };

  std::vector<double> mass(static_cast<std::size_t>(S * keys), 0.0);
  std::vector<double> next(mass.size());
  mass[0] = 1.0;
  double total = 0.0;
  for (int t = 1; t <= task.max_len; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      for (int k = 0; k < keys; ++k) {
        const double m = mass[static_cast<std::size_t>(s * keys + k)];
        if (m == 0.0) continue;
        const auto p = tables.probs(s);
        if (rewarded(k, t)) total += m * p[kStopToken];
        for (int a = 1; a < V; ++a) {
          const double q = m * p[static_cast<std::size_t>(a)];
          const int k2 = advance(k, a);
          if (t == task.max_len) {
            if (rewarded(k2, t)) total += q;
          } else {
            next[static_cast<std::size_t>(tables.state_after(a) * keys + k2)] += q;
          }
        }
      }
    }
    mass.swap(next);
  }
  return total;
}

std::vector<double> length_distribution(const PolicyParams& params, const TaskSpec& task) {
  check_compatible(params, task);
  const PolicyTables tables(params);
  const int S = params.num_states();
  std::vector<double> mass(static_cast<std::size_t>(S), 0.0);
  std::vector<double> next(mass.size());
  std::vector<double> dist(static_cast<std::size_t>(task.max_len), 0.0);
  mass[0] = 1.0;
  for (int t = 1; t <= task.max_len; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    double ends = 0.0;
    for (int s = 0; s < S; ++s) {
      const double m = mass[static_cast<std::size_t>(s)];
      if (m == 0.0) continue;
      const auto p = tables.probs(s);
      ends += m * p[kStopToken];
      for (int a = 1; a < params.vocab_size(); ++a) {
        const double q = m * p[static_cast<std::size_t>(a)];
        if (t == task.max_len) {
          ends += q;
        } else {
          next[static_cast<std::size_t>(tables.state_after(a))] += q;
        }
      }
    }
    dist[static_cast<std::size_t>(t - 1)] = ends;
    mass.swap(next);
  }
  return dist;
}

}  // namespace deltal
