#pragma once

// Loss-aggregation schemes expressed as weight rules over per-sample
// gradients: g_hat = sum_i x_i g_i.

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deltal/grad_vector.hpp"

namespace deltal {

struct Grpo {
  bool operator==(const Grpo&) const = default;
};
struct Dapo {
  bool operator==(const Dapo&) const = default;
};
struct DrGrpo {
  double M = 1.0;
  bool operator==(const DrGrpo&) const = default;
};
struct DeltaL {
  double alpha = 1.0;
  double M = 1.0;
  bool operator==(const DeltaL&) const = default;
};

using AggregationScheme = std::variant<Grpo, Dapo, DrGrpo, DeltaL>;

// "GRPO", "DAPO", "DrGRPO", "DeltaL".
std::string scheme_kind(const AggregationScheme& scheme);
// Human-readable label including parameters, e.g. "DeltaL(alpha=0.5)".
std::string scheme_label(const AggregationScheme& scheme);
// alpha for DeltaL; the equivalent alpha for the others (DrGRPO/DAPO 0, GRPO 1).
double scheme_alpha(const AggregationScheme& scheme);
bool is_unbiased(const AggregationScheme& scheme);

// Throws std::invalid_argument unless M > 0 and 0 <= alpha <= 1.
void validate(const AggregationScheme& scheme);

struct WeightVector {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  double sum() const;
  bool operator==(const WeightVector&) const = default;
};

// L^exponent for a positive integer length. Exact for exponent 0 and -1.
double length_power(int length, double exponent);

// GRPO: 1/(G L_i); DAPO: 1/sum L; DrGRPO: 1/(G M); DeltaL: (1/M) L_i^-a / sum L^-a.
// Throws InvalidLength on a length < 1 or an empty sequence.
WeightVector scheme_weights(const AggregationScheme& scheme, std::span<const int> lengths);

// Closed-form minimizer of sum L_i x_i^2 subject to sum x_i = 1/M.
WeightVector min_variance_weights(std::span<const int> lengths, double M);

// Index-ascending weighted sum. Weights are not checked for positivity here.
// Throws DimensionMismatch on count or dimension mismatch.
GradVector aggregate(std::span<const GradVector> grads, std::span<const double> weights);
GradVector aggregate(std::span<const GradVector> grads, const WeightVector& weights);

}  // namespace deltal
