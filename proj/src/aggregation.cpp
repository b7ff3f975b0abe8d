#include "deltal/aggregation.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "deltal/errors.hpp"

namespace deltal {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_lengths(std::span<const int> lengths) {
  if (lengths.empty()) throw InvalidLength("no lengths given");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) {
      throw InvalidLength(fmt::format("length {} at index {} is < 1", lengths[i], i));
    }
  }
}

WeightVector normalized(std::vector<double> w, double M) {
  double total = 0.0;
  for (double v : w) total += v;
  const double denom = M * total;
  for (double& v : w) v /= denom;
  return WeightVector{std::move(w)};
}

}  // namespace

std::string scheme_kind(const AggregationScheme& scheme) {
  return std::visit(overloaded{[](const Grpo&) { return std::string("GRPO"); },
                               [](const Dapo&) { return std::string("DAPO"); },
                               [](const DrGrpo&) { return std::string("DrGRPO"); },
                               [](const DeltaL&) { return std::string("DeltaL"); }},
                    scheme);
}

std::string scheme_label(const AggregationScheme& scheme) {
  if (const auto* d = std::get_if<DeltaL>(&scheme)) return fmt::format("DeltaL(alpha={})", d->alpha);
  return scheme_kind(scheme);
}

double scheme_alpha(const AggregationScheme& scheme) {
  return std::visit(overloaded{[](const Grpo&) { return 1.0; }, [](const Dapo&) { return 0.0; },
                               [](const DrGrpo&) { return 0.0; },
                               [](const DeltaL& d) { return d.alpha; }},
                    scheme);
}

bool is_unbiased(const AggregationScheme& scheme) {
  return std::holds_alternative<DrGrpo>(scheme) || std::holds_alternative<DeltaL>(scheme);
}

void validate(const AggregationScheme& scheme) {
  std::visit(overloaded{[](const Grpo&) {}, [](const Dapo&) {},
                        [](const DrGrpo& d) {
                          if (!(d.M > 0.0) || !std::isfinite(d.M))
                            throw std::invalid_argument("DrGRPO requires M > 0");
                        },
                        [](const DeltaL& d) {
                          if (!(d.M > 0.0) || !std::isfinite(d.M))
                            throw std::invalid_argument("DeltaL requires M > 0");
                          if (!(d.alpha >= 0.0 && d.alpha <= 1.0))
                            throw std::invalid_argument(
                                fmt::format("DeltaL requires alpha in [0, 1], got {}", d.alpha));
                        }},
             scheme);
}

double WeightVector::sum() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

double length_power(int length, double exponent) {
  if (exponent == 0.0) return 1.0;
  if (exponent == -1.0) return 1.0 / static_cast<double>(length);
  if (exponent == 1.0) return static_cast<double>(length);
  return std::exp(exponent * std::log(static_cast<double>(length)));
}

WeightVector scheme_weights(const AggregationScheme& scheme, std::span<const int> lengths) {
  check_lengths(lengths);
  validate(scheme);
  const double G = static_cast<double>(lengths.size());
  std::vector<double> x(lengths.size());
  return std::visit(
      overloaded{[&](const Grpo&) {
                   for (std::size_t i = 0; i < x.size(); ++i)
                     x[i] = 1.0 / (G * static_cast<double>(lengths[i]));
                   return WeightVector{std::move(x)};
                 },
                 [&](const Dapo&) {
                   long long total = 0;
                   for (int L : lengths) total += L;
                   std::fill(x.begin(), x.end(), 1.0 / static_cast<double>(total));
                   return WeightVector{std::move(x)};
                 },
                 [&](const DrGrpo& d) {
                   std::fill(x.begin(), x.end(), 1.0 / (G * d.M));
                   return WeightVector{std::move(x)};
                 },
                 [&](const DeltaL& d) {
                   for (std::size_t i = 0; i < x.size(); ++i) x[i] = length_power(lengths[i], -d.alpha);
                   return normalized(std::move(x), d.M);
                 }},
      scheme);
}

WeightVector min_variance_weights(std::span<const int> lengths, double M) {
  check_lengths(lengths);
  if (!(M > 0.0)) throw std::invalid_argument("min_variance_weights requires M > 0");
  std::vector<double> x(lengths.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 1.0 / static_cast<double>(lengths[i]);
  return normalized(std::move(x), M);
}

GradVector aggregate(std::span<const GradVector> grads, std::span<const double> weights) {
  if (grads.size() != weights.size()) {
    throw DimensionMismatch(
        fmt::format("{} gradients but {} weights", grads.size(), weights.size()));
  }
  if (grads.empty()) throw DimensionMismatch("nothing to aggregate");
  GradVector out(grads.front().dim());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].dim() != out.dim()) {
      throw DimensionMismatch(fmt::format("gradient {} has dimension {}, expected {}", i,
                                          grads[i].dim(), out.dim()));
    }
    out.add_scaled(weights[i], grads[i]);
  }
  return out;
}

GradVector aggregate(std::span<const GradVector> grads, const WeightVector& weights) {
  return aggregate(grads, std::span<const double>(weights.weights));
}

}  // namespace deltal
