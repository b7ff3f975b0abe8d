#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace deltal {

// Flat gradient over policy parameters, indexed like PolicyParams::values().
// All estimator arithmetic happens on this type.
class GradVector {
 public:
  GradVector() = default;
  explicit GradVector(std::size_t dim) : values_(dim, 0.0) {}
  explicit GradVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const { return values_.size(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  // this += a * x, index-ascending.
  void add_scaled(double a, const GradVector& x);

  GradVector& operator+=(const GradVector& x);
  GradVector& operator-=(const GradVector& x);
  GradVector& operator*=(double a);

  double dot(const GradVector& x) const;
  double squared_norm() const;
  double norm() const { return std::sqrt(squared_norm()); }
  bool all_finite() const;

  bool operator==(const GradVector&) const = default;

 private:
  std::vector<double> values_;
};

GradVector operator+(GradVector a, const GradVector& b);
GradVector operator-(GradVector a, const GradVector& b);
GradVector operator*(double a, GradVector x);

// Squared Euclidean distance without materializing the difference.
double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace deltal
