#include "deltal/grad_vector.hpp"

#include <cassert>

namespace deltal {

void GradVector::add_scaled(double a, const GradVector& x) {
  assert(x.dim() == dim());
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
}

GradVector& GradVector::operator+=(const GradVector& x) {
  assert(x.dim() == dim());
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += x.values_[i];
  return *this;
}

GradVector& GradVector::operator-=(const GradVector& x) {
  assert(x.dim() == dim());
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= x.values_[i];
  return *this;
}

GradVector& GradVector::operator*=(double a) {
  for (double& v : values_) v *= a;
  return *this;
}

double GradVector::dot(const GradVector& x) const {
  assert(x.dim() == dim());
  double s = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * x.values_[i];
  return s;
}

double GradVector::squared_norm() const { return dot(*this); }

bool GradVector::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

GradVector operator+(GradVector a, const GradVector& b) { return a += b; }
GradVector operator-(GradVector a, const GradVector& b) { return a -= b; }
GradVector operator*(double a, GradVector x) { return x *= a; }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace deltal
