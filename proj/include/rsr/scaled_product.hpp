#pragma once

#include <cmath>

#include "rsr/linalg.hpp"

namespace rsr {

/// Running matrix product kept as exp(log_scale) * unit with
/// ||unit||_F = 1, renormalized after every factor so that products of
/// length 10^6 neither overflow nor underflow.
class ScaledProduct {
 public:
  explicit ScaledProduct(int d)
      : unit_(ComplexMatrix::Identity(d, d) / std::sqrt(static_cast<double>(d))),
        log_scale_(0.5 * std::log(static_cast<double>(d))) {}

  /// this <- this * a (factors accumulate left to right).
  void multiply(const ComplexMatrix& a) {
    if (zero_) return;
    unit_ = (unit_ * a).eval();
    const double s = unit_.norm();
    if (!(s > 0.0) || !std::isfinite(s)) {
      zero_ = true;
      log_scale_ = -INFINITY;
      unit_.setZero();
      return;
    }
    unit_ /= s;
    log_scale_ += std::log(s);
  }

  const ComplexMatrix& unit() const { return unit_; }
  double log_scale() const { return log_scale_; }
  bool is_zero() const { return zero_; }

  ComplexMatrix dense() const { return zero_ ? unit_ : (std::exp(log_scale_) * unit_).eval(); }

  /// log of the spectral radius of the represented product; -inf if zero.
  double log_spectral_radius() const {
    if (zero_) return -INFINITY;
    const double r = spectral_radius(unit_);
    return r > 0.0 ? log_scale_ + std::log(r) : -INFINITY;
  }

 private:
  ComplexMatrix unit_;
  double log_scale_;
  bool zero_ = false;
};

}  // namespace rsr
