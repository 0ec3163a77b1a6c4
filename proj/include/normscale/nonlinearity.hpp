#pragma once

#include <cmath>

#include "normscale/errors.hpp"

namespace normscale {

/// Scalar activation with first and second derivatives.
/// relu is not twice differentiable; callers that need curvature must check
/// smooth() and reject it.
class Nonlinearity {
 public:
  enum class Tag { identity, relu, tanh, softplus };

  static Nonlinearity identity() { return Nonlinearity(Tag::identity); }
  static Nonlinearity relu() { return Nonlinearity(Tag::relu); }
  static Nonlinearity tanh() { return Nonlinearity(Tag::tanh); }
  static Nonlinearity softplus() { return Nonlinearity(Tag::softplus); }

  Tag tag() const { return tag_; }
  bool smooth() const { return tag_ != Tag::relu; }

  const char* name() const {
    switch (tag_) {
      case Tag::identity: return "identity";
      case Tag::relu: return "relu";
      case Tag::tanh: return "tanh";
      case Tag::softplus: return "softplus";
    }
    return "?";
  }

  double g(double z) const {
    switch (tag_) {
      case Tag::identity: return z;
      case Tag::relu: return z > 0.0 ? z : 0.0;
      case Tag::tanh: return std::tanh(z);
      case Tag::softplus: return softplus_value(z);
    }
    return 0.0;
  }

  double dg(double z) const {
    switch (tag_) {
      case Tag::identity: return 1.0;
      case Tag::relu: return z > 0.0 ? 1.0 : 0.0;  // dg(0) := 0
      case Tag::tanh: {
        const double t = std::tanh(z);
        return 1.0 - t * t;
      }
      case Tag::softplus: return sigmoid(z);
    }
    return 0.0;
  }

  double d2g(double z) const {
    switch (tag_) {
      case Tag::identity: return 0.0;
      case Tag::relu:
        throw unsupported_nonlinearity_error(
            "relu has no second derivative");
      case Tag::tanh: {
        const double t = std::tanh(z);
        return -2.0 * t * (1.0 - t * t);
      }
      case Tag::softplus: {
        const double s = sigmoid(z);
        return s * (1.0 - s);
      }
    }
    return 0.0;
  }

  static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  static double softplus_value(double z) {
    // log(1 + e^z) without overflow
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
  }

 private:
  explicit Nonlinearity(Tag t) : tag_(t) {}
  Tag tag_;
};

}  // namespace normscale
