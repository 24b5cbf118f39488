#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "can/numerics/tensor.hpp"

namespace can::num {

enum class Activation { Identity, SeLU, Tanh, Sigmoid };

inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

inline double activate_scalar(Activation kind, double x) {
  switch (kind) {
    case Activation::Identity:
      return x;
    case Activation::SeLU:
      return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return x;
}

// Derivative expressed through the pre-activation x and the output y.
inline double activate_derivative(Activation kind, double x, double y) {
  switch (kind) {
    case Activation::Identity:
      return 1.0;
    case Activation::SeLU:
      return x > 0.0 ? kSeluLambda : y + kSeluLambda * kSeluAlpha;
    case Activation::Tanh:
      return 1.0 - y * y;
    case Activation::Sigmoid:
      return y * (1.0 - y);
  }
  return 1.0;
}

Tensor activate(Activation kind, const Tensor& x);

std::string_view activation_name(Activation kind);
Activation parse_activation(std::string_view name);

}  // namespace can::num
