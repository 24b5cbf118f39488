#include "can/numerics/activation.hpp"

#include "can/error.hpp"

namespace can::num {

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::Identity:
      return "identity";
    case Activation::SeLU:
      return "selu";
    case Activation::Tanh:
      return "tanh";
    case Activation::Sigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "selu") return Activation::SeLU;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

}  // namespace can::num
