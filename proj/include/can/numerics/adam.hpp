#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>

#include "can/numerics/parameter.hpp"
#include "can/numerics/tensor.hpp"

namespace can::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(const Shape& shape, AdamConfig config) : m(shape, 0.0), v(shape, 0.0), hp(config) {}

  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
  AdamConfig hp;
};

// One bias-corrected Adam step. Entries whose gradient is exactly zero keep
// their value and moments (lazy update), which is what makes sparse embedding
// rows cheap to train. `t` advances once per call.
void adam_update(AdamState& state, Tensor& param, const Tensor& g, std::string_view name = "param");

// Same update restricted to the listed rows of a rank-2 parameter.
void adam_update_rows(AdamState& state, Tensor& param, const Tensor& g, std::span<const std::uint32_t> rows,
                      std::string_view name = "param");

// Owns one AdamState per parameter and applies the update from Parameter::grad.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Parameter* const> params);
  const AdamState& state(const Parameter& p) const { return states_.at(&p); }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::unordered_map<const Parameter*, AdamState> states_;
};

}  // namespace can::num
