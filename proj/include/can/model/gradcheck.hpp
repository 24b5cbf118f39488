#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "can/model/model.hpp"

namespace can::model {

// Small CAN used for gradient checks: 2-layer 2->2 micro-MLP, two orders, both
// independence levels, head 8 -> 2, over a three-field schema.
ModelConfig gradcheck_config();

// Random examples over `schema`; sequence lengths are uniform in [0, max_len].
data::Dataset random_dataset(const data::Schema& schema, std::size_t n, std::uint64_t seed);

struct GradCheckReport {
  std::size_t trials = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_trial = 0;
};

// For each trial: parameters redrawn uniform in [-1, 1], one random example,
// analytic gradient of the batch loss versus central differences over every
// parameter.
GradCheckReport gradient_check(const ModelConfig& cfg, std::size_t trials, std::uint64_t seed);

}  // namespace can::model
