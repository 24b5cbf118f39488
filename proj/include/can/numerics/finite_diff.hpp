#pragma once

#include <functional>
#include <span>
#include <vector>

#include "can/numerics/parameter.hpp"
#include "can/numerics/tensor.hpp"

namespace can::num {

// Central-difference gradient of f with respect to every entry of params.
// f reads the parameters' current values; each entry is perturbed in place and
// restored bit-exactly afterwards.
std::vector<Tensor> finite_difference_grad(const std::function<double()>& f, std::span<Parameter* const> params,
                                           double eps = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

}  // namespace can::num
