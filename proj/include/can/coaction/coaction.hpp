#pragma once

#include <span>
#include <vector>

#include "can/coaction/mlp_spec.hpp"
#include "can/numerics/activation.hpp"
#include "can/numerics/tape.hpp"

namespace can::coaction {

// One micro-MLP layer viewed inside a weight-side embedding.
struct LayerView {
  std::span<const double> weight;  // out x in, row-major
  std::span<const double> bias;    // out
  std::size_t in = 0;
  std::size_t out = 0;
};

// The micro-MLP carried by a weight-side vector. Holds views only; the source
// vector must outlive it.
struct SlicedMlp {
  std::vector<LayerView> layers;

  // Re-concatenates weight/bias segments in packing order.
  std::vector<double> flatten() const;
};

using CoActionOutput = std::vector<double>;

SlicedMlp slice_params(std::span<const double> p_item, const MlpCanSpec& spec);

// h0 = x; h_i = act(w_{i-1} h_{i-1} + b_{i-1}); returns h_K. The activation is
// applied after every layer, the last one included.
std::vector<double> apply_mlp_can(const SlicedMlp& mlp, std::span<const double> x, num::Activation activation);

// Element-wise sum_{c=1..orders} x^c.
std::vector<double> multi_order_input(std::span<const double> p_user, int orders);

// Single micro-MLP on the polynomial input: MLP(sum_c p_user^c).
CoActionOutput coaction_shared(std::span<const double> p_item, std::span<const double> p_user,
                               const MlpCanSpec& spec, int orders);

// sum_c MLP_c(p_user^c). `segments` holds either one shared weight-side
// segment or exactly `orders` independent ones.
CoActionOutput coaction_sum_form(std::span<const std::span<const double>> segments, std::span<const double> p_user,
                                 const MlpCanSpec& spec, int orders);

// Sum-pool of the shared co-action over a behaviour sequence; an empty
// sequence pools to zeros.
CoActionOutput coaction_sequence(std::span<const double> p_item, std::span<const std::span<const double>> sequence,
                                 const MlpCanSpec& spec, int orders);

// Batched tape form. Row r of `weights` holds, from column `offset`, one
// micro-MLP (shared) or `orders` consecutive ones (order independent); row r
// of `inputs` is the input-side vector.
num::Var coaction_rows(num::Var weights, std::size_t offset, num::Var inputs, const MlpCanSpec& spec, int orders,
                       bool order_independent);

}  // namespace can::coaction
