#include "can/coaction/coaction.hpp"

#include <string>

#include "can/error.hpp"

namespace can::coaction {

std::vector<double> SlicedMlp::flatten() const {
  std::vector<double> out;
  for (const LayerView& l : layers) {
    out.insert(out.end(), l.weight.begin(), l.weight.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

SlicedMlp slice_params(std::span<const double> p_item, const MlpCanSpec& spec) {
  spec.validate();
  if (p_item.size() != spec.param_count()) {
    throw DimensionError("slice_params: expected " + std::to_string(spec.param_count()) + " parameters, got " +
                         std::to_string(p_item.size()));
  }
  SlicedMlp mlp;
  std::size_t offset = 0;
  for (const LayerDims& d : spec.layers) {
    LayerView view;
    view.in = d.in;
    view.out = d.out;
    view.weight = p_item.subspan(offset, d.in * d.out);
    offset += d.in * d.out;
    view.bias = p_item.subspan(offset, d.out);
    offset += d.out;
    mlp.layers.push_back(view);
  }
  return mlp;
}

std::vector<double> apply_mlp_can(const SlicedMlp& mlp, std::span<const double> x, num::Activation activation) {
  if (mlp.layers.empty()) throw DimensionError("apply_mlp_can: empty micro-MLP");
  if (x.size() != mlp.layers.front().in) {
    throw DimensionError("apply_mlp_can: input has " + std::to_string(x.size()) + " entries, layer 0 expects " +
                         std::to_string(mlp.layers.front().in));
  }
  std::vector<double> h(x.begin(), x.end());
  for (const LayerView& l : mlp.layers) {
    std::vector<double> next(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < l.in; ++i) acc += l.weight[o * l.in + i] * h[i];
      next[o] = num::activate_scalar(activation, acc + l.bias[o]);
    }
    h = std::move(next);
  }
  return h;
}

std::vector<double> multi_order_input(std::span<const double> p_user, int orders) {
  if (orders < 1) throw ConfigError("order count must be >= 1");
  std::vector<double> out(p_user.size());
  for (std::size_t i = 0; i < p_user.size(); ++i) {
    double term = p_user[i];
    double acc = term;
    for (int c = 2; c <= orders; ++c) {
      term *= p_user[i];
      acc += term;
    }
    out[i] = acc;
  }
  return out;
}

CoActionOutput coaction_shared(std::span<const double> p_item, std::span<const double> p_user,
                               const MlpCanSpec& spec, int orders) {
  const SlicedMlp mlp = slice_params(p_item, spec);
  return apply_mlp_can(mlp, multi_order_input(p_user, orders), resolve_activation(spec, orders));
}

CoActionOutput coaction_sum_form(std::span<const std::span<const double>> segments, std::span<const double> p_user,
                                 const MlpCanSpec& spec, int orders) {
  if (orders < 1) throw ConfigError("order count must be >= 1");
  if (segments.size() != 1 && segments.size() != static_cast<std::size_t>(orders)) {
    throw ConfigError("coaction_sum_form: " + std::to_string(segments.size()) + " weight segments for " +
                      std::to_string(orders) + " orders");
  }
  const num::Activation act = resolve_activation(spec, orders);
  CoActionOutput total(spec.output_dim(), 0.0);
  std::vector<double> power(p_user.begin(), p_user.end());
  for (int c = 1; c <= orders; ++c) {
    if (c > 1)
      for (std::size_t i = 0; i < power.size(); ++i) power[i] *= p_user[i];
    const auto& segment = segments.size() == 1 ? segments[0] : segments[static_cast<std::size_t>(c - 1)];
    const std::vector<double> h = apply_mlp_can(slice_params(segment, spec), power, act);
    for (std::size_t o = 0; o < total.size(); ++o) total[o] += h[o];
  }
  return total;
}

CoActionOutput coaction_sequence(std::span<const double> p_item, std::span<const std::span<const double>> sequence,
                                 const MlpCanSpec& spec, int orders) {
  spec.validate();
  CoActionOutput total(spec.output_dim(), 0.0);
  for (const auto& step : sequence) {
    const CoActionOutput h = coaction_shared(p_item, step, spec, orders);
    for (std::size_t o = 0; o < total.size(); ++o) total[o] += h[o];
  }
  return total;
}

num::Var coaction_rows(num::Var weights, std::size_t offset, num::Var inputs, const MlpCanSpec& spec, int orders,
                       bool order_independent) {
  spec.validate();
  if (orders < 1) throw ConfigError("order count must be >= 1");
  const num::Activation act = resolve_activation(spec, orders);
  const std::size_t per_mlp = spec.param_count();
  auto run = [&](std::size_t base, num::Var h) {
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerDims& d = spec.layers[i];
      h = num::activate(act, num::rowwise_layer(weights, base + spec.layer_offset(i), h, d.in, d.out));
    }
    return h;
  };
  if (!order_independent) return run(offset, num::multi_order(inputs, orders));

  num::Var total = run(offset, inputs);
  for (int c = 2; c <= orders; ++c) {
    const num::Var h = run(offset + static_cast<std::size_t>(c - 1) * per_mlp, num::power(inputs, c));
    total = num::add(total, h);
  }
  return total;
}

}  // namespace can::coaction
