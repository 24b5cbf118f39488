#include "can/numerics/adam.hpp"

#include <cmath>
#include <string>

#include "can/error.hpp"

namespace can::num {

namespace {

void check_shapes(const AdamState& state, const Tensor& param, const Tensor& g, std::string_view name) {
  if (param.shape() != g.shape() || state.m.shape() != param.shape() || state.v.shape() != param.shape()) {
    throw DimensionError("adam: parameter '" + std::string(name) + "' " + param.shape_str() + " vs gradient " +
                         g.shape_str() + " vs moments " + state.m.shape_str());
  }
}

void check_finite(std::span<const double> g, std::string_view name) {
  for (double v : g) {
    if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient for parameter '" + std::string(name) + "'");
  }
}

struct StepScale {
  double c1;
  double c2;
};

StepScale begin_step(AdamState& state) {
  ++state.t;
  const double t = static_cast<double>(state.t);
  return {1.0 - std::pow(state.hp.beta1, t), 1.0 - std::pow(state.hp.beta2, t)};
}

inline void update_entry(const AdamConfig& hp, StepScale s, double g, double& m, double& v, double& x) {
  if (g == 0.0) return;
  m = hp.beta1 * m + (1.0 - hp.beta1) * g;
  v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
  const double m_hat = m / s.c1;
  const double v_hat = v / s.c2;
  x -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.epsilon);
}

}  // namespace

void adam_update(AdamState& state, Tensor& param, const Tensor& g, std::string_view name) {
  check_shapes(state, param, g, name);
  check_finite(g.data(), name);
  const StepScale s = begin_step(state);
  for (std::size_t i = 0; i < param.size(); ++i) update_entry(state.hp, s, g[i], state.m[i], state.v[i], param[i]);
}

void adam_update_rows(AdamState& state, Tensor& param, const Tensor& g, std::span<const std::uint32_t> rows,
                      std::string_view name) {
  check_shapes(state, param, g, name);
  const std::size_t width = param.cols();
  for (std::uint32_t r : rows) check_finite(g.data().subspan(r * width, width), name);
  const StepScale s = begin_step(state);
  for (std::uint32_t r : rows) {
    const std::size_t base = static_cast<std::size_t>(r) * width;
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = base + c;
      update_entry(state.hp, s, g[i], state.m[i], state.v[i], param[i]);
    }
  }
}

void Adam::step(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    auto it = states_.find(p);
    if (it == states_.end()) it = states_.emplace(p, AdamState(p->value.shape(), config_)).first;
    if (p->row_sparse) {
      adam_update_rows(it->second, p->value, p->grad, p->touched_rows(), p->name);
    } else {
      adam_update(it->second, p->value, p->grad, p->name);
    }
  }
}

}  // namespace can::num
