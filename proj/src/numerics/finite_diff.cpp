#include "can/numerics/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "can/error.hpp"

namespace can::num {

std::vector<Tensor> finite_difference_grad(const std::function<double()>& f, std::span<Parameter* const> params,
                                           double eps) {
  if (!(eps > 0.0)) throw UsageError("finite_difference_grad: eps must be positive");
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g(p->value.shape(), 0.0);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = f();
      p->value[i] = saved - eps;
      const double down = f();
      p->value[i] = saved;
      g[i] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_relative_error: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace can::num
