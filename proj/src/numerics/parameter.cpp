#include "can/numerics/parameter.hpp"

#include <algorithm>

namespace can::num {

Parameter::Parameter(std::string name_, Tensor value_, bool row_sparse_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0), row_sparse(row_sparse_) {
  if (row_sparse) touched_flag_.assign(value.rows(), 0);
}

void Parameter::zero_grad() {
  if (grad.size() != value.size()) {
    grad = Tensor(value.shape(), 0.0);
    touched_.clear();
    std::fill(touched_flag_.begin(), touched_flag_.end(), 0);
    return;
  }
  if (!row_sparse) {
    grad.fill(0.0);
    return;
  }
  const std::size_t width = cols();
  for (std::uint32_t r : touched_) {
    std::fill_n(grad.data().data() + static_cast<std::size_t>(r) * width, width, 0.0);
    touched_flag_[r] = 0;
  }
  touched_.clear();
}

void Parameter::mark_row(std::size_t r) {
  if (!row_sparse) return;
  if (touched_flag_.size() != rows()) touched_flag_.assign(rows(), 0);
  if (!touched_flag_[r]) {
    touched_flag_[r] = 1;
    touched_.push_back(static_cast<std::uint32_t>(r));
  }
}

}  // namespace can::num
