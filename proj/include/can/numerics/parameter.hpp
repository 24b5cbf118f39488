#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "can/numerics/tensor.hpp"

namespace can::num {

// A trainable tensor together with its gradient accumulator.
//
// Row-sparse parameters (embedding tables) track which rows received gradient
// since the last zero_grad(), so clearing and optimizer updates only touch
// those rows. Dense parameters are always treated as fully touched.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool row_sparse = false);

  std::string name;
  Tensor value;
  Tensor grad;
  bool row_sparse = false;

  std::size_t rows() const { return value.rows(); }
  std::size_t cols() const { return value.cols(); }

  void zero_grad();
  void mark_row(std::size_t r);
  std::size_t touched_count() const { return row_sparse ? touched_.size() : rows(); }
  const std::vector<std::uint32_t>& touched_rows() const { return touched_; }

 private:
  std::vector<std::uint32_t> touched_;
  std::vector<std::uint8_t> touched_flag_;
};

}  // namespace can::num
