#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "can/numerics/activation.hpp"
#include "can/numerics/parameter.hpp"
#include "can/numerics/tensor.hpp"

namespace can::num {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr; }
};

// Records primitive operations on batched tensors and replays them backward.
//
// Gradients flow into Parameter::grad: dense parameters via parameter(),
// embedding tables via gather(). Backward visits nodes in exact reverse record
// order and accumulates additively, so a replay is deterministic.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // `needs_grad` marks values that depend on a parameter; backward closures
  // skip gradient work for inputs that do not.
  Var record(Tensor value, Backward backward = {}, bool needs_grad = true);

  const Tensor& value(std::uint32_t id) const { return nodes_.at(id).value; }
  // Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor& grad(std::uint32_t id);
  bool has_grad(std::uint32_t id) const { return nodes_.at(id).has_grad; }
  bool needs_grad(std::uint32_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded backward in reverse.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool has_grad = false;
    bool needs_grad = true;
  };
  std::vector<Node> nodes_;
};

Var constant(Tape& tape, Tensor value);
Var parameter(Tape& tape, Parameter& p);
// Rows `ids` of a table parameter as an [ids.size() x cols] matrix.
Var gather(Tape& tape, Parameter& table, std::span<const std::int32_t> ids);

// y = W x + b for x of shape [in] or [batch, in]; W is [out, in], b is [out].
Var affine(Var x, Var w, Var b);
Var activate(Activation kind, Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var sum(Var x);
Var slice_cols(Var x, std::size_t begin, std::size_t len);
Var concat_cols(std::span<const Var> parts);
// Element-wise x^power.
Var power(Var x, int power);
// Element-wise sum_{c=1..orders} x^c.
Var multi_order(Var x, int orders);
// One micro-MLP layer per row: weights of row r live in params[r, offset ...)
// as an [out x in] row-major block followed by `out` biases.
Var rowwise_layer(Var params, std::size_t offset, Var x, std::size_t in, std::size_t out);
// Sums contiguous row segments: output row b is the sum of rows
// [offsets[b], offsets[b+1]). Empty segments produce zero rows.
Var segment_sum(Var x, std::span<const std::size_t> offsets);
// Row-wise dot product of two [batch, d] matrices, shape [batch, 1].
Var rowwise_dot(Var a, Var b);
// Mean two-class cross entropy of softmax(logits [batch, 2]) against labels.
Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels);

// Click-class softmax probability for each row of [batch, 2] logits.
std::vector<double> softmax_click_prob(const Tensor& logits);

// Reverse-mode gradients of a scalar loss with respect to params. Unused
// parameters map to zero tensors. Clears the parameters' accumulators first.
std::vector<Tensor> grad(Var loss, std::span<Parameter* const> params);

// Dense (non-tape) forms used by tests and oracles.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace can::num
