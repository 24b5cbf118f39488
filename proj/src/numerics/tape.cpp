#include "can/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "can/error.hpp"

namespace can::num {

const Tensor& Var::value() const {
  if (!tape) throw UsageError("variable is not attached to a tape");
  return tape->value(id);
}

Var Tape::record(Tensor value, Backward backward, bool needs_grad) {
  Node node;
  node.value = std::move(value);
  node.backward = std::move(backward);
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& node = nodes_.at(id);
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.id >= nodes_.size()) throw UsageError("loss is not recorded on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("loss must be a scalar, got shape " + nodes_[loss.id].value.shape_str());
  }
  if (!nodes_[loss.id].needs_grad) throw UsageError("loss does not depend on any parameter");
  grad(loss.id)[0] += 1.0;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (node.has_grad && node.backward) node.backward(*this, static_cast<std::uint32_t>(k));
  }
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.tape || a.tape != b.tape) throw UsageError(std::string(op) + ": operands are on different tapes");
  return *a.tape;
}

void require_rank2(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": " + what + " must be rank 2, got " + t.shape_str());
  }
}

bool any_needs(Tape& tape, std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return tape.needs_grad(v.id); });
}

void check_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool x_ok = (x.rank() == 1 || x.rank() == 2) && w.rank() == 2 && b.rank() == 1 &&
                    x.cols() == w.dim(1) && b.dim(0) == w.dim(0);
  if (!x_ok) {
    throw DimensionError("affine: x " + x.shape_str() + " is incompatible with W " + w.shape_str() +
                         " and b " + b.shape_str());
  }
}

// y = x W^T + b with W transposed once so the inner loop is a contiguous axpy.
Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_affine(x, w, b);
  const std::size_t n_out = w.dim(0);
  const std::size_t n_in = w.dim(1);
  const std::size_t batch = x.rows();
  std::vector<double> wt(n_in * n_out);
  for (std::size_t o = 0; o < n_out; ++o)
    for (std::size_t i = 0; i < n_in; ++i) wt[i * n_out + o] = w[o * n_in + i];

  Tensor y(x.rank() == 1 ? Shape{n_out} : Shape{batch, n_out}, 0.0);
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = x.data().data() + r * n_in;
    double* yr = y.data().data() + r * n_out;
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = xr[i];
      const double* wrow = wt.data() + i * n_out;
      for (std::size_t o = 0; o < n_out; ++o) yr[o] += xi * wrow[o];
    }
    for (std::size_t o = 0; o < n_out; ++o) yr[o] += b[o];
  }
  return y;
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return affine_forward(x, w, b); }

Tensor activate(Activation kind, const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = activate_scalar(kind, v);
  return y;
}

Var constant(Tape& tape, Tensor value) { return tape.record(std::move(value), {}, false); }

Var parameter(Tape& tape, Parameter& p) {
  Parameter* param = &p;
  return tape.record(p.value, [param](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (param->grad.size() != g.size()) param->grad = Tensor(param->value.shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += g[i];
  });
}

Var gather(Tape& tape, Parameter& table, std::span<const std::int32_t> ids) {
  require_rank2(table.value, "gather", "table");
  const std::size_t n_rows = table.value.dim(0);
  const std::size_t width = table.value.dim(1);
  Tensor out({ids.size(), width}, 0.0);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::int32_t id = ids[k];
    if (id < 0 || static_cast<std::size_t>(id) >= n_rows) {
      throw IndexError("lookup in '" + table.name + "': id " + std::to_string(id) + " outside [0, " +
                       std::to_string(n_rows) + ")");
    }
    std::copy_n(table.value.data().data() + id * width, width, out.data().data() + k * width);
  }
  Parameter* param = &table;
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  return tape.record(std::move(out), [param, rows = std::move(rows), width](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (param->grad.size() != param->value.size()) param->grad = Tensor(param->value.shape(), 0.0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t r = static_cast<std::size_t>(rows[k]);
      param->mark_row(r);
      double* dst = param->grad.data().data() + r * width;
      const double* src = g.data().data() + k * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
    }
  });
}

Var affine(Var x, Var w, Var b) {
  Tape& tape = same_tape(x, w, "affine");
  same_tape(x, b, "affine");
  Tensor y = affine_forward(x.value(), w.value(), b.value());
  const bool needs = any_needs(tape, {x, w, b});
  return tape.record(std::move(y), [x, w, b](Tape& t, std::uint32_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(x.id);
    const Tensor& wv = t.value(w.id);
    const std::size_t n_out = wv.dim(0);
    const std::size_t n_in = wv.dim(1);
    const std::size_t batch = xv.rows();
    if (t.needs_grad(x.id)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t r = 0; r < batch; ++r) {
        double* gxr = gx.data().data() + r * n_in;
        for (std::size_t o = 0; o < n_out; ++o) {
          const double g = gy[r * n_out + o];
          const double* wrow = wv.data().data() + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) gxr[i] += g * wrow[i];
        }
      }
    }
    if (t.needs_grad(w.id)) {
      Tensor& gw = t.grad(w.id);
      for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = xv.data().data() + r * n_in;
        for (std::size_t o = 0; o < n_out; ++o) {
          const double g = gy[r * n_out + o];
          double* gwrow = gw.data().data() + o * n_in;
          for (std::size_t i = 0; i < n_in; ++i) gwrow[i] += g * xr[i];
        }
      }
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t o = 0; o < n_out; ++o) gb[o] += gy[r * n_out + o];
    }
  }, needs);
}

Var activate(Activation kind, Var x) {
  Tape& tape = *x.tape;
  Tensor y = activate(kind, x.value());
  return tape.record(std::move(y), [x, kind](Tape& t, std::uint32_t self) {
    if (!t.needs_grad(x.id)) return;
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(x.id);
    const Tensor& yv = t.value(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * activate_derivative(kind, xv[i], yv[i]);
  }, tape.needs_grad(x.id));
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError("add: shapes " + a.value().shape_str() + " and " + b.value().shape_str() + " differ");
  }
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), [a, b](Tape& t, std::uint32_t self) {
    const Tensor& gy = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.needs_grad(v.id)) continue;
      Tensor& gv = t.grad(v.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gv[i] += gy[i];
    }
  }, any_needs(tape, {a, b}));
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError("mul: shapes " + a.value().shape_str() + " and " + b.value().shape_str() + " differ");
  }
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape.record(std::move(y), [a, b](Tape& t, std::uint32_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    // a and b may be the same node; each contribution is accumulated separately.
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  }, any_needs(tape, {a, b}));
}

Var sum(Var x) {
  Tape& tape = *x.tape;
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return tape.record(Tensor::scalar(total), [x](Tape& t, std::uint32_t self) {
    if (!t.needs_grad(x.id)) return;
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad(x.id);
    for (double& v : gx.data()) v += g;
  }, tape.needs_grad(x.id));
}

Var slice_cols(Var x, std::size_t begin, std::size_t len) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  require_rank2(xv, "slice_cols", "input");
  const std::size_t n_cols = xv.dim(1);
  if (begin + len > n_cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                         ") exceed " + xv.shape_str());
  }
  const std::size_t n_rows = xv.dim(0);
  Tensor y({n_rows, len}, 0.0);
  for (std::size_t r = 0; r < n_rows; ++r)
    std::copy_n(xv.data().data() + r * n_cols + begin, len, y.data().data() + r * len);
  return tape.record(std::move(y), [x, begin, len, n_cols, n_rows](Tape& t, std::uint32_t self) {
    if (!t.needs_grad(x.id)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t r = 0; r < n_rows; ++r)
      for (std::size_t c = 0; c < len; ++c) gx[r * n_cols + begin + c] += gy[r * len + c];
  }, tape.needs_grad(x.id));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Tape& tape = *parts[0].tape;
  const std::size_t n_rows = parts[0].value().rows();
  std::size_t total = 0;
  bool needs = false;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat_cols");
    require_rank2(p.value(), "concat_cols", "input");
    if (p.value().dim(0) != n_rows) {
      throw DimensionError("concat_cols: row counts differ (" + parts[0].value().shape_str() + " vs " +
                           p.value().shape_str() + ")");
    }
    total += p.value().dim(1);
    needs = needs || tape.needs_grad(p.id);
  }
  Tensor y({n_rows, total}, 0.0);
  std::size_t col = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    const std::size_t w = pv.dim(1);
    for (std::size_t r = 0; r < n_rows; ++r)
      std::copy_n(pv.data().data() + r * w, w, y.data().data() + r * total + col);
    col += w;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(y), [inputs = std::move(inputs), n_rows, total](Tape& t, std::uint32_t self) {
    const Tensor& gy = t.grad(self);
    std::size_t col = 0;
    for (Var p : inputs) {
      const std::size_t w = t.value(p.id).dim(1);
      if (t.needs_grad(p.id)) {
        Tensor& gp = t.grad(p.id);
        for (std::size_t r = 0; r < n_rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += gy[r * total + col + c];
      }
      col += w;
    }
  }, needs);
}

Var power(Var x, int power) {
  if (power < 1) throw UsageError("power: exponent must be >= 1");
  Tape& tape = *x.tape;
  Tensor y = x.value();
  for (double& v : y.data()) {
    const double base = v;
    for (int c = 1; c < power; ++c) v *= base;
  }
  return tape.record(std::move(y), [x, power](Tape& t, std::uint32_t self) {
    if (!t.needs_grad(x.id)) return;
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(x.id);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      double d = power;
      for (int c = 1; c < power; ++c) d *= xv[i];
      gx[i] += gy[i] * d;
    }
  }, tape.needs_grad(x.id));
}

Var multi_order(Var x, int orders) {
  if (orders < 1) throw UsageError("multi_order: order count must be >= 1");
  Tape& tape = *x.tape;
  Tensor y = x.value();
  for (double& v : y.data()) {
    const double base = v;
    double term = base;
    double acc = base;
    for (int c = 2; c <= orders; ++c) {
      term *= base;
      acc += term;
    }
    v = acc;
  }
  return tape.record(std::move(y), [x, orders](Tape& t, std::uint32_t self) {
    if (!t.needs_grad(x.id)) return;
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(x.id);
    Tensor& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      // d/dx sum_c x^c = sum_c c x^(c-1)
      double term = 1.0;
      double d = 1.0;
      for (int c = 2; c <= orders; ++c) {
        term *= xv[i];
        d += c * term;
      }
      gx[i] += gy[i] * d;
    }
  }, tape.needs_grad(x.id));
}

Var rowwise_layer(Var params, std::size_t offset, Var x, std::size_t in, std::size_t out) {
  Tape& tape = same_tape(params, x, "rowwise_layer");
  const Tensor& pv = params.value();
  const Tensor& xv = x.value();
  require_rank2(pv, "rowwise_layer", "params");
  require_rank2(xv, "rowwise_layer", "input");
  const std::size_t width = pv.dim(1);
  const std::size_t n_rows = pv.dim(0);
  if (xv.dim(0) != n_rows || xv.dim(1) != in || offset + out * in + out > width) {
    throw DimensionError("rowwise_layer: params " + pv.shape_str() + " at offset " + std::to_string(offset) +
                         " cannot hold a " + std::to_string(in) + "->" + std::to_string(out) +
                         " layer for input " + xv.shape_str());
  }
  Tensor y({n_rows, out}, 0.0);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double* w = pv.data().data() + r * width + offset;
    const double* bias = w + out * in;
    const double* xr = xv.data().data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * xr[i];
      y[r * out + o] = acc + bias[o];
    }
  }
  return tape.record(std::move(y), [params, x, offset, in, out, width, n_rows](Tape& t, std::uint32_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& pv = t.value(params.id);
    const Tensor& xv = t.value(x.id);
    if (t.needs_grad(params.id)) {
      Tensor& gp = t.grad(params.id);
      for (std::size_t r = 0; r < n_rows; ++r) {
        double* gw = gp.data().data() + r * width + offset;
        double* gb = gw + out * in;
        const double* xr = xv.data().data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double g = gy[r * out + o];
          for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g * xr[i];
          gb[o] += g;
        }
      }
    }
    if (t.needs_grad(x.id)) {
      Tensor& gx = t.grad(x.id);
      for (std::size_t r = 0; r < n_rows; ++r) {
        const double* w = pv.data().data() + r * width + offset;
        double* gxr = gx.data().data() + r * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double g = gy[r * out + o];
          for (std::size_t i = 0; i < in; ++i) gxr[i] += g * w[o * in + i];
        }
      }
    }
  }, any_needs(tape, {params, x}));
}

Var segment_sum(Var x, std::span<const std::size_t> offsets) {
  Tape& tape = *x.tape;
  const Tensor& xv = x.value();
  require_rank2(xv, "segment_sum", "input");
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != xv.dim(0) ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw DimensionError("segment_sum: offsets do not partition the " + std::to_string(xv.dim(0)) + " input rows");
  }
  const std::size_t n_seg = offsets.size() - 1;
  const std::size_t w = xv.dim(1);
  Tensor y({n_seg, w}, 0.0);
  for (std::size_t s = 0; s < n_seg; ++s)
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < w; ++c) y[s * w + c] += xv[r * w + c];
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return tape.record(std::move(y), [x, offs = std::move(offs), w](Tape& t, std::uint32_t self) {
    if (!t.needs_grad(x.id)) return;
    const Tensor& gy = t.grad(self);
    Tensor& gx = t.grad(x.id);
    for (std::size_t s = 0; s + 1 < offs.size(); ++s)
      for (std::size_t r = offs[s]; r < offs[s + 1]; ++r)
        for (std::size_t c = 0; c < w; ++c) gx[r * w + c] += gy[s * w + c];
  }, tape.needs_grad(x.id));
}

Var rowwise_dot(Var a, Var b) {
  Tape& tape = same_tape(a, b, "rowwise_dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "rowwise_dot", "lhs");
  if (av.shape() != bv.shape()) {
    throw DimensionError("rowwise_dot: shapes " + av.shape_str() + " and " + bv.shape_str() + " differ");
  }
  const std::size_t n_rows = av.dim(0);
  const std::size_t d = av.dim(1);
  Tensor y({n_rows, 1}, 0.0);
  for (std::size_t r = 0; r < n_rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += av[r * d + i] * bv[r * d + i];
    y[r] = acc;
  }
  return tape.record(std::move(y), [a, b, n_rows, d](Tape& t, std::uint32_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad(a.id);
      for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t i = 0; i < d; ++i) ga[r * d + i] += gy[r] * bv[r * d + i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad(b.id);
      for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t i = 0; i < d; ++i) gb[r * d + i] += gy[r] * av[r * d + i];
    }
  }, any_needs(tape, {a, b}));
}

std::vector<double> softmax_click_prob(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw DimensionError("softmax: logits must be [batch, 2], got " + logits.shape_str());
  }
  std::vector<double> p(logits.dim(0));
  for (std::size_t r = 0; r < p.size(); ++r) {
    p[r] = activate_scalar(Activation::Sigmoid, logits[r * 2 + 1] - logits[r * 2]);
  }
  return p;
}

Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels) {
  Tape& tape = *logits.tape;
  const Tensor& lv = logits.value();
  std::vector<double> prob = softmax_click_prob(lv);
  if (labels.size() != prob.size()) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(prob.size()) + " rows");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < prob.size(); ++r) {
    // -log softmax of the label class as softplus of the logit margin, which
    // keeps full precision when the probabilities saturate.
    const double d = labels[r] ? lv[r * 2] - lv[r * 2 + 1] : lv[r * 2 + 1] - lv[r * 2];
    total += d > 0.0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
  }
  const double n = static_cast<double>(prob.size());
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return tape.record(Tensor::scalar(total / n), [logits, prob = std::move(prob), y = std::move(y), n](
                                                    Tape& t, std::uint32_t self) {
    if (!t.needs_grad(logits.id)) return;
    const double g = t.grad(self)[0] / n;
    Tensor& gl = t.grad(logits.id);
    for (std::size_t r = 0; r < prob.size(); ++r) {
      const double d = prob[r] - static_cast<double>(y[r]);
      gl[r * 2] -= g * d;
      gl[r * 2 + 1] += g * d;
    }
  }, tape.needs_grad(logits.id));
}

std::vector<Tensor> grad(Var loss, std::span<Parameter* const> params) {
  if (!loss.tape) throw UsageError("grad: loss is not connected to a tape");
  for (Parameter* p : params) p->zero_grad();
  loss.tape->backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) out.push_back(p->grad.size() == p->value.size() ? p->grad : Tensor(p->value.shape()));
  return out;
}

}  // namespace can::num
