#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace can::kernel {

// Batched per-step layer: W [B,K,din,dout], X [B,K,S,din], b [B,K,dout].
struct BatchShapes {
  std::size_t B = 1;
  std::size_t K = 1;
  std::size_t S = 1;
  std::size_t din = 1;
  std::size_t dout = 1;

  void validate() const;
  std::size_t weight_size() const { return B * K * din * dout; }
  std::size_t input_size() const { return B * K * S * din; }
  std::size_t bias_size() const { return B * K * dout; }
  std::size_t step_output_size() const { return B * K * S * dout; }
  std::size_t pooled_size() const { return B * K * dout; }
  std::string str() const;

  bool operator==(const BatchShapes&) const = default;
};

// Y[b,k,s,o] = sum_i X[b,k,s,i] W[b,k,i,o] + bias[b,k,o], fully materialized.
template <class T>
void batched_layer_reference(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                             const BatchShapes& sh, std::span<T> y);
template <class T>
std::vector<T> batched_layer_reference(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                                       const BatchShapes& sh);

// Sum over S of a [B,K,S,dout] tensor, in increasing s.
template <class T>
std::vector<T> pool_steps(std::span<const T> y, const BatchShapes& sh);

// Z[b,k,o] = sum_s (sum_i X[b,k,s,i] W[b,k,i,o] + bias[b,k,o]). The per-step
// output is never stored: one scalar accumulator per (b,k,o), s outer, i
// inner, so the result matches reference-then-pool in the same precision.
// Parallel over B*K; writes only into z.
template <class T>
void batched_layer_pooled_fused(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                                const BatchShapes& sh, std::span<T> z);
template <class T>
std::vector<T> batched_layer_pooled_fused(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                                          const BatchShapes& sh);

enum class Precision { F32, F64 };
std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view text);
// Max abs gap allowed between the fused and reference-then-pool paths.
double tolerance(Precision p);

struct BenchReport {
  BatchShapes shapes;
  Precision mode = Precision::F64;
  int repetitions = 0;
  double ref_ms = 0.0;    // median, reference + pool
  double fused_ms = 0.0;  // median
  double max_abs_diff = 0.0;
  double throughput = 0.0;  // examples per second through the fused path
  double speedup() const { return fused_ms > 0.0 ? ref_ms / fused_ms : 0.0; }
};

struct BenchOptions {
  int repetitions = 5;
  Precision mode = Precision::F64;
  std::uint64_t seed = 11;
  // Test hook: applied to the fused output before the correctness check.
  std::function<void(std::span<double>)> perturb_fused;
};

// For every shape: random inputs, correctness check (NumericError when the
// gap exceeds tolerance, before anything is timed), then the median of
// `repetitions` timed runs of each path.
std::vector<BenchReport> run_bench(const std::vector<BatchShapes>& grid, const BenchOptions& opts);

void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& reports);
BatchShapes parse_shapes(std::string_view text);  // "B,K,S,din,dout"

}  // namespace can::kernel
