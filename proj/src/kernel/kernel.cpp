#include "can/kernel/kernel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>
#include <sstream>

#include "can/error.hpp"

namespace can::kernel {

namespace {

void check_size(const char* what, std::size_t expected, std::size_t actual, const BatchShapes& sh) {
  if (expected != actual) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(expected) + " values for shapes " +
                         sh.str() + ", got " + std::to_string(actual));
  }
}

template <class T>
void check_inputs(std::span<const T> w, std::span<const T> x, std::span<const T> bias, const BatchShapes& sh) {
  sh.validate();
  check_size("W", sh.weight_size(), w.size(), sh);
  check_size("X", sh.input_size(), x.size(), sh);
  check_size("b", sh.bias_size(), bias.size(), sh);
}

template <class T>
std::vector<T> random_values(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (T& e : v) e = static_cast<T>(u(rng));
  return v;
}

template <class F>
double median_ms(int reps, F&& f) {
  std::vector<double> times;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

// Keeps the optimiser from discarding timed work.
volatile double g_sink = 0.0;

template <class T>
BenchReport bench_one(const BatchShapes& sh, const BenchOptions& opts, std::mt19937_64& rng) {
  const auto w = random_values<T>(rng, sh.weight_size());
  const auto x = random_values<T>(rng, sh.input_size());
  const auto b = random_values<T>(rng, sh.bias_size());
  const std::span<const T> ws(w), xs(x), bs(b);

  const auto pooled = pool_steps<T>(batched_layer_reference<T>(ws, xs, bs, sh), sh);
  const auto fused = batched_layer_pooled_fused<T>(ws, xs, bs, sh);
  std::vector<double> fused_d(fused.begin(), fused.end());
  if (opts.perturb_fused) opts.perturb_fused(fused_d);
  BenchReport rep;
  rep.shapes = sh;
  rep.mode = opts.mode;
  rep.repetitions = opts.repetitions;
  for (std::size_t i = 0; i < fused_d.size(); ++i) {
    const double d = std::abs(fused_d[i] - static_cast<double>(pooled[i]));
    rep.max_abs_diff = std::max(rep.max_abs_diff, std::isnan(d) ? INFINITY : d);
  }
  if (!(rep.max_abs_diff <= tolerance(opts.mode))) {
    std::ostringstream msg;
    msg << "fused kernel disagrees with reference on " << sh.str() << ": max abs diff " << rep.max_abs_diff
        << " > " << tolerance(opts.mode);
    throw NumericError(msg.str());
  }

  rep.ref_ms = median_ms(opts.repetitions, [&] {
    const auto z = pool_steps<T>(batched_layer_reference<T>(ws, xs, bs, sh), sh);
    g_sink = g_sink + static_cast<double>(z[0]);
  });
  std::vector<T> z(sh.pooled_size());
  rep.fused_ms = median_ms(opts.repetitions, [&] {
    batched_layer_pooled_fused<T>(ws, xs, bs, sh, std::span<T>(z));
    g_sink = g_sink + static_cast<double>(z[0]);
  });
  rep.throughput = rep.fused_ms > 0.0 ? static_cast<double>(sh.B) / (rep.fused_ms / 1000.0) : 0.0;
  return rep;
}

}  // namespace

void BatchShapes::validate() const {
  if (B == 0 || K == 0 || S == 0 || din == 0 || dout == 0) {
    throw DimensionError("batch shapes must be positive, got " + str());
  }
}

std::string BatchShapes::str() const {
  return "(B=" + std::to_string(B) + ",K=" + std::to_string(K) + ",S=" + std::to_string(S) +
         ",din=" + std::to_string(din) + ",dout=" + std::to_string(dout) + ")";
}

template <class T>
void batched_layer_reference(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                             const BatchShapes& sh, std::span<T> y) {
  check_inputs(w, x, bias, sh);
  check_size("Y", sh.step_output_size(), y.size(), sh);
  const std::size_t S = sh.S, din = sh.din, dout = sh.dout;
  for (std::size_t bk = 0; bk < sh.B * sh.K; ++bk) {
    const T* wk = w.data() + bk * din * dout;
    const T* bb = bias.data() + bk * dout;
    for (std::size_t s = 0; s < S; ++s) {
      const T* xs = x.data() + (bk * S + s) * din;
      T* ys = y.data() + (bk * S + s) * dout;
      for (std::size_t o = 0; o < dout; ++o) {
        T dot = 0;
        for (std::size_t i = 0; i < din; ++i) dot += xs[i] * wk[i * dout + o];
        ys[o] = dot + bb[o];
      }
    }
  }
}

template <class T>
std::vector<T> batched_layer_reference(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                                       const BatchShapes& sh) {
  sh.validate();
  std::vector<T> y(sh.step_output_size());
  batched_layer_reference<T>(w, x, bias, sh, std::span<T>(y));
  return y;
}

template <class T>
std::vector<T> pool_steps(std::span<const T> y, const BatchShapes& sh) {
  sh.validate();
  check_size("Y", sh.step_output_size(), y.size(), sh);
  std::vector<T> z(sh.pooled_size(), T(0));
  for (std::size_t bk = 0; bk < sh.B * sh.K; ++bk) {
    for (std::size_t s = 0; s < sh.S; ++s) {
      const T* ys = y.data() + (bk * sh.S + s) * sh.dout;
      for (std::size_t o = 0; o < sh.dout; ++o) z[bk * sh.dout + o] += ys[o];
    }
  }
  return z;
}

template <class T>
void batched_layer_pooled_fused(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                                const BatchShapes& sh, std::span<T> z) {
  check_inputs(w, x, bias, sh);
  check_size("Z", sh.pooled_size(), z.size(), sh);
  const std::size_t S = sh.S, din = sh.din, dout = sh.dout;
  const long long n = static_cast<long long>(sh.B * sh.K);
  const T* wp = w.data();
  const T* xp = x.data();
  const T* bp = bias.data();
  T* zp = z.data();
  constexpr std::size_t kBlock = 8;
#pragma omp parallel for schedule(static) if (n >= 64)
  for (long long bk = 0; bk < n; ++bk) {
    const std::size_t u = static_cast<std::size_t>(bk);
    const T* wk = wp + u * din * dout;
    const T* xk = xp + u * S * din;
    const T* bk_bias = bp + u * dout;
    // Output columns in register-sized blocks so X is streamed once per block.
    for (std::size_t o0 = 0; o0 < dout; o0 += kBlock) {
      const std::size_t ob = std::min(kBlock, dout - o0);
      T acc[kBlock] = {};
      for (std::size_t s = 0; s < S; ++s) {
        const T* xs = xk + s * din;
        for (std::size_t o = 0; o < ob; ++o) {
          T dot = 0;
          for (std::size_t i = 0; i < din; ++i) dot += xs[i] * wk[i * dout + o0 + o];
          acc[o] += dot + bk_bias[o0 + o];
        }
      }
      for (std::size_t o = 0; o < ob; ++o) zp[u * dout + o0 + o] = acc[o];
    }
  }
}

template <class T>
std::vector<T> batched_layer_pooled_fused(std::span<const T> w, std::span<const T> x, std::span<const T> bias,
                                          const BatchShapes& sh) {
  sh.validate();
  std::vector<T> z(sh.pooled_size());
  batched_layer_pooled_fused<T>(w, x, bias, sh, std::span<T>(z));
  return z;
}

#define CAN_KERNEL_INSTANTIATE(T)                                                                              \
  template void batched_layer_reference<T>(std::span<const T>, std::span<const T>, std::span<const T>,        \
                                           const BatchShapes&, std::span<T>);                                  \
  template std::vector<T> batched_layer_reference<T>(std::span<const T>, std::span<const T>,                  \
                                                     std::span<const T>, const BatchShapes&);                  \
  template std::vector<T> pool_steps<T>(std::span<const T>, const BatchShapes&);                              \
  template void batched_layer_pooled_fused<T>(std::span<const T>, std::span<const T>, std::span<const T>,     \
                                              const BatchShapes&, std::span<T>);                               \
  template std::vector<T> batched_layer_pooled_fused<T>(std::span<const T>, std::span<const T>,               \
                                                        std::span<const T>, const BatchShapes&);

CAN_KERNEL_INSTANTIATE(float)
CAN_KERNEL_INSTANTIATE(double)
#undef CAN_KERNEL_INSTANTIATE

std::string_view precision_name(Precision p) { return p == Precision::F32 ? "fp32" : "fp64"; }

Precision parse_precision(std::string_view text) {
  if (text == "fp32" || text == "32" || text == "float") return Precision::F32;
  if (text == "fp64" || text == "64" || text == "double") return Precision::F64;
  throw ConfigError("unknown precision '" + std::string(text) + "' (use fp32 or fp64)");
}

double tolerance(Precision p) { return p == Precision::F32 ? 1e-5 : 1e-12; }

std::vector<BenchReport> run_bench(const std::vector<BatchShapes>& grid, const BenchOptions& opts) {
  if (opts.repetitions < 3) throw ConfigError("run_bench: repetitions must be >= 3");
  std::mt19937_64 rng(opts.seed);
  std::vector<BenchReport> out;
  for (const BatchShapes& sh : grid) {
    sh.validate();
    out.push_back(opts.mode == Precision::F32 ? bench_one<float>(sh, opts, rng) : bench_one<double>(sh, opts, rng));
  }
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& reports) {
  out << "B,K,S,din,dout,mode,ref_ms,fused_ms,max_abs_diff,speedup\n";
  for (const BenchReport& r : reports) {
    const BatchShapes& s = r.shapes;
    out << s.B << ',' << s.K << ',' << s.S << ',' << s.din << ',' << s.dout << ',' << precision_name(r.mode) << ','
        << r.ref_ms << ',' << r.fused_ms << ',' << r.max_abs_diff << ',' << r.speedup() << '\n';
  }
}

BatchShapes parse_shapes(std::string_view text) {
  std::vector<std::size_t> v;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    std::size_t pos = 0;
    long long n = -1;
    try {
      n = std::stoll(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || n <= 0) throw ConfigError("bad shape entry '" + item + "' in '" + std::string(text) + "'");
    v.push_back(static_cast<std::size_t>(n));
  }
  if (v.size() != 5) throw ConfigError("shape must be B,K,S,din,dout, got '" + std::string(text) + "'");
  return BatchShapes{v[0], v[1], v[2], v[3], v[4]};
}

}  // namespace can::kernel
