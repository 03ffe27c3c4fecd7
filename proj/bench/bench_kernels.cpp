// OpenMP conv kernels against the serial references on detector-sized layers.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "adyolo/numcore/kernels.hpp"
#include "adyolo/numcore/random.hpp"

namespace {

using adyolo::Real;
namespace k = adyolo::kernels;

struct Layer {
  k::ConvGeometry g;
  std::vector<Real> in, w, out;
};

// Args: input side, in channels, out channels, stride.
Layer make_layer(const benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int cin = static_cast<int>(state.range(1)), cout = static_cast<int>(state.range(2));
  Layer l;
  l.g = k::conv_geometry({side, side, cin}, {3, 3, cin, cout}, static_cast<int>(state.range(3)), 1);
  adyolo::Rng rng(7);
  l.in.resize(static_cast<std::size_t>(side) * side * cin);
  l.w.resize(static_cast<std::size_t>(9) * cin * cout);
  for (Real& v : l.in) v = adyolo::uniform(rng, -1, 1);
  for (Real& v : l.w) v = adyolo::uniform(rng, -1, 1);
  l.out.resize(static_cast<std::size_t>(l.g.out_h) * l.g.out_w * cout);
  for (Real& v : l.out) v = adyolo::uniform(rng, -1, 1);
  return l;
}

void set_flops(benchmark::State& state, const Layer& l) {
  const double macs = static_cast<double>(l.g.out_h) * l.g.out_w * l.g.out_c * l.g.k * l.g.k * l.g.in_c;
  state.counters["FLOP/s"] = benchmark::Counter(2 * macs, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <auto Fn>
void forward(benchmark::State& state) {
  Layer l = make_layer(state);
  std::vector<Real> y(l.out.size());
  for (auto _ : state) {
    Fn(l.g, l.in.data(), l.w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  set_flops(state, l);
}

template <auto Fn>
void backward_input(benchmark::State& state) {
  Layer l = make_layer(state);
  std::vector<Real> gi(l.in.size());
  for (auto _ : state) {
    Fn(l.g, l.out.data(), l.w.data(), gi.data());
    benchmark::DoNotOptimize(gi.data());
  }
  set_flops(state, l);
}

template <auto Fn>
void backward_kernel(benchmark::State& state) {
  Layer l = make_layer(state);
  std::vector<Real> gw(l.w.size());
  for (auto _ : state) {
    Fn(l.g, l.in.data(), l.out.data(), gw.data());
    benchmark::DoNotOptimize(gw.data());
  }
  set_flops(state, l);
}

// First, middle and last blocks of the default detector.
void layers(benchmark::internal::Benchmark* b) {
  b->Args({128, 3, 8, 2})->Args({32, 16, 32, 2})->Args({8, 48, 64, 1})->UseRealTime();
}

}  // namespace

BENCHMARK(forward<k::reference::conv2d_forward>)->Name("conv_forward/reference")->Apply(layers);
BENCHMARK(forward<k::conv2d_forward>)->Name("conv_forward/openmp")->Apply(layers);
BENCHMARK(backward_input<k::reference::conv2d_backward_input>)->Name("conv_backward_input/reference")->Apply(layers);
BENCHMARK(backward_input<k::conv2d_backward_input>)->Name("conv_backward_input/openmp")->Apply(layers);
BENCHMARK(backward_kernel<k::reference::conv2d_backward_kernel>)->Name("conv_backward_kernel/reference")->Apply(layers);
BENCHMARK(backward_kernel<k::conv2d_backward_kernel>)->Name("conv_backward_kernel/openmp")->Apply(layers);

BENCHMARK_MAIN();
