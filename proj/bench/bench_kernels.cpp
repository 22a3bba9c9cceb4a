// Serial reference kernels against the OpenMP kernels, plus one full
// training step of the desk-scale model.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "kneeatt/kernels.hpp"
#include "kneeatt/model_zoo.hpp"
#include "kneeatt/ops.hpp"

namespace {

using namespace kneeatt;

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Args: spatial size, in channels, out channels.
ConvGeometry conv_case(const benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  return ConvGeometry::make(16, hw, hw * 3 / 4, static_cast<std::size_t>(state.range(1)), 3, 1,
                            static_cast<std::size_t>(state.range(2)), Padding::Same);
}

template <bool Ref>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_case(state);
  const auto in = random_buffer(g.in_size(), 1), w = random_buffer(g.weight_size(), 2), b = random_buffer(g.out_c, 3);
  std::vector<double> out(g.out_size());
  for (auto _ : state) {
    if constexpr (Ref) kernels::ref::conv2d_forward(g, in, w, b, out);
    else kernels::conv2d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(g.out_size() * g.kernel * g.kernel * g.in_c));
}

template <bool Ref>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = conv_case(state);
  const auto in = random_buffer(g.in_size(), 1), w = random_buffer(g.weight_size(), 2);
  const auto go = random_buffer(g.out_size(), 3);
  std::vector<double> gi(g.in_size()), gw(g.weight_size()), gb(g.out_c);
  for (auto _ : state) {
    if constexpr (Ref) {
      kernels::ref::conv2d_backward_input(g, go, w, gi);
      kernels::ref::conv2d_backward_params(g, in, go, gw, gb);
    } else {
      kernels::conv2d_backward_input(g, go, w, gi);
      kernels::conv2d_backward_params(g, in, go, gw, gb);
    }
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<long>(g.out_size() * g.kernel * g.kernel * g.in_c));
}

template <bool Ref>
void BM_MaxPool(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto g = PoolGeometry::make(16, hw, hw * 3 / 4, 32, 2, 2, Padding::Valid);
  const auto in = random_buffer(g.in_size(), 4);
  std::vector<double> out(g.out_size());
  std::vector<std::size_t> arg(g.out_size());
  for (auto _ : state) {
    if constexpr (Ref) kernels::ref::maxpool_forward(g, in, out, arg);
    else kernels::maxpool_forward(g, in, out, arg);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_TrainStep(benchmark::State& state) {
  ModelSpec spec;
  spec.input_h = 64;
  spec.input_w = 48;
  spec.width_multiplier = static_cast<double>(state.range(0)) / 100.0;
  Model model(spec);
  Tensor images({16, 64, 48, 1}, random_buffer(16 * 64 * 48, 5));
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 5);
  const Tensor target = one_hot(labels, 5);
  for (auto _ : state) {
    Graph g;
    const auto out = model.forward(g, images);
    g.backward(model.loss(out, target));
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/ref")->Args({64, 16, 16})->Args({16, 64, 64});
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/omp")->Args({64, 16, 16})->Args({16, 64, 64});
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/ref")->Args({64, 16, 16})->Args({16, 64, 64});
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/omp")->Args({64, 16, 16})->Args({16, 64, 64});
BENCHMARK(BM_MaxPool<true>)->Name("maxpool/ref")->Arg(64);
BENCHMARK(BM_MaxPool<false>)->Name("maxpool/omp")->Arg(64);
BENCHMARK(BM_TrainStep)->Name("train_step/vgg16_multiloss_width")->Arg(25)->Arg(13)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
