// Serial reference kernels against the OpenMP backend.
#include <benchmark/benchmark.h>

#include <vector>

#include "bset/kernels.hpp"
#include "bset/network.hpp"
#include "bset/rng.hpp"

using namespace bset;
using namespace bset::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

Backend backend_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Backend::serial : Backend::parallel;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

// Second convolution of the desk CNN on a 28x28 batch of 64.
void BM_ConvForward(benchmark::State& state) {
  const ConvDims d{64, 8, 13, 13, 16, 3, 0};
  const auto in = noise(d.batch * d.in_channels * d.height * d.width, 1);
  const auto w = noise(d.out_channels * d.in_channels * d.kernel * d.kernel, 2);
  const auto b = noise(d.out_channels, 3);
  std::vector<double> out(d.batch * d.out_channels * d.out_height() * d.out_width());
  const auto& k = table(backend_of(state));
  for (auto _ : state) {
    k.conv2d_forward(d, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_ConvBackward(benchmark::State& state) {
  const ConvDims d{64, 8, 13, 13, 16, 3, 0};
  const auto in = noise(d.batch * d.in_channels * d.height * d.width, 1);
  const auto w = noise(d.out_channels * d.in_channels * d.kernel * d.kernel, 2);
  const auto g = noise(d.batch * d.out_channels * d.out_height() * d.out_width(), 3);
  std::vector<double> din(in.size()), dw(w.size()), db(d.out_channels);
  const auto& k = table(backend_of(state));
  for (auto _ : state) {
    k.conv2d_backward(d, in, w, g, din, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  label(state);
}

void BM_MaxPool(benchmark::State& state) {
  const PoolDims d{64, 8, 26, 26, 2};
  const auto in = noise(d.batch * d.channels * d.height * d.width, 4);
  const std::size_t n = d.batch * d.channels * d.out_height() * d.out_width();
  std::vector<double> out(n);
  std::vector<std::uint32_t> arg(n);
  const auto& k = table(backend_of(state));
  for (auto _ : state) {
    k.maxpool_forward(d, in, out, arg);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_DenseForwardBackward(benchmark::State& state) {
  const DenseDims d{64, 400, 64};
  const auto in = noise(d.batch * d.in_features, 5);
  const auto w = noise(d.out_features * d.in_features, 6);
  const auto b = noise(d.out_features, 7);
  const auto g = noise(d.batch * d.out_features, 8);
  std::vector<double> out(d.batch * d.out_features), din(in.size()), dw(w.size()), db(b.size());
  const auto& k = table(backend_of(state));
  for (auto _ : state) {
    k.dense_forward(d, in, w, b, out);
    k.dense_backward(d, in, w, g, din, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
  label(state);
}

// Full desk CNN training step on a batch of 64 MNIST-sized images.
void BM_DeskCnnGradients(benchmark::State& state) {
  SeededRng init(9);
  const Model model = Model::initialize(desk_cnn({1, 28, 28}, 10), init);
  Tensor batch({64, 1, 28, 28});
  for (auto& v : batch.values()) v = init.uniform();
  std::vector<std::size_t> labels(64);
  for (auto& y : labels) y = init.below(10);
  const Backend be = backend_of(state);
  for (auto _ : state) {
    SeededRng masks(1);
    auto g = parameter_gradients(model, batch, labels, masks, Mode::train, be);
    benchmark::DoNotOptimize(g.loss);
  }
  label(state);
}

}  // namespace

BENCHMARK(BM_ConvForward)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MaxPool)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DenseForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DeskCnnGradients)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
