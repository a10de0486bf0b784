#include <random>

#include <benchmark/benchmark.h>

#include "tridecon/inference.hpp"
#include "tridecon/iqa.hpp"
#include "tridecon/nn/autograd.hpp"
#include "tridecon/nn/networks.hpp"
#include "tridecon/phantom.hpp"

using namespace tridecon;

namespace {

nn::Tensor<float> noise_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  nn::Tensor<float> t(n, c, h, w);
  for (auto& v : t.data) v = nd(rng);
  return t;
}

Image2D noise_image(int w, int h, float scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, scale);
  Image2D img(w, h);
  for (float& v : img.pixels()) v = u(rng);
  return img;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  nn::NoGradGuard no_grad;
  const auto x = nn::constant(noise_tensor(1, ch, size, size, 1));
  const auto w = nn::constant(noise_tensor(ch, ch, 3, 3, 2));
  const auto b = nn::constant(nn::Tensor<float>(1, ch, 1, 1));
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Args({8, 64})->Args({32, 64})->Args({64, 64})->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  const auto x = nn::parameter(noise_tensor(1, ch, 64, 64, 1));
  const auto w = nn::parameter(noise_tensor(ch, ch, 3, 3, 2));
  const auto b = nn::parameter(nn::Tensor<float>(1, ch, 1, 1));
  for (auto _ : state) {
    auto loss = nn::mean_squared_error_to(nn::conv2d(x, w, b, 1, 1), 0.0f);
    nn::backward(loss);
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_GeneratorForward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const nn::ResnetGenerator<float> g({8, 3, 2}, 7);
  const NetworkGenerator gen(g, SliceAxis::XY);
  const Image2D img = noise_image(size, size, 1.0f, 3);
  for (auto _ : state) benchmark::DoNotOptimize(gen.apply(img));
}
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_BrisqueFeatures(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Image2D img = noise_image(size, size, 255.0f, 4);
  for (auto _ : state) benchmark::DoNotOptimize(brisque_features(img));
}
BENCHMARK(BM_BrisqueFeatures)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Fusion(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  PhantomConfig c;
  c.shape = {n, n, n};
  const Phantom p = make_phantom(c);
  const FusionWeights w(1, 1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(fuse_volumes(p.clean, p.degraded, p.clean, w));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * n * n);
}
BENCHMARK(BM_Fusion)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
