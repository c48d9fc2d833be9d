#include <benchmark/benchmark.h>

#include "cytocon/augment.hpp"
#include "cytocon/evaluate.hpp"
#include "cytocon/model.hpp"
#include "cytocon/nn.hpp"
#include "cytocon/objective.hpp"
#include "cytocon/rng.hpp"

using namespace cytocon;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({16, 32, side, side}, 1);
  const Tensor w = random_tensor({32, 32, 3, 3}, 2);
  const Tensor b({32});
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b, {1, 1}));
}
BENCHMARK(BM_Conv3x3Forward)->Arg(16)->Arg(32);

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({16, 32, side, side}, 1);
  const Tensor w = random_tensor({32, 32, 3, 3}, 2);
  const Tensor b({32});
  const Tensor g = random_tensor({16, 32, side, side}, 3);
  for (auto _ : state) {
    nn::Conv2dContext<float> ctx;
    nn::conv2d(x, w, b, {1, 1}, &ctx);
    benchmark::DoNotOptimize(nn::conv2d_backward(g, w, ctx));
  }
}
BENCHMARK(BM_Conv3x3Backward)->Arg(16)->Arg(32);

void BM_DeskEncoderForward(benchmark::State& state) {
  EncoderConfig e;
  e.stem_stride = 2;
  e.input_side = 64;
  const auto params = init_params<float>({e, {}, 0}, 1);
  Rng rng(4);
  Tensor x({64, 1, 64, 64});
  for (auto& v : x.storage()) v = static_cast<float>(rng.uniform());
  for (auto _ : state) benchmark::DoNotOptimize(encoder_forward(params, e, x, {nn::Mode::kTrain}));
}
BENCHMARK(BM_DeskEncoderForward)->Unit(benchmark::kMillisecond);

void BM_ContrastiveLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor z = nn::l2_normalize(random_tensor({n, 128}, 5));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 10);
  for (auto _ : state) benchmark::DoNotOptimize(supervised_contrastive_loss(z, y, 0.07));
}
BENCHMARK(BM_ContrastiveLoss)->Arg(64)->Arg(512);

void BM_WardCluster(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({n, 128}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(ward_cluster(x, 10));
}
BENCHMARK(BM_WardCluster)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

void BM_AugmentPipeline(benchmark::State& state) {
  Rng rng(7);
  Patch src(104, 35.0);
  for (auto& v : src.pixels) v = static_cast<float>(rng.uniform());
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(apply_pipeline(src, draw_params(seed++), {64, false}));
}
BENCHMARK(BM_AugmentPipeline);

}  // namespace
BENCHMARK_MAIN();
