// Parallel kernels against their serial reference implementations.
#include <benchmark/benchmark.h>

#include <vector>

#include "libra/boxes.hpp"
#include "libra/reference.hpp"
#include "libra/rng.hpp"
#include "libra/sampler.hpp"
#include "libra/scenario.hpp"
#include "libra/tensor.hpp"

using namespace libra;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

template <auto Fn>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
}

template <auto Fn>
void bm_softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a));
}

template <auto Fn>
void bm_maxpool(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({16, n, n}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, Extent2{n / 4, n / 4}));
}

template <auto Fn>
void bm_resize(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({16, n / 4, n / 4}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, Extent2{n, n}));
}

template <auto Fn>
void bm_mean_stack(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Tensor> ts;
  for (std::uint64_t s = 0; s < 4; ++s) ts.push_back(random_tensor({16, n, n}, 10 + s));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(ts));
}

template <auto Fn>
void bm_conv1x1(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor w = random_tensor({32, 32}, 6), x = random_tensor({32, n, n}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(w, x));
}

template <auto Fn>
void bm_selection_counts(benchmark::State& state) {
  const Scenario s = gen_scenario(ScenarioConfig{}, 1);
  const auto pool = assign(s.candidates, s.ground_truths, AssignConfig{});
  SamplerConfig cfg;
  const auto trials = static_cast<std::uint64_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fn(pool, cfg, SamplingStrategy::iou_balanced, trials));
  }
}

Tensor mean_stack_parallel(const std::vector<Tensor>& ts) { return mean_stack(ts); }
Tensor mean_stack_serial(const std::vector<Tensor>& ts) { return reference::mean_stack(ts); }

}  // namespace

BENCHMARK(bm_matmul<matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<reference::matmul>)->Name("matmul/reference")->Arg(64)->Arg(256);
BENCHMARK(bm_softmax<softmax_rows>)->Name("softmax_rows/parallel")->Arg(256)->Arg(1024);
BENCHMARK(bm_softmax<reference::softmax_rows>)->Name("softmax_rows/reference")->Arg(256)->Arg(1024);
BENCHMARK(bm_maxpool<maxpool_to>)->Name("maxpool_to/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_maxpool<reference::maxpool_to>)->Name("maxpool_to/reference")->Arg(64)->Arg(256);
BENCHMARK(bm_resize<resize_nearest>)->Name("resize_nearest/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_resize<reference::resize_nearest>)->Name("resize_nearest/reference")->Arg(64)->Arg(256);
BENCHMARK(bm_mean_stack<mean_stack_parallel>)->Name("mean_stack/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_mean_stack<mean_stack_serial>)->Name("mean_stack/reference")->Arg(64)->Arg(256);
BENCHMARK(bm_conv1x1<conv1x1>)->Name("conv1x1/parallel")->Arg(32)->Arg(128);
BENCHMARK(bm_conv1x1<reference::conv1x1>)->Name("conv1x1/reference")->Arg(32)->Arg(128);
BENCHMARK(bm_selection_counts<selection_counts>)->Name("selection_counts/parallel")->Arg(1000);
BENCHMARK(bm_selection_counts<reference::selection_counts>)->Name("selection_counts/reference")->Arg(1000);

BENCHMARK_MAIN();
