#include <random>

#include <benchmark/benchmark.h>

#include "tdet/detector.hpp"
#include "tdet/geometry.hpp"
#include "tdet/inference.hpp"
#include "tdet/ops.hpp"
#include "tdet/shapegen.hpp"
#include "tdet/text_encoder.hpp"
#include "tdet/trainer.hpp"

using namespace tdet;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0, 1);
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

void BM_conv2d_forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({1, c, 32, 32}, 1);
  const auto w = random_tensor({c * 2, c, 3, 3}, 2);
  const auto b = random_tensor({c * 2}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 2 * 9 * 32 * 32));
}
BENCHMARK(BM_conv2d_forward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_conv2d_backward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({1, c, 32, 32}, 1, true);
  auto w = random_tensor({c * 2, c, 3, 3}, 2, true);
  auto b = random_tensor({c * 2}, 3, true);
  for (auto _ : state) {
    sum(conv2d(x, w, b, 1, 1)).backward();
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_conv2d_backward)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_nms(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(0, 112), side(8, 32), score(0, 1);
  std::vector<BoxXYXY> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    boxes.push_back({x, y, x + side(rng), y + side(rng)});
    scores.push_back(score(rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, scores, 0.7));
}
BENCHMARK(BM_nms)->Arg(100)->Arg(1000)->Unit(benchmark::kMicrosecond);

void BM_text_encode(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto enc = TextEncoder<float>::init(Vocabulary::standard().size(), TextEncoderConfig{}, rng);
  const auto tokens = tokenize("the red circles", Vocabulary::standard());
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(tokens));
}
BENCHMARK(BM_text_encode)->Unit(benchmark::kMicrosecond);

void BM_detector_forward(benchmark::State& state) {
  const auto model = Detector<float>::init(ModelConfig::desk(), 6);
  const auto ex = generate_example(7, GenerationConfig::desk());
  for (auto _ : state) benchmark::DoNotOptimize(analyze(model, ex.image, ex.query.text));
}
BENCHMARK(BM_detector_forward)->Unit(benchmark::kMillisecond);

void BM_train_step(benchmark::State& state) {
  auto model = Detector<float>::init(ModelConfig::desk(), 6);
  const auto ex = generate_example(8, GenerationConfig::desk());
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step(model, ex, ++seed));
    model.zero_grad();
  }
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
