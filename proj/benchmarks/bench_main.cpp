#include <benchmark/benchmark.h>

#include "gaf/trainer.hpp"

namespace gaf {
namespace {

void BM_Conv1d(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(0, 0);
  const Tensor x = standard_normal(T, 16, rng);
  const Tensor k = reshape(standard_normal(3 * 16, 16, rng), {3, 16, 16});
  const Tensor b = Tensor::zeros({16});
  for (auto _ : state) benchmark::DoNotOptimize(conv1d(x, k, b, 1, Padding::kSame));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T));
}
BENCHMARK(BM_Conv1d)->Arg(128)->Arg(512);

void BM_Conv1dBackward(benchmark::State& state) {
  Rng rng = make_rng(0, 0);
  Tensor x = standard_normal(128, 16, rng);
  Tensor k = reshape(standard_normal(3 * 16, 16, rng), {3, 16, 16});
  k.set_requires_grad(true);
  for (auto _ : state) {
    k.zero_grad();
    sum(conv1d(x, k, Tensor(), 1, Padding::kSame)).backward();
  }
}
BENCHMARK(BM_Conv1dBackward);

// One stage-2 pass over a single default-length sequence.
void BM_Stage2Step(benchmark::State& state) {
  DatasetSpec spec;
  spec.num_sequences = 8;
  spec.num_eval = 0;
  const auto data = generate(spec);
  GafModels m = GafModels::create(ModelConfig::for_data(data), 0);
  Trainer trainer(m, TrainConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_stage2(std::span(data).first(1)));
}
BENCHMARK(BM_Stage2Step)->Unit(benchmark::kMillisecond);

void BM_EvaluateMap(benchmark::State& state) {
  DatasetSpec spec;
  spec.num_sequences = 50;
  spec.num_eval = 0;
  const auto data = generate(spec);
  std::vector<DetectionResult> results;
  Rng rng = make_rng(1, 0);
  std::uniform_real_distribution<double> jitter(-3, 3), score(0, 1);
  for (const auto& seq : data) {
    DetectionResult r{seq.seq_id, {}};
    for (int rep = 0; rep < 20; ++rep) {
      for (const auto& iv : seq.intervals) {
        const double s = iv.start + jitter(rng), e = iv.end + jitter(rng);
        r.proposals.push_back({s, std::max(s + 1, e), iv.class_id, score(rng)});
      }
    }
    results.push_back(std::move(r));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_map(results, data, kDefaultIouThresholds));
}
BENCHMARK(BM_EvaluateMap)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace gaf

BENCHMARK_MAIN();
