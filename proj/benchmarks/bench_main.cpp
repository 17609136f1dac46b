#include <benchmark/benchmark.h>

#include "kifsod/detector.hpp"
#include "kifsod/efficiency.hpp"
#include "kifsod/evalkit.hpp"
#include "kifsod/ki_init.hpp"

using namespace kifsod;

namespace {

const DatasetSpec& spec() {
  static const DatasetSpec s;
  return s;
}

const DetectorParams& model() {
  static const DetectorParams p = init_detector({}, spec().split().all(), ClassifierKind::linear, 1);
  return p;
}

const std::vector<AnnotatedImage>& images() {
  static const auto v = generate_dataset(spec(), 16, spec().split().all());
  return v;
}

void BM_GenerateImage(benchmark::State& state) {
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_image(spec(), spec().base_class_ids, i++));
}
BENCHMARK(BM_GenerateImage);

void BM_Detect(benchmark::State& state) {
  const DetectOptions opts{static_cast<int>(state.range(0))};
  for (auto _ : state) benchmark::DoNotOptimize(detect(model(), images()[0], 0, opts));
}
BENCHMARK(BM_Detect)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
  const std::vector<AnnotatedImage> batch(images().begin(), images().begin() + state.range(0));
  DetectorParams grad = zeros_like(model());
  for (auto _ : state) benchmark::DoNotOptimize(compute_loss_and_gradient(model(), batch, {}, {}, grad));
}
BENCHMARK(BM_LossAndGradient)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_CollectFeatures(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(collect_features(model(), images(), 1, 3));
}
BENCHMARK(BM_CollectFeatures)->Unit(benchmark::kMillisecond);

void BM_EstimateFlops(benchmark::State& state) {
  const ArchDescriptor arch = describe_architecture(model(), 64, 100);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_flops(arch, Phase::train_forward));
}
BENCHMARK(BM_EstimateFlops);

void BM_ComputeAp(benchmark::State& state) {
  const auto dets = detect_all(model(), images());
  for (auto _ : state) benchmark::DoNotOptimize(compute_ap(dets, images(), 0.5, spec().split()));
  state.counters["detections"] = static_cast<double>(dets.size());
}
BENCHMARK(BM_ComputeAp)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
