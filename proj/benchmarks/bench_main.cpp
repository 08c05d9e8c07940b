#include <benchmark/benchmark.h>

#include <memory>

#include "pseudoloop/box_ops.hpp"
#include "pseudoloop/driver.hpp"
#include "pseudoloop/evaluator.hpp"
#include "pseudoloop/simulator.hpp"
#include "support/generators.hpp"

using namespace pseudoloop;

namespace {

void BM_ClassWiseNms(benchmark::State& state) {
  testsupport::Rng rng(7);
  PredictionSet p;
  while (p.size() < static_cast<std::size_t>(state.range(0))) {
    auto more = testsupport::random_predictions(rng, 50, 5, 20);
    p.detections.insert(p.detections.end(), more.detections.begin(), more.detections.end());
  }
  for (auto _ : state) benchmark::DoNotOptimize(class_wise_nms(p, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClassWiseNms)->Arg(1'000)->Arg(10'000);

void BM_Evaluate(benchmark::State& state) {
  WorldParams wp;
  World w = make_world(wp);
  SimulatorConfig cfg;
  auto preds = simulate_predictions(w, coverage(w.visible_train, w.hidden_gt), cfg,
                                    w.query_image_ids(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(w.query_gt, preds, 0.5));
}
BENCHMARK(BM_Evaluate);

void BM_Pipeline(benchmark::State& state) {
  auto w = std::make_shared<const World>(make_world(WorldParams{}));
  PipelineConfig cfg;
  for (auto _ : state) {
    SimulatorBackend backend(w, SimulatorConfig{});
    benchmark::DoNotOptimize(
        run_pipeline(w->visible_train, w->train_image_ids(), cfg, &w->query_gt, backend));
  }
}
BENCHMARK(BM_Pipeline)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
