#include <benchmark/benchmark.h>

#include "padprobe/model.hpp"
#include "padprobe/sim.hpp"

using namespace padprobe;

static void BM_SimStep(benchmark::State& state) {
  const EnvContext env = make_border_env(8);
  WorldState s = init_world(7, env);
  for (auto _ : state) {
    s = step(s);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_SimStep);

static void BM_BackboneForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.backbone.input_mode = InputMode::Visual;
  cfg.frame_w = 64;
  cfg.frame_h = 64;
  Model<float> model(cfg, 1);
  Tensor<float> frames;
  frames.resize(3 * cfg.t_ref, cfg.frame_h, cfg.frame_w);
  Rng rng(2);
  for (auto& v : frames.v) v = (float)rng.uniform();
  Workspace<float> ws;
  for (auto _ : state) {
    Rng r(3);
    const Tensor<float> map = model.backbone_forward(&frames, r, nullptr, ws);
    benchmark::DoNotOptimize(map.v.data());
  }
}
BENCHMARK(BM_BackboneForward);

static void BM_BackboneForwardSynthetic(benchmark::State& state) {
  ModelConfig cfg;
  cfg.backbone.input_mode = InputMode::FixedRandom;
  Model<float> model(cfg, 1);
  Workspace<float> ws;
  for (auto _ : state) {
    Rng r(3);
    const Tensor<float> map = model.backbone_forward(nullptr, r, nullptr, ws);
    benchmark::DoNotOptimize(map.v.data());
  }
}
BENCHMARK(BM_BackboneForwardSynthetic);

static void BM_RoiPool(benchmark::State& state) {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  Tensor<float> map;
  map.resize(cfg.backbone.feature_channels, cfg.frame_h / 4, cfg.frame_w / 4);
  Rng rng(5);
  for (auto& v : map.v) v = (float)rng.uniform(-1.0, 1.0);
  const Box b{10.0, 14.0, 26.0, 30.0};
  for (auto _ : state) {
    const Tensor<float> out = model.roi_pool(map, b, nullptr);
    benchmark::DoNotOptimize(out.v.data());
  }
}
BENCHMARK(BM_RoiPool);

static void BM_RolloutGivenMap(benchmark::State& state) {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  Tensor<float> map;
  map.resize(cfg.backbone.feature_channels, cfg.frame_h / 4, cfg.frame_w / 4);
  Rng rng(5);
  for (auto& v : map.v) v = (float)rng.uniform(-1.0, 1.0);
  WindowInput<float> in;
  Rng gen(6);
  for (int t = 0; t < kRefFrames; ++t)
    for (int i = 0; i < kNumBalls; ++i) {
      Box& box = in.ref_boxes[(size_t)t][(size_t)i];
      box.x0 = gen.uniform(0.0, 58.0);
      box.y0 = gen.uniform(0.0, 58.0);
      box.x1 = box.x0 + 4.0;
      box.y1 = box.y0 + 4.0;
    }
  in.targets.assign(kPredHorizon, {});
  for (auto _ : state) {
    const BoxSeq<float> pred = model.rollout_given_map(map, in, kPredHorizon, nullptr);
    benchmark::DoNotOptimize(pred.data());
  }
}
BENCHMARK(BM_RolloutGivenMap);

BENCHMARK_MAIN();
