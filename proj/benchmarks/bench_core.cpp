// microbenchmarks for the hot paths: denoiser forward, guidance gradient,
// full refine iteration, and the detector

#include <benchmark/benchmark.h>

#include "toydiff/eval.hpp"
#include "toydiff/guidance.hpp"
#include "toydiff/model.hpp"
#include "toydiff/sampler.hpp"
#include "toydiff/scene.hpp"

namespace {

using namespace toydiff;

SceneSpec make_scene() {
  Philox rng(11, rng_stream::kSceneBase);
  return sample_scene(rng);
}

struct Fixture {
  ModelConfig mc;
  DenoiserParams<float> params;
  NoiseSchedule schedule;
  SceneSpec scene;
  LayoutSpec layout;
  Tensor<float> z;

  Fixture()
      : params(init_params<float>(mc, 7)),
        schedule(NoiseSchedule::cosine()),
        scene(make_scene()),
        layout(scene_layout(scene)),
        z(Philox(3, rng_stream::kInitNoise).normal_tensor<float>({3, 32, 32})) {}
};

Fixture& fx() {
  static Fixture f;
  return f;
}

void forward_once(bool capture, benchmark::State& state) {
  Fixture& f = fx();
  for (auto _ : state) {
    Tape<float> tape;
    auto out = denoiser_forward(tape, f.params, tape.leaf(f.z, false), 500,
                                f.layout.prompt_tokens, capture);
    benchmark::DoNotOptimize(tape.val(out.eps).data.data());
  }
}

void BM_forward(benchmark::State& state) { forward_once(false, state); }
void BM_forward_capture(benchmark::State& state) { forward_once(true, state); }

void BM_guidance_gradient(benchmark::State& state) {
  Fixture& f = fx();
  ActiveFlags flags{true, true, true, true};
  LossWeights<float> weights;
  for (auto _ : state) {
    auto res = gradient_of_total(f.z, f.z, 500, f.params, f.layout, weights, flags,
                                 GuidanceConfig<float>().tau_dis);
    benchmark::DoNotOptimize(res.grad.data.data());
  }
}

void BM_refine_step(benchmark::State& state) {
  Fixture& f = fx();
  GuidanceConfig<float> cfg;
  cfg.k_iters = 1;
  for (auto _ : state) {
    Tensor<float> out = refine_latent(f.z, 980, 0, f.params, f.layout, cfg);
    benchmark::DoNotOptimize(out.data.data());
  }
}

void BM_render_detect(benchmark::State& state) {
  Fixture& f = fx();
  for (auto _ : state) {
    Tensor<float> img = render_scene(f.scene);
    auto dets = detect_objects(img);
    benchmark::DoNotOptimize(dets.data());
  }
}

BENCHMARK(BM_forward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_forward_capture)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_guidance_gradient)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_refine_step)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_render_detect)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
