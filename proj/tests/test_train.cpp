// deterministic sample stream, caption dropout, and the training loop
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "toydiff/io.hpp"
#include "toydiff/train.hpp"

using namespace toydiff;

namespace {

// training renders 32x32 scenes, so only the transformer shrinks
ModelConfig small_config() {
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_blocks = 2;
  mc.d_ff = 64;
  mc.time_dim = 16;
  return mc;
}

}  // namespace

TEST_CASE("the sample stream is a pure function of (seed, index)") {
  NoiseSchedule sched = NoiseSchedule::cosine();
  for (uint64_t idx : {0ull, 7ull, 500ull}) {
    TrainSample a = make_sample(3, idx, sched, 0.1);
    TrainSample b = make_sample(3, idx, sched, 0.1);
    CHECK(a.z0.data == b.z0.data);
    CHECK(a.tokens == b.tokens);
    CHECK(a.t == b.t);
    CHECK(a.noise.data == b.noise.data);
    CHECK(a.t >= 1);
    CHECK(a.t <= sched.T_train);
    CHECK(a.z0.shape == std::vector<int>{3, 32, 32});
    CHECK(a.noise.shape == a.z0.shape);
  }
  // different indices give different scenes
  CHECK(make_sample(3, 1, sched, 0.0).z0.data != make_sample(3, 2, sched, 0.0).z0.data);
}

TEST_CASE("caption dropout swaps in the null caption at the pinned rate") {
  NoiseSchedule sched = NoiseSchedule::cosine();
  std::vector<int> null = vocab::null_caption();
  int dropped = 0;
  const int n = 2000;
  for (uint64_t i = 0; i < n; ++i) {
    TrainSample s = make_sample(11, i, sched, 0.5);
    TrainSample keep = make_sample(11, i, sched, 0.0);
    if (s.tokens == null && keep.tokens != null) {
      ++dropped;
    } else {
      CHECK(s.tokens == keep.tokens);  // dropout only ever nulls the caption
    }
    // dropout must not disturb the rest of the draw
    CHECK(s.t == keep.t);
    CHECK(s.noise.data == keep.noise.data);
  }
  CHECK(dropped > n / 2 - 100);
  CHECK(dropped < n / 2 + 100);

  for (uint64_t i = 0; i < 50; ++i)
    CHECK(make_sample(11, i, sched, 1.0).tokens == null);
}

TEST_CASE("holdout error is deterministic and near one for untrained weights") {
  NoiseSchedule sched = NoiseSchedule::cosine();
  DenoiserParams<float> params = init_params<float>(ModelConfig{}, 51);
  double a = holdout_mse(params, sched, 51, 64);
  double b = holdout_mse(params, sched, 51, 64);
  CHECK(a == b);
  // the zero-initialized output head predicts 0, so the error is E||eps||^2
  CHECK(a == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("a short run learns and reproduces bit-for-bit from its seed") {
  ModelConfig mc = small_config();
  TrainConfig tc;
  tc.steps = 40;
  tc.batch = 8;
  tc.holdout = 16;
  tc.log_every = 10;
  tc.warmup = 0;  // full step size from the start so 40 steps move the needle
  NoiseSchedule sched = NoiseSchedule::cosine();

  TrainResult r1 = train_denoiser(mc, tc, sched, 5);
  CHECK(r1.baseline_mse == doctest::Approx(1.0).epsilon(0.1));
  CHECK(r1.final_mse < r1.baseline_mse);
  REQUIRE(!r1.loss_curve.empty());
  CHECK(r1.loss_curve.front().first == 0);
  CHECK(r1.loss_curve.back().first == 39);
  for (const auto& [step, loss] : r1.loss_curve) CHECK(std::isfinite(loss));
  // early batch loss starts near 1 and the curve comes down
  CHECK(r1.loss_curve.front().second == doctest::Approx(1.0).epsilon(0.15));
  CHECK(r1.loss_curve.back().second < r1.loss_curve.front().second);

  TrainResult r2 = train_denoiser(mc, tc, sched, 5);
  CHECK(weights_checksum(r2.params) == weights_checksum(r1.params));
  CHECK(r2.final_mse == r1.final_mse);

  TrainResult r3 = train_denoiser(mc, tc, sched, 6);
  CHECK(weights_checksum(r3.params) != weights_checksum(r1.params));
}

TEST_CASE("learning rate ramps linearly then decays on a half cosine") {
  TrainConfig tc;
  tc.steps = 1000;
  tc.lr = 4e-4;
  tc.warmup = 100;
  CHECK(tc.lr_at(0) == doctest::Approx(4e-6).epsilon(1e-12));
  CHECK(tc.lr_at(49) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(tc.lr_at(99) == doctest::Approx(4e-4).epsilon(1e-12));
  CHECK(tc.lr_at(100) == doctest::Approx(4e-4).epsilon(1e-12));
  CHECK(tc.lr_at(550) == doctest::Approx(2e-4).epsilon(1e-12));  // cosine midpoint
  CHECK(tc.lr_at(999) < 1e-8);
  for (int s = tc.warmup; s + 1 < tc.steps; ++s) CHECK(tc.lr_at(s + 1) <= tc.lr_at(s));

  // the weight EMA is part of the deterministic result
  ModelConfig mc = small_config();
  TrainConfig small;
  small.steps = 6;
  small.batch = 2;
  small.holdout = 4;
  small.warmup = 0;
  NoiseSchedule sched = NoiseSchedule::cosine();
  TrainConfig raw = small;
  raw.ema_decay = 0.0;
  TrainResult with_ema = train_denoiser(mc, small, sched, 11);
  TrainResult without = train_denoiser(mc, raw, sched, 11);
  CHECK(weights_checksum(with_ema.params) != weights_checksum(without.params));
  CHECK(weights_checksum(train_denoiser(mc, small, sched, 11).params) ==
        weights_checksum(with_ema.params));
}

TEST_CASE("training aborts with a diagnostic when the loss diverges") {
  ModelConfig mc = small_config();
  TrainConfig tc;
  tc.steps = 30;
  tc.batch = 2;
  tc.holdout = 2;
  tc.lr = 1e12;      // blow the weights up on purpose
  tc.grad_clip = 0;  // and disable the safety net
  NoiseSchedule sched = NoiseSchedule::cosine();
  CHECK_THROWS_WITH_AS(train_denoiser(mc, tc, sched, 5),
                       doctest::Contains("diverged"), std::runtime_error);
}
