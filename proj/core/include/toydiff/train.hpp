#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "toydiff/model.hpp"
#include "toydiff/rng.hpp"
#include "toydiff/scene.hpp"
#include "toydiff/schedule.hpp"

namespace toydiff {

struct TrainConfig {
  int steps = 9000;
  int batch = 32;
  double lr = 3e-4;
  int warmup = 200;          // linear lr ramp-up steps; cosine decay after
  double ema_decay = 0.999;  // weight EMA used as the final model; 0 disables
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 1.0;        // global-norm clip; 0 disables
  double caption_dropout = 0.1;  // fraction of null-caption batches entries
  int holdout = 64;              // scenes reserved for evaluation
  int log_every = 100;

  void validate() const {
    check(steps >= 0 && batch >= 1 && holdout >= 1, "train: bad sizes");
    check(lr > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0,
          "train: bad optimizer settings");
    check(warmup >= 0, "train: bad warmup");
    check(ema_decay >= 0 && ema_decay < 1, "train: bad ema decay");
    check(caption_dropout >= 0 && caption_dropout <= 1, "train: bad dropout");
  }

  // linear warmup, then cosine decay to zero over the remaining steps
  double lr_at(int step) const {
    if (warmup > 0 && step < warmup) return lr * (step + 1) / warmup;
    if (steps <= warmup) return lr;
    double p = static_cast<double>(step - warmup) / (steps - warmup);
    return lr * 0.5 * (1.0 + std::cos(M_PI * p));
  }
};

struct TrainSample {
  Tensor<float> z0;
  std::vector<int> tokens;
  int t = 0;
  Tensor<float> noise;
};

// Deterministic sample stream: scene, timestep, noise draw, and caption
// dropout each come from a purpose-keyed counter stream, so sample g is the
// same regardless of batch layout. Holdout scenes occupy indices
// [0, holdout); training starts above them.
inline TrainSample make_sample(uint64_t seed, uint64_t index, const NoiseSchedule& schedule,
                               double caption_dropout) {
  TrainSample s;
  Philox scene_rng(seed, rng_stream::kSceneBase + index);
  SceneSpec scene = sample_scene(scene_rng);
  s.z0 = render_scene(scene);
  s.tokens = scene_caption(scene);
  Philox noise_rng(seed, rng_stream::kNoiseBase + index);
  s.t = 1 + static_cast<int>(noise_rng.next_below(schedule.T_train));
  s.noise = noise_rng.normal_tensor<float>(s.z0.shape);
  if (caption_dropout > 0) {
    Philox drop_rng(seed, rng_stream::kDropBase + index);
    if (drop_rng.next_double() < caption_dropout) s.tokens = vocab::null_caption();
  }
  return s;
}

// mean per-element epsilon-MSE over the reserved holdout scenes, with
// timesteps spread deterministically across the schedule
inline double holdout_mse(const DenoiserParams<float>& params, const NoiseSchedule& schedule,
                          uint64_t seed, int holdout) {
  double total = 0;
  int64_t count = 0;
  for (int i = 0; i < holdout; ++i) {
    TrainSample s = make_sample(seed, static_cast<uint64_t>(i), schedule,
                                /*caption_dropout=*/0.0);
    s.t = 1 + static_cast<int>((static_cast<int64_t>(i) * 9973) % schedule.T_train);
    Tensor<float> zt = schedule.add_noise(s.z0, s.noise, s.t);
    Tape<float> tape;
    auto zl = tape.leaf(std::move(zt), /*track=*/false);
    const Tensor<float>& eps_hat =
        tape.val(denoiser_forward(tape, params, zl, s.t, s.tokens, false).eps);
    for (int64_t j = 0; j < eps_hat.numel(); ++j) {
      double d = static_cast<double>(eps_hat.data[j]) - s.noise.data[j];
      total += d * d;
    }
    count += eps_hat.numel();
  }
  return total / static_cast<double>(count);
}

struct TrainResult {
  DenoiserParams<float> params;
  double baseline_mse = 0;  // holdout MSE of the untrained initialization
  double final_mse = 0;
  std::vector<std::pair<int, double>> loss_curve;  // (step, batch loss)
};

// epsilon-prediction MSE training with Adam and classifier-free-guidance
// caption dropout
inline TrainResult train_denoiser(const ModelConfig& mc, const TrainConfig& tc,
                                  const NoiseSchedule& schedule, uint64_t seed) {
  mc.validate();
  tc.validate();
  TrainResult result;
  result.params = init_params<float>(mc, seed);
  DenoiserParams<float>& params = result.params;
  result.baseline_mse = holdout_mse(params, schedule, seed, tc.holdout);

  // Adam state per parameter tensor, plus the weight EMA that becomes the
  // final model (early steps use a shorter effective horizon so short runs
  // still track the optimized weights)
  std::vector<Tensor<float>> m, v, ema;
  for (const auto& t : params.tensors) {
    m.emplace_back(t->shape);
    v.emplace_back(t->shape);
    ema.push_back(*t);
  }

  uint64_t next_index = static_cast<uint64_t>(tc.holdout);
  for (int step = 0; step < tc.steps; ++step) {
    Tape<float> tape;
    auto leaves = ParamLeaves<float>::attach(tape, params, /*track=*/true);
    std::vector<Tape<float>::Ref> sample_losses;
    for (int b = 0; b < tc.batch; ++b) {
      TrainSample s = make_sample(seed, next_index++, schedule, tc.caption_dropout);
      Tensor<float> zt = schedule.add_noise(s.z0, s.noise, s.t);
      auto zl = tape.leaf(std::move(zt), /*track=*/false);
      auto eps_hat = denoiser_forward(tape, params, leaves, zl, s.t, s.tokens, false).eps;
      auto err = tape.sub(eps_hat, tape.constant(std::move(s.noise)));
      sample_losses.push_back(tape.mean(tape.square(err)));
    }
    auto loss = tape.mean(tape.stack_scalars(sample_losses));
    double loss_val = tape.scalar_val(loss);
    if (!std::isfinite(loss_val))
      throw std::runtime_error("train: loss diverged (non-finite) at step " +
                               std::to_string(step));
    if (step % tc.log_every == 0 || step + 1 == tc.steps)
      result.loss_curve.emplace_back(step, loss_val);
    tape.backward(loss);

    // gather gradients; clip by global norm; Adam update
    double sq_norm = 0;
    std::vector<const Tensor<float>*> grads(params.tensors.size());
    for (size_t p = 0; p < params.tensors.size(); ++p) {
      grads[p] = &tape.grad(leaves.refs[p]);
      if (grads[p]->data.empty()) grads[p] = nullptr;
      if (grads[p])
        for (float g : grads[p]->data) sq_norm += static_cast<double>(g) * g;
    }
    double clip_scale = 1.0;
    if (tc.grad_clip > 0 && sq_norm > tc.grad_clip * tc.grad_clip)
      clip_scale = tc.grad_clip / std::sqrt(sq_norm);
    double bias1 = 1.0 - std::pow(tc.beta1, step + 1);
    double bias2 = 1.0 - std::pow(tc.beta2, step + 1);
    double lr = tc.lr_at(step);
    double decay = std::min(tc.ema_decay, (1.0 + step) / (10.0 + step));
    for (size_t p = 0; p < params.tensors.size(); ++p) {
      if (!grads[p]) continue;
      Tensor<float>& w = *params.tensors[p];
      for (int64_t i = 0; i < w.numel(); ++i) {
        double g = grads[p]->data[i] * clip_scale;
        double mi = tc.beta1 * m[p].data[i] + (1 - tc.beta1) * g;
        double vi = tc.beta2 * v[p].data[i] + (1 - tc.beta2) * g * g;
        m[p].data[i] = static_cast<float>(mi);
        v[p].data[i] = static_cast<float>(vi);
        w.data[i] -=
            static_cast<float>(lr * (mi / bias1) / (std::sqrt(vi / bias2) + tc.adam_eps));
      }
      if (tc.ema_decay > 0)
        for (int64_t i = 0; i < w.numel(); ++i)
          ema[p].data[i] = static_cast<float>(decay * ema[p].data[i] +
                                              (1.0 - decay) * w.data[i]);
    }
  }
  if (tc.ema_decay > 0 && tc.steps > 0)
    for (size_t p = 0; p < params.tensors.size(); ++p) *params.tensors[p] = ema[p];
  result.final_mse = holdout_mse(params, schedule, seed, tc.holdout);
  return result;
}

}  // namespace toydiff
