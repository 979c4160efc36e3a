#pragma once

#include <cmath>
#include <vector>

#include "toydiff/guidance.hpp"
#include "toydiff/layout.hpp"
#include "toydiff/model.hpp"
#include "toydiff/rng.hpp"
#include "toydiff/schedule.hpp"

namespace toydiff {

// Deterministic DDIM update:
//   x0_hat = (z_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)
//   z_prev = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev) * eps
// At t_prev = 0 (ab = 1) this returns x0_hat.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps, int t, int t_prev,
                    const NoiseSchedule& schedule) {
  check(z_t.same_shape(eps), "ddim_step: shape mismatch");
  check(t > t_prev && t_prev >= 0, "ddim_step: need t > t_prev >= 0");
  double ab_t = schedule.at(t), ab_prev = schedule.at(t_prev);
  double sa_t = std::sqrt(ab_t), sn_t = std::sqrt(1.0 - ab_t);
  double sa_p = std::sqrt(ab_prev), sn_p = std::sqrt(1.0 - ab_prev);
  Tensor<T> out = z_t;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double x0 = (static_cast<double>(z_t.data[i]) - sn_t * eps.data[i]) / sa_t;
    out.data[i] = static_cast<T>(sa_p * x0 + sn_p * eps.data[i]);
  }
  return out;
}

// classifier-free guidance: eps_uncond + w * (eps_cond - eps_uncond)
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, T w) {
  check(eps_cond.same_shape(eps_uncond), "cfg_combine: shape mismatch");
  check(w >= 0, "cfg_combine: negative guidance scale");
  Tensor<T> out = eps_cond;
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[i] = eps_uncond.data[i] + w * (eps_cond.data[i] - eps_uncond.data[i]);
  return out;
}

template <typename T>
struct StepRecord {
  int step_index = 0;
  int t = 0, t_prev = 0;
  double latent_norm = 0;  // after the DDIM update
};

template <typename T>
struct GenerateResult {
  Tensor<T> image;  // {3, side, side} in [-1, 1]
  std::vector<RefineRecord<T>> refine_trace;
  std::vector<StepRecord<T>> step_trace;
};

struct GenerateOptions {
  bool guidance = true;      // run latent refinement before each step
  bool keep_trace = true;    // collect per-iteration/step records
};

// Full sampling loop: seeded Gaussian start, then per step refine -> cond +
// uncond forwards -> CFG -> DDIM. The final prediction is clamped to [-1,1].
template <typename T>
GenerateResult<T> generate(const DenoiserParams<T>& params, const NoiseSchedule& schedule,
                           const LayoutSpec& layout, uint64_t seed,
                           const GuidanceConfig<T>& cfg,
                           const GenerateOptions& opts = {}) {
  cfg.validate();
  layout.validate();
  check(static_cast<int>(layout.prompt_tokens.size()) <= vocab::kMaxTokens,
        "generate: prompt exceeds max token length");
  const ModelConfig& mc = params.cfg;

  Philox rng(seed, rng_stream::kInitNoise);
  Tensor<T> z = rng.template normal_tensor<T>({mc.channels, mc.image, mc.image});

  GenerateResult<T> out;
  std::vector<int> null_tokens = vocab::null_caption();
  std::vector<int> ts = schedule.inference_timesteps(cfg.total_steps);
  for (int i = 0; i < cfg.total_steps; ++i) {
    int t = ts[i];
    int t_prev = (i + 1 < cfg.total_steps) ? ts[i + 1] : 0;
    if (opts.guidance)
      z = refine_latent(z, t, i, params, layout, cfg,
                        opts.keep_trace ? &out.refine_trace : nullptr);
    Tensor<T> eps_c, eps_u;
    {
      Tape<T> tape;
      auto zl = tape.leaf(z, /*track=*/false);
      eps_c = tape.val(denoiser_forward(tape, params, zl, t, layout.prompt_tokens,
                                        /*capture=*/false)
                           .eps);
    }
    {
      Tape<T> tape;
      auto zl = tape.leaf(z, /*track=*/false);
      eps_u = tape.val(
          denoiser_forward(tape, params, zl, t, null_tokens, /*capture=*/false).eps);
    }
    Tensor<T> eps = cfg_combine(eps_c, eps_u, cfg.cfg_scale);
    z = ddim_step(z, eps, t, t_prev, schedule);
    check(z.all_finite(), "generate: non-finite latent at step " + std::to_string(i));
    if (opts.keep_trace) out.step_trace.push_back({i, t, t_prev, l2_norm(z)});
  }
  for (auto& v : z.data) v = std::min(T(1), std::max(T(-1), v));
  out.image = std::move(z);
  return out;
}

}  // namespace toydiff
