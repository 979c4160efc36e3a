#pragma once

#include <vector>

#include "toydiff/losses.hpp"
#include "toydiff/model.hpp"

namespace toydiff {

template <typename T>
struct GuidanceConfig {
  LossWeights<T> weights;
  int k_iters = 5;          // gradient iterations per guided timestep
  T alpha_start = T(30);    // latent step size at sampling step 0
  T alpha_end = T(8);       // latent step size at the last sampling step
  int window_mask_kl = 5;   // first sampling steps with mask + KL terms on
  int window_att = 18;      // first sampling steps with the association term on
  int window_iou = 18;      // first sampling steps with the IoU term on
  T tau_dis = T(10);        // clamp on the dissimilarity divergence
  T cfg_scale = T(5);       // classifier-free guidance scale
  int total_steps = 50;     // sampling steps
  // ablation switches: a disabled loss is off regardless of its window
  bool use_iou = true, use_mask = true, use_kl = true, use_att = true;

  void validate() const {
    weights.validate();
    check(k_iters >= 1, "guidance: k_iters must be >= 1");
    check(alpha_start >= alpha_end && alpha_end > 0, "guidance: need alpha_start >= alpha_end > 0");
    check(total_steps >= 1, "guidance: total_steps must be >= 1");
    check(window_mask_kl >= 0 && window_mask_kl <= total_steps &&
              window_att >= 0 && window_att <= total_steps &&
              window_iou >= 0 && window_iou <= total_steps,
          "guidance: windows must lie within [0, total_steps]");
    check(tau_dis > 0, "guidance: tau_dis must be positive");
    check(cfg_scale >= 0, "guidance: cfg_scale must be non-negative");
  }
};

// linear decay across all sampling steps
template <typename T>
T alpha_schedule(int step_index, const GuidanceConfig<T>& cfg) {
  check(step_index >= 0 && step_index < cfg.total_steps,
        "alpha_schedule: step index out of range");
  if (cfg.total_steps == 1) return cfg.alpha_start;
  return cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) *
                               static_cast<T>(step_index) /
                               static_cast<T>(cfg.total_steps - 1);
}

template <typename T>
ActiveFlags active_losses(int step_index, const GuidanceConfig<T>& cfg) {
  check(step_index >= 0 && step_index < cfg.total_steps,
        "active_losses: step index out of range");
  ActiveFlags f;
  f.iou = cfg.use_iou && step_index < cfg.window_iou;
  f.mask = cfg.use_mask && step_index < cfg.window_mask_kl;
  f.kl = cfg.use_kl && step_index < cfg.window_mask_kl;
  f.att = cfg.use_att && step_index < cfg.window_att;
  return f;
}

template <typename T>
struct GradientResult {
  Tensor<T> grad;
  LossBreakdown<T> breakdown;
  bool finite = true;
};

// d(total loss)/dz: attention-based terms via a capturing denoiser forward at
// (z, t), mask/KL terms directly on z; z_ref is never differentiated through.
template <typename T>
GradientResult<T> gradient_of_total(const Tensor<T>& z, const Tensor<T>& z_ref, int t,
                                    const DenoiserParams<T>& params,
                                    const LayoutSpec& layout, const LossWeights<T>& weights,
                                    const ActiveFlags& flags, T tau_dis) {
  GradientResult<T> out;
  out.grad = Tensor<T>(z.shape);
  out.breakdown.active = flags;
  if (!flags.any()) return out;

  Tape<T> tape;
  auto z_copy = z;
  auto zr = tape.leaf(std::move(z_copy), /*track=*/true);
  auto zero = tape.scalar(T(0));
  auto iou = zero, mask = zero, kl = zero, sim = zero, dis = zero;

  if (flags.iou || flags.att) {
    auto fwd = denoiser_forward(tape, params, zr, t, layout.prompt_tokens, /*capture=*/true);
    const AttentionBundle<T>& bundle = fwd.bundle;
    if (flags.iou) {
      std::vector<typename Tape<T>::Ref> cross_maps, self_maps;
      for (const SubjectBinding& b : layout.bindings) {
        cross_maps.push_back(aggregate_cross(tape, bundle, b.subject_tokens));
        self_maps.push_back(
            aggregate_self(tape, bundle, rasterize_mask(b.box, bundle.h, bundle.w)));
      }
      iou = tape.add(loss_iou(tape, cross_maps, layout, bundle.h, bundle.w),
                     loss_iou(tape, self_maps, layout, bundle.h, bundle.w));
    }
    if (flags.att) {
      sim = loss_sim(tape, bundle, layout);
      dis = loss_dis(tape, bundle, layout, tau_dis);
    }
  }
  if (flags.mask) {
    auto [fg, bg] = union_foreground(layout, z.shape[1], z.shape[2]);
    mask = loss_mask(tape, zr, z_ref, bg);
  }
  if (flags.kl) kl = loss_kl_prior(tape, zr);

  auto total = total_loss(tape, iou, mask, kl, sim, dis, weights, flags);
  out.breakdown = make_breakdown(tape.scalar_val(iou), tape.scalar_val(mask),
                                 tape.scalar_val(kl), tape.scalar_val(sim),
                                 tape.scalar_val(dis), weights, flags);
  if (tape.tracked(total)) {
    tape.backward(total);
    const Tensor<T>& g = tape.grad(zr);
    if (!g.data.empty()) out.grad = g;
  }
  out.finite = out.grad.all_finite() && std::isfinite(static_cast<double>(out.breakdown.total));
  return out;
}

template <typename T>
struct RefineRecord {
  int step_index = 0;  // sampling step
  int t = 0;           // raw schedule timestep
  int k = 0;           // inner iteration
  T alpha = 0;
  LossBreakdown<T> losses;
  double grad_norm = 0;
  bool aborted = false;  // non-finite gradient; latent kept as-is
};

// k_iters steps of z <- z - alpha_t * grad(total loss), with the background
// reference snapshotted once at entry. Identity outside all active windows.
template <typename T>
Tensor<T> refine_latent(const Tensor<T>& z_in, int t, int step_index,
                        const DenoiserParams<T>& params, const LayoutSpec& layout,
                        const GuidanceConfig<T>& cfg,
                        std::vector<RefineRecord<T>>* trace = nullptr) {
  cfg.validate();
  ActiveFlags flags = active_losses(step_index, cfg);
  if (!flags.any()) return z_in;

  const Tensor<T> z_ref = z_in;  // detached snapshot, fixed across iterations
  T alpha = alpha_schedule(step_index, cfg);
  Tensor<T> z = z_in;
  for (int k = 0; k < cfg.k_iters; ++k) {
    GradientResult<T> res =
        gradient_of_total(z, z_ref, t, params, layout, cfg.weights, flags, cfg.tau_dis);
    RefineRecord<T> rec{step_index, t, k, alpha, res.breakdown, l2_norm(res.grad),
                        !res.finite};
    if (trace) trace->push_back(rec);
    if (!res.finite) break;
    for (int64_t i = 0; i < z.numel(); ++i) z.data[i] -= alpha * res.grad.data[i];
  }
  return z;
}

}  // namespace toydiff
