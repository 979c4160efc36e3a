#pragma once

#include <vector>

#include "toydiff/attention.hpp"
#include "toydiff/layout.hpp"
#include "toydiff/tape.hpp"

namespace toydiff {

inline constexpr double kKlSmoothEps = 1e-10;  // added to distributions before logs
inline constexpr double kSigmaFloor = 1e-6;    // lower bound on latent std

template <typename T>
struct LossWeights {
  T mask = T(0.01);
  T kl = T(5);
  T sim = T(1);
  T dis = T(1);
  T att = T(1);

  void validate() const {
    check(mask >= 0 && kl >= 0 && sim >= 0 && dis >= 0 && att >= 0,
          "loss weights must be non-negative");
  }
};

struct ActiveFlags {
  bool iou = true, mask = true, kl = true, att = true;
  bool any() const { return iou || mask || kl || att; }
};

template <typename T>
struct LossBreakdown {
  T iou = 0, mask = 0, kl = 0, sim = 0, dis = 0, att = 0, total = 0;
  ActiveFlags active;
};

// Worst-subject neglect: max over subjects of 1 - max_cell(aggregated cross
// attention). Baseline diagnostic only; not part of the composite objective.
template <typename T>
typename Tape<T>::Ref loss_attend_excite(Tape<T>& tape, const AttentionBundle<T>& bundle,
                                         const LayoutSpec& layout) {
  std::vector<typename Tape<T>::Ref> terms;
  for (const SubjectBinding& b : layout.bindings) {
    auto agg = aggregate_cross(tape, bundle, b.subject_tokens);
    terms.push_back(tape.add_const(tape.neg(tape.max_all(agg)), T(1)));
  }
  return tape.max_all(tape.stack_scalars(terms));
}

// Per subject i with aggregated map A and box b_i:
//   L_i = 1 - sum(A[b_i]) / (sum(A[b_i]) + gamma * sum(A[complement(b_i)]))
// and the instance total is sum_i L_i^2. Call once for cross-derived maps and
// once for self-derived maps; the composite adds the two instances.
template <typename T>
typename Tape<T>::Ref loss_iou(Tape<T>& tape,
                               const std::vector<typename Tape<T>::Ref>& subject_maps,
                               const LayoutSpec& layout, int h, int w) {
  check(subject_maps.size() == layout.bindings.size(),
        "loss_iou: one aggregated map per binding required");
  T gamma = static_cast<T>(layout.gamma());
  std::vector<typename Tape<T>::Ref> terms;
  for (size_t i = 0; i < layout.bindings.size(); ++i) {
    const Tensor<T>& map = tape.val(subject_maps[i]);
    check(map.numel() == static_cast<int64_t>(h) * w,
          "loss_iou: map resolution mismatch with layout rasterization");
    BinaryMask m = rasterize_mask(layout.bindings[i].box, h, w);
    std::vector<int> in_cells, out_cells;
    for (int c = 0; c < h * w; ++c) (m.grid[c] ? in_cells : out_cells).push_back(c);
    auto inside = tape.sum(tape.gather(subject_maps[i], in_cells));
    typename Tape<T>::Ref denom = inside;
    if (!out_cells.empty()) {
      auto outside = tape.sum(tape.gather(subject_maps[i], out_cells));
      denom = tape.add(inside, tape.scale(outside, gamma));
    }
    auto li = tape.add_const(tape.neg(tape.div(inside, denom)), T(1));
    terms.push_back(tape.square(li));
  }
  return tape.sum(tape.stack_scalars(terms));
}

// L1 deviation of the background from a detached reference latent:
// sum |(z - z_ref) * complement_mask|, mask broadcast over channels.
// `normalize` divides by the background element count (off by default).
template <typename T>
typename Tape<T>::Ref loss_mask(Tape<T>& tape, typename Tape<T>::Ref z,
                                const Tensor<T>& z_ref, const BinaryMask& background,
                                bool normalize = false) {
  const Tensor<T>& zv = tape.val(z);
  check(zv.same_shape(z_ref), "loss_mask: latent shape mismatch");
  int64_t cells = static_cast<int64_t>(background.h) * background.w;
  check(zv.numel() % cells == 0, "loss_mask: mask does not tile the latent");
  int64_t channels = zv.numel() / cells;
  Tensor<T> weights(zv.shape);
  int64_t bg_count = 0;
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t i = 0; i < cells; ++i) {
      weights.data[c * cells + i] = static_cast<T>(background.grid[i]);
      bg_count += background.grid[i];
    }
  if (normalize && bg_count > 0)
    for (auto& v : weights.data) v /= static_cast<T>(bg_count);
  auto diff = tape.abs(tape.sub(z, tape.constant(z_ref)));
  return tape.weighted_sum(diff, std::move(weights));
}

// KL(N(mu_z, sigma_z) || N(0,1)) with scalar moments over the whole latent:
// ln(1/sigma) + (sigma^2 + mu^2 - 1)/2, population sigma floored at 1e-6.
template <typename T>
typename Tape<T>::Ref loss_kl_prior(Tape<T>& tape, typename Tape<T>::Ref z) {
  check(tape.val(z).numel() >= 2, "loss_kl_prior: latent needs >= 2 elements");
  auto mu = tape.mean(z);
  auto var = tape.mean(tape.square(tape.sub(z, mu)));
  // max(sigma, 1e-6) == sqrt(max(var, 1e-12)); the variance-side clamp keeps
  // the sqrt gradient finite at var = 0
  auto var_f = tape.clamp_min(var, static_cast<T>(kSigmaFloor * kSigmaFloor));
  auto log_sigma = tape.scale(tape.log(var_f), T(0.5));
  auto quad = tape.scale(tape.add_const(tape.add(var_f, tape.square(mu)), T(-1)), T(0.5));
  return tape.add(tape.neg(log_sigma), quad);
}

// 0.5 * KL(P||Q) + 0.5 * KL(Q||P); both arguments are epsilon-smoothed and
// renormalized before the log terms.
template <typename T>
typename Tape<T>::Ref sym_kl(Tape<T>& tape, typename Tape<T>::Ref p,
                             typename Tape<T>::Ref q) {
  check(tape.val(p).numel() == tape.val(q).numel(), "sym_kl: length mismatch");
  auto smooth = [&](typename Tape<T>::Ref d) {
    auto s = tape.add_const(d, static_cast<T>(kKlSmoothEps));
    return tape.div(s, tape.sum(s));
  };
  auto ps = smooth(p);
  auto qs = smooth(q);
  auto log_ratio = tape.sub(tape.log(ps), tape.log(qs));
  auto kl_pq = tape.sum(tape.mul(ps, log_ratio));
  auto kl_qp = tape.sum(tape.mul(qs, tape.neg(log_ratio)));
  return tape.scale(tape.add(kl_pq, kl_qp), T(0.5));
}

namespace detail {

template <typename T>
typename Tape<T>::Ref subject_patch(Tape<T>& tape, const AttentionBundle<T>& bundle,
                                    const std::vector<int>& tokens, const Box& box) {
  auto agg = aggregate_cross(tape, bundle, tokens);
  return extract_patch(tape, agg, box, bundle.h, bundle.w);
}

}  // namespace detail

// Mean over bindings that carry attributes of sym_kl between the subject's
// and the attributes' renormalized attention patches over the subject's box.
template <typename T>
typename Tape<T>::Ref loss_sim(Tape<T>& tape, const AttentionBundle<T>& bundle,
                               const LayoutSpec& layout) {
  std::vector<typename Tape<T>::Ref> terms;
  for (const SubjectBinding& b : layout.bindings) {
    if (b.attribute_tokens.empty()) continue;
    auto ps = detail::subject_patch(tape, bundle, b.subject_tokens, b.box);
    auto pa = detail::subject_patch(tape, bundle, b.attribute_tokens, b.box);
    terms.push_back(sym_kl(tape, ps, pa));
  }
  if (terms.empty()) return tape.scalar(T(0));
  return tape.mean(tape.stack_scalars(terms));
}

// Mean over ordered pairs (i, j), j != i with attributes on j, of
// -min(sym_kl(patch(s_i, b_i), patch(a_j, b_i)), tau_dis): pushes subject i
// away from the attributes of other subjects inside its own box.
template <typename T>
typename Tape<T>::Ref loss_dis(Tape<T>& tape, const AttentionBundle<T>& bundle,
                               const LayoutSpec& layout, T tau_dis) {
  check(tau_dis > 0, "loss_dis: tau_dis must be positive");
  std::vector<typename Tape<T>::Ref> terms;
  size_t nb = layout.bindings.size();
  for (size_t i = 0; i < nb; ++i) {
    for (size_t j = 0; j < nb; ++j) {
      if (j == i || layout.bindings[j].attribute_tokens.empty()) continue;
      const Box& bi = layout.bindings[i].box;
      auto ps = detail::subject_patch(tape, bundle, layout.bindings[i].subject_tokens, bi);
      auto pa = detail::subject_patch(tape, bundle, layout.bindings[j].attribute_tokens, bi);
      terms.push_back(tape.neg(tape.clamp_max(sym_kl(tape, ps, pa), tau_dis)));
    }
  }
  if (terms.empty()) return tape.scalar(T(0));
  return tape.mean(tape.stack_scalars(terms));
}

// total = iou + lambda_mask*mask + lambda_kl*kl + lambda_att*(lambda_sim*sim
// + lambda_dis*dis), with inactive terms contributing zero.
template <typename T>
typename Tape<T>::Ref total_loss(Tape<T>& tape, typename Tape<T>::Ref iou,
                                 typename Tape<T>::Ref mask, typename Tape<T>::Ref kl,
                                 typename Tape<T>::Ref sim, typename Tape<T>::Ref dis,
                                 const LossWeights<T>& weights, const ActiveFlags& active) {
  weights.validate();
  auto total = tape.scalar(T(0));
  if (active.iou) total = tape.add(total, iou);
  if (active.mask) total = tape.add(total, tape.scale(mask, weights.mask));
  if (active.kl) total = tape.add(total, tape.scale(kl, weights.kl));
  if (active.att) {
    auto att = tape.add(tape.scale(sim, weights.sim), tape.scale(dis, weights.dis));
    total = tape.add(total, tape.scale(att, weights.att));
  }
  return total;
}

// Plain-value composite for reporting; same arithmetic as total_loss.
template <typename T>
LossBreakdown<T> make_breakdown(T iou, T mask, T kl, T sim, T dis,
                                const LossWeights<T>& weights, const ActiveFlags& active) {
  weights.validate();
  LossBreakdown<T> b;
  b.active = active;
  b.iou = active.iou ? iou : T(0);
  b.mask = active.mask ? mask : T(0);
  b.kl = active.kl ? kl : T(0);
  b.sim = active.att ? sim : T(0);
  b.dis = active.att ? dis : T(0);
  b.att = weights.sim * b.sim + weights.dis * b.dis;
  b.total = b.iou + weights.mask * b.mask + weights.kl * b.kl +
            (active.att ? weights.att * b.att : T(0));
  return b;
}

}  // namespace toydiff
