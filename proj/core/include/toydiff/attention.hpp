#pragma once

#include <vector>

#include "toydiff/layout.hpp"
#include "toydiff/tape.hpp"

namespace toydiff {

inline constexpr double kPatchNormEps = 1e-8;  // below this mass, fall back to uniform

// How per-(layer, head) maps are combined into one aggregated map. Mean is
// the default; sum is kept as an experimentation toggle.
enum class AggMode { kMean, kSum };

// Captured attention, living on a tape so losses can differentiate through
// it. cross maps are hw x n, self maps hw x hw, all row-stochastic.
template <typename T>
struct AttentionBundle {
  std::vector<typename Tape<T>::Ref> cross;
  std::vector<typename Tape<T>::Ref> self;
  int h = 0, w = 0;  // spatial grid; hw = h*w query cells
  int n = 0;         // prompt token count
  int t = 0;         // denoiser timestep the maps were captured at

  int hw() const { return h * w; }
};

// Mean over (layer, head) maps and over the token set: one [hw] vector.
template <typename T>
typename Tape<T>::Ref aggregate_cross(Tape<T>& tape, const AttentionBundle<T>& bundle,
                                      const std::vector<int>& tokens,
                                      AggMode mode = AggMode::kMean) {
  check(!bundle.cross.empty(), "aggregate_cross: empty bundle");
  check(!tokens.empty(), "aggregate_cross: empty token set");
  for (int tok : tokens)
    check(tok >= 0 && tok < bundle.n, "aggregate_cross: token index out of range");
  // column selector: picks the token columns of an hw x n map and averages them
  Tensor<T> sel({bundle.n, 1});
  for (int tok : tokens) sel.data[tok] += T(1) / static_cast<T>(tokens.size());
  auto sel_ref = tape.constant(std::move(sel));
  typename Tape<T>::Ref acc;
  for (auto m : bundle.cross) {
    auto col = tape.matmul(m, sel_ref);
    acc = acc.valid() ? tape.add(acc, col) : col;
  }
  if (mode == AggMode::kMean && bundle.cross.size() > 1)
    acc = tape.scale(acc, T(1) / static_cast<T>(bundle.cross.size()));
  return tape.reshape(acc, {bundle.hw()});
}

// Mean over (layer, head) self maps, then mean over rows whose query cell is
// inside the mask: attention mass received from the subject's queries.
template <typename T>
typename Tape<T>::Ref aggregate_self(Tape<T>& tape, const AttentionBundle<T>& bundle,
                                     const BinaryMask& box_mask,
                                     AggMode mode = AggMode::kMean) {
  check(!bundle.self.empty(), "aggregate_self: empty bundle");
  check(box_mask.h == bundle.h && box_mask.w == bundle.w,
        "aggregate_self: mask resolution mismatch");
  int inside = box_mask.count();
  check(inside > 0, "aggregate_self: empty mask");
  // row selector: averages the rows of an hw x hw map whose query is masked
  Tensor<T> sel({1, bundle.hw()});
  for (int i = 0; i < bundle.hw(); ++i)
    if (box_mask.grid[i]) sel.data[i] = T(1) / static_cast<T>(inside);
  auto sel_ref = tape.constant(std::move(sel));
  typename Tape<T>::Ref acc;
  for (auto m : bundle.self) {
    auto row = tape.matmul(sel_ref, m);
    acc = acc.valid() ? tape.add(acc, row) : row;
  }
  if (mode == AggMode::kMean && bundle.self.size() > 1)
    acc = tape.scale(acc, T(1) / static_cast<T>(bundle.self.size()));
  return tape.reshape(acc, {bundle.hw()});
}

// Restrict an aggregated [hw] map to the cells of `box` and renormalize to a
// probability vector; near-zero mass falls back to the uniform distribution.
template <typename T>
typename Tape<T>::Ref extract_patch(Tape<T>& tape, typename Tape<T>::Ref map,
                                    const Box& box, int h, int w) {
  check(tape.val(map).numel() == static_cast<int64_t>(h) * w,
        "extract_patch: map/resolution mismatch");
  BinaryMask m = rasterize_mask(box, h, w);
  std::vector<int> cells;
  for (int i = 0; i < h * w; ++i)
    if (m.grid[i]) cells.push_back(i);
  int k = static_cast<int>(cells.size());
  auto patch = tape.gather(map, cells);
  T mass = 0;
  for (int c : cells) mass += tape.val(map).data[c];
  if (static_cast<double>(mass) < kPatchNormEps)
    return tape.constant(Tensor<T>::full({k}, T(1) / static_cast<T>(k)));
  return tape.div(patch, tape.sum(patch));
}

}  // namespace toydiff
