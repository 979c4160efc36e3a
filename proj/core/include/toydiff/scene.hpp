#pragma once

#include <array>
#include <vector>

#include "toydiff/layout.hpp"
#include "toydiff/model.hpp"
#include "toydiff/rng.hpp"
#include "toydiff/tensor.hpp"

namespace toydiff {

struct SceneObject {
  int shape = 0;    // vocab shape token
  int color = 0;    // vocab color token
  int texture = 0;  // vocab texture token
  Box box;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  int background = 0;  // index into kBackgroundLevels
};

// scene generation constants
inline constexpr double kBoxSizeMin = 0.25, kBoxSizeMax = 0.55;
inline constexpr double kBoxGap = 0.0625;  // min normalized separation (2 px at 32)
inline constexpr int kSceneMaxObjects = 3;
// three boxes with unlucky size draws can need many restart rounds; at ~50%
// success per 64-attempt round this budget makes exhaustion astronomically rare
inline constexpr int kSceneRejectionBudget = 20000;
inline constexpr std::array<double, 3> kBackgroundLevels = {0.03, 0.10, 0.17};

// RGB in [0,1] for a vocabulary color token
std::array<double, 3> color_rgb(int color_token);

// Uniformly samples 1-3 objects with pairwise-separated boxes (rejection
// sampling) and scene-distinct colors; throws if the rejection budget is
// exhausted, reporting the attempt count.
SceneSpec sample_scene(Philox& rng);

// [BOS, color, texture, shape, SEP] per object, padded to the max length
std::vector<int> scene_caption(const SceneSpec& scene);

// layout bindings matching scene_caption token positions: the shape token is
// the subject, color + texture tokens are the attributes
LayoutSpec scene_layout(const SceneSpec& scene);

// Deterministic rasterization to {3, 32, 32} in [-1,1]. Pixel-center
// containment; striped texture draws 2-pixel horizontal bands alternating
// between the object color and its 50% darkening.
Tensor<float> render_scene(const SceneSpec& scene);

// shape mask on an h x w grid for a box spanning the whole grid; used by the
// renderer and as the detector's classification template
std::vector<uint8_t> shape_mask(int shape_token, int h, int w);

}  // namespace toydiff
