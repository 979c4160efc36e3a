#include "toydiff/scene.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace toydiff {

std::array<double, 3> color_rgb(int color_token) {
  switch (color_token) {
    case vocab::kRed: return {1, 0, 0};
    case vocab::kGreen: return {0, 1, 0};
    case vocab::kBlue: return {0, 0, 1};
    case vocab::kYellow: return {1, 1, 0};
    case vocab::kPurple: return {1, 0, 1};
    case vocab::kWhite: return {1, 1, 1};
    default: throw std::invalid_argument("color_rgb: not a color token");
  }
}

namespace {

// box-local containment test, u and v in [0,1]
bool shape_inside(int shape, double u, double v) {
  switch (shape) {
    case vocab::kSquare:
      return true;
    case vocab::kCircle: {
      double du = 2 * u - 1, dv = 2 * v - 1;
      return du * du + dv * dv <= 1.0;
    }
    case vocab::kTriangle:  // isoceles, apex at the top center
      return std::abs(u - 0.5) <= 0.5 * v;
    case vocab::kCross:  // plus sign, arm thickness one third of the box
      return std::abs(u - 0.5) <= 1.0 / 6.0 || std::abs(v - 0.5) <= 1.0 / 6.0;
    default:
      throw std::invalid_argument("shape_inside: not a shape token");
  }
}

bool separated(const Box& a, const Box& b) {
  return a.x1 + kBoxGap <= b.x0 || b.x1 + kBoxGap <= a.x0 || a.y1 + kBoxGap <= b.y0 ||
         b.y1 + kBoxGap <= a.y0;
}

}  // namespace

std::vector<uint8_t> shape_mask(int shape_token, int h, int w) {
  check(h >= 1 && w >= 1, "shape_mask: bad resolution");
  std::vector<uint8_t> m(static_cast<size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      m[static_cast<size_t>(r) * w + c] =
          shape_inside(shape_token, (c + 0.5) / w, (r + 0.5) / h) ? 1 : 0;
  return m;
}

SceneSpec sample_scene(Philox& rng) {
  SceneSpec scene;
  scene.background = static_cast<int>(rng.next_below(kBackgroundLevels.size()));
  int count = 1 + static_cast<int>(rng.next_below(kSceneMaxObjects));

  // colors without replacement so every object is attributable by color
  std::vector<int> palette(std::begin(vocab::kColors), std::end(vocab::kColors));
  for (int i = 0; i < count; ++i) {
    SceneObject obj;
    size_t pick = rng.next_below(palette.size());
    obj.color = palette[pick];
    palette.erase(palette.begin() + pick);
    obj.shape = vocab::kShapes[rng.next_below(4)];
    obj.texture = vocab::kTextures[rng.next_below(2)];
    scene.objects.push_back(obj);
  }

  // box placement by rejection; an occasional full restart escapes greedy
  // prefixes that leave no room for the remaining boxes
  int attempts = 0;
  std::vector<Box> boxes;
  while (static_cast<int>(boxes.size()) < count) {
    if (attempts >= kSceneRejectionBudget)
      throw std::runtime_error("scene: box rejection budget exhausted after " +
                               std::to_string(attempts) + " attempts");
    ++attempts;
    double bw = rng.uniform(kBoxSizeMin, kBoxSizeMax);
    double bh = rng.uniform(kBoxSizeMin, kBoxSizeMax);
    double x0 = rng.uniform(0.0, 1.0 - bw);
    double y0 = rng.uniform(0.0, 1.0 - bh);
    Box b{x0, y0, x0 + bw, y0 + bh};
    bool ok = true;
    for (const Box& other : boxes)
      if (!separated(b, other)) {
        ok = false;
        break;
      }
    if (ok)
      boxes.push_back(b);
    else if (attempts % 64 == 0)
      boxes.clear();
  }
  for (int i = 0; i < count; ++i) scene.objects[i].box = boxes[i];
  return scene;
}

std::vector<int> scene_caption(const SceneSpec& scene) {
  std::vector<int> c;
  c.push_back(vocab::kBos);
  for (const SceneObject& o : scene.objects) {
    c.push_back(o.color);
    c.push_back(o.texture);
    c.push_back(o.shape);
    c.push_back(vocab::kSep);
  }
  check(c.size() <= vocab::kMaxTokens, "scene: caption overflows max token length");
  c.resize(vocab::kMaxTokens, vocab::kPad);
  return c;
}

LayoutSpec scene_layout(const SceneSpec& scene) {
  LayoutSpec layout;
  layout.prompt_tokens = scene_caption(scene);
  for (size_t o = 0; o < scene.objects.size(); ++o) {
    SubjectBinding b;
    int base = 1 + 4 * static_cast<int>(o);
    b.attribute_tokens = {base, base + 1};  // color, texture
    b.subject_tokens = {base + 2};          // shape
    b.box = scene.objects[o].box;
    layout.bindings.push_back(std::move(b));
  }
  layout.validate();
  return layout;
}

Tensor<float> render_scene(const SceneSpec& scene) {
  constexpr int kSide = 32;
  check(scene.background >= 0 &&
            scene.background < static_cast<int>(kBackgroundLevels.size()),
        "render: bad background index");
  float bg = static_cast<float>(2.0 * kBackgroundLevels[scene.background] - 1.0);
  Tensor<float> img({3, kSide, kSide});
  std::fill(img.data.begin(), img.data.end(), bg);
  for (const SceneObject& obj : scene.objects) {
    obj.box.validate();
    std::array<double, 3> rgb = color_rgb(obj.color);
    double bw = obj.box.x1 - obj.box.x0, bh = obj.box.y1 - obj.box.y0;
    for (int y = 0; y < kSide; ++y) {
      double py = (y + 0.5) / kSide;
      if (py < obj.box.y0 || py >= obj.box.y1) continue;
      bool dark_band = obj.texture == vocab::kStriped && (y / 2) % 2 == 1;
      for (int x = 0; x < kSide; ++x) {
        double px = (x + 0.5) / kSide;
        if (px < obj.box.x0 || px >= obj.box.x1) continue;
        if (!shape_inside(obj.shape, (px - obj.box.x0) / bw, (py - obj.box.y0) / bh))
          continue;
        for (int c = 0; c < 3; ++c) {
          double v = dark_band ? 0.5 * rgb[c] : rgb[c];
          img.data[(static_cast<size_t>(c) * kSide + y) * kSide + x] =
              static_cast<float>(2.0 * v - 1.0);
        }
      }
    }
  }
  return img;
}

}  // namespace toydiff
