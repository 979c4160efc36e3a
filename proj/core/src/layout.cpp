#include "toydiff/layout.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "toydiff/tensor.hpp"

namespace toydiff {

void Box::validate() const {
  check(std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1),
        "box: non-finite coordinate");
  check(0 <= x0 && x1 <= 1 && 0 <= y0 && y1 <= 1, "box: coordinates outside [0,1]");
  check(x0 < x1 && y0 < y1, "box: zero or negative area");
}

double box_iou(const Box& a, const Box& b) {
  double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

void LayoutSpec::validate() const {
  check(!bindings.empty(), "layout: needs at least one binding");
  int n = static_cast<int>(prompt_tokens.size());
  std::set<int> seen_subjects;
  for (const SubjectBinding& b : bindings) {
    b.box.validate();
    check(!b.subject_tokens.empty(), "layout: binding with no subject tokens");
    for (int tok : b.subject_tokens) {
      check(tok >= 0 && tok < n, "layout: subject token index out of range");
      check(seen_subjects.insert(tok).second,
            "layout: duplicate subject token across bindings");
    }
    for (int tok : b.attribute_tokens) {
      check(tok >= 0 && tok < n, "layout: attribute token index out of range");
      check(std::find(b.subject_tokens.begin(), b.subject_tokens.end(), tok) ==
                b.subject_tokens.end(),
            "layout: token listed as both subject and attribute");
    }
  }
}

int BinaryMask::count() const {
  int c = 0;
  for (uint8_t v : grid) c += v;
  return c;
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (uint8_t& v : out.grid) v = v ? 0 : 1;
  return out;
}

BinaryMask rasterize_mask(const Box& box, int h, int w) {
  box.validate();
  check(h >= 1 && w >= 1, "rasterize_mask: resolution must be >= 1");
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.grid.assign(static_cast<size_t>(h) * w, 0);
  int set = 0;
  for (int r = 0; r < h; ++r) {
    double y = (r + 0.5) / h;
    for (int c = 0; c < w; ++c) {
      double x = (c + 0.5) / w;
      if (box.contains(x, y)) {
        m.grid[static_cast<size_t>(r) * w + c] = 1;
        ++set;
      }
    }
  }
  if (set == 0) {
    int r = std::min(h - 1, static_cast<int>(box.cy() * h));
    int c = std::min(w - 1, static_cast<int>(box.cx() * w));
    m.grid[static_cast<size_t>(r) * w + c] = 1;
  }
  return m;
}

std::pair<BinaryMask, BinaryMask> union_foreground(const LayoutSpec& layout, int h, int w) {
  layout.validate();
  BinaryMask m;
  m.h = h;
  m.w = w;
  m.grid.assign(static_cast<size_t>(h) * w, 0);
  for (const SubjectBinding& b : layout.bindings) {
    BinaryMask bm = rasterize_mask(b.box, h, w);
    for (size_t i = 0; i < m.grid.size(); ++i) m.grid[i] |= bm.grid[i];
  }
  return {m, m.complement()};
}

LayoutSpec parse_layout(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("layout: malformed text: ") + e.what());
  }
  LayoutSpec spec;
  try {
    check(j.value("schema", 0) == 1, "layout: unsupported schema version");
    spec.prompt_tokens = j.at("prompt").get<std::vector<int>>();
    for (const auto& s : j.at("subjects")) {
      SubjectBinding b;
      b.subject_tokens = s.at("tokens").get<std::vector<int>>();
      auto bx = s.at("box").get<std::vector<double>>();
      check(bx.size() == 4, "layout: box must have 4 coordinates");
      b.box = {bx[0], bx[1], bx[2], bx[3]};
      if (s.contains("attributes"))
        b.attribute_tokens = s.at("attributes").get<std::vector<int>>();
      spec.bindings.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("layout: malformed text: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string serialize_layout(const LayoutSpec& layout) {
  layout.validate();
  nlohmann::json j;
  j["schema"] = 1;
  j["prompt"] = layout.prompt_tokens;
  j["subjects"] = nlohmann::json::array();
  for (const SubjectBinding& b : layout.bindings) {
    nlohmann::json s;
    s["tokens"] = b.subject_tokens;
    s["box"] = {b.box.x0, b.box.y0, b.box.x1, b.box.y1};
    s["attributes"] = b.attribute_tokens;
    j["subjects"].push_back(std::move(s));
  }
  return j.dump(2);
}

}  // namespace toydiff
