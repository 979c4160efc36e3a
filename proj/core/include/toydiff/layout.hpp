#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace toydiff {

// Normalized axis-aligned box, x0<x1, y0<y1, all in [0,1].
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  void validate() const;
  double area() const { return (x1 - x0) * (y1 - y0); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool contains(double x, double y) const { return x0 <= x && x < x1 && y0 <= y && y < y1; }
};

double box_iou(const Box& a, const Box& b);

// One subject: prompt token indices, its box, and optional attribute tokens.
struct SubjectBinding {
  std::vector<int> subject_tokens;
  Box box;
  std::vector<int> attribute_tokens;
};

struct LayoutSpec {
  std::vector<int> prompt_tokens;
  std::vector<SubjectBinding> bindings;

  int gamma() const { return static_cast<int>(bindings.size()); }
  void validate() const;
};

// Row-major h*w grid of {0,1}.
struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> grid;

  uint8_t at(int r, int c) const { return grid[static_cast<size_t>(r) * w + c]; }
  int count() const;
  BinaryMask complement() const;
};

// Cell (r,c) is set iff its center lies in the box; if no center lands
// inside, the cell containing the box center is set instead, so a valid box
// never rasterizes to an empty mask.
BinaryMask rasterize_mask(const Box& box, int h, int w);

// OR of all binding boxes, plus its complement.
std::pair<BinaryMask, BinaryMask> union_foreground(const LayoutSpec& layout, int h, int w);

// Layout file schema: JSON {schema:1, prompt:[int...], subjects:[{tokens, box, attributes}]}.
LayoutSpec parse_layout(const std::string& text);
std::string serialize_layout(const LayoutSpec& layout);

}  // namespace toydiff
