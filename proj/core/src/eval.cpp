#include "toydiff/eval.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

#include "toydiff/sampler.hpp"
#include "toydiff/scene.hpp"

namespace toydiff {

namespace {

constexpr int kSide = 32;
constexpr int kMinComponentPixels = 6;
constexpr double kForegroundDist = 0.28;     // RGB distance from background, [0,1] scale
constexpr double kStripeAutocorr = -0.25;    // lag-2 threshold for striped
constexpr double kStripeVarianceFloor = 1e-6;

struct Rgb {
  double r = 0, g = 0, b = 0;
};

inline Rgb pixel(const Tensor<float>& img, int y, int x) {
  auto v = [&](int c) {
    return (static_cast<double>(img.data[(static_cast<size_t>(c) * kSide + y) * kSide + x]) +
            1.0) /
           2.0;
  };
  return {v(0), v(1), v(2)};
}

inline double dist2(const Rgb& a, const Rgb& b) {
  double dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
  return dr * dr + dg * dg + db * db;
}

// modal quantized border color (1/16 buckets), refined to the bucket mean
Rgb estimate_background(const Tensor<float>& img) {
  std::map<std::array<int, 3>, std::vector<Rgb>> buckets;
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      if (y != 0 && y != kSide - 1 && x != 0 && x != kSide - 1) continue;
      Rgb p = pixel(img, y, x);
      std::array<int, 3> key = {static_cast<int>(p.r * 16), static_cast<int>(p.g * 16),
                                static_cast<int>(p.b * 16)};
      buckets[key].push_back(p);
    }
  const std::vector<Rgb>* best = nullptr;
  for (const auto& [key, pixels] : buckets)
    if (!best || pixels.size() > best->size()) best = &pixels;
  Rgb bg;
  for (const Rgb& p : *best) {
    bg.r += p.r;
    bg.g += p.g;
    bg.b += p.b;
  }
  double n = static_cast<double>(best->size());
  return {bg.r / n, bg.g / n, bg.b / n};
}

struct Component {
  std::vector<int> pixels;  // flat y*32+x
  int x0 = kSide, y0 = kSide, x1 = -1, y1 = -1;  // inclusive bounds
};

std::vector<Component> find_components(const std::vector<uint8_t>& fg) {
  std::vector<Component> comps;
  std::vector<uint8_t> seen(fg.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(fg.size()); ++start) {
    if (!fg[start] || seen[start]) continue;
    Component c;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      c.pixels.push_back(p);
      int y = p / kSide, x = p % kSide;
      c.x0 = std::min(c.x0, x);
      c.x1 = std::max(c.x1, x);
      c.y0 = std::min(c.y0, y);
      c.y1 = std::max(c.y1, y);
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= kSide || nx < 0 || nx >= kSide) continue;
        int np = ny * kSide + nx;
        if (fg[np] && !seen[np]) {
          seen[np] = 1;
          stack.push_back(np);
        }
      }
    }
    comps.push_back(std::move(c));
  }
  return comps;
}

// best pixel-overlap (Jaccard) against same-size rendered templates; raw
// overlap tolerates the one-pixel rasterization shifts that throw off
// moment-based features on thin arms
int classify_shape(const Component& c) {
  int h = c.y1 - c.y0 + 1, w = c.x1 - c.x0 + 1;
  std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
  for (int p : c.pixels) {
    int y = p / kSide - c.y0, x = p % kSide - c.x0;
    mask[static_cast<size_t>(y) * w + x] = 1;
  }
  int best = vocab::kCircle;
  double best_j = -1;
  for (int shape : vocab::kShapes) {
    std::vector<uint8_t> tmpl = shape_mask(shape, h, w);
    int inter = 0, uni = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
      inter += mask[i] & tmpl[i];
      uni += mask[i] | tmpl[i];
    }
    double j = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
    if (j > best_j) {
      best_j = j;
      best = shape;
    }
  }
  return best;
}

int classify_color(const Tensor<float>& img, const Component& c) {
  // bright half: for striped objects this selects the undarkened bands
  double lo = 1e300, hi = -1e300;
  std::vector<std::pair<double, Rgb>> lums;
  for (int p : c.pixels) {
    Rgb px = pixel(img, p / kSide, p % kSide);
    double lum = (px.r + px.g + px.b) / 3.0;
    lo = std::min(lo, lum);
    hi = std::max(hi, lum);
    lums.push_back({lum, px});
  }
  double thr = (lo + hi) / 2.0;
  Rgb mean;
  int n = 0;
  for (const auto& [lum, px] : lums)
    if (lum >= thr - 1e-12) {
      mean.r += px.r;
      mean.g += px.g;
      mean.b += px.b;
      ++n;
    }
  mean = {mean.r / n, mean.g / n, mean.b / n};
  int best = vocab::kRed;
  double best_d = 1e300;
  for (int color : vocab::kColors) {
    std::array<double, 3> ref = color_rgb(color);
    double d = dist2(mean, {ref[0], ref[1], ref[2]});
    if (d < best_d) {
      best_d = d;
      best = color;
    }
  }
  return best;
}

int classify_texture(const Tensor<float>& img, const Component& c) {
  int h = c.y1 - c.y0 + 1;
  std::vector<double> row_sum(h, 0), row_n(h, 0);
  for (int p : c.pixels) {
    int y = p / kSide;
    Rgb px = pixel(img, y, p % kSide);
    row_sum[y - c.y0] += (px.r + px.g + px.b) / 3.0;
    row_n[y - c.y0] += 1;
  }
  std::vector<double> rm;
  for (int y = 0; y < h; ++y)
    if (row_n[y] > 0) rm.push_back(row_sum[y] / row_n[y]);
  int n = static_cast<int>(rm.size());
  if (n < 4) return vocab::kSolid;
  double mean = 0;
  for (double v : rm) mean += v;
  mean /= n;
  double var = 0;
  for (double v : rm) var += (v - mean) * (v - mean);
  if (var / n < kStripeVarianceFloor) return vocab::kSolid;
  double cov = 0;
  for (int y = 0; y + 2 < n; ++y) cov += (rm[y] - mean) * (rm[y + 2] - mean);
  return (cov / var) < kStripeAutocorr ? vocab::kStriped : vocab::kSolid;
}

}  // namespace

std::vector<Detection> detect_objects(const Tensor<float>& image) {
  check(image.shape == std::vector<int>{3, kSide, kSide}, "detect: bad image shape");
  Rgb bg = estimate_background(image);
  std::vector<uint8_t> fg(static_cast<size_t>(kSide) * kSide, 0);
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x)
      fg[static_cast<size_t>(y) * kSide + x] =
          dist2(pixel(image, y, x), bg) > kForegroundDist * kForegroundDist ? 1 : 0;

  std::vector<Detection> dets;
  for (const Component& c : find_components(fg)) {
    if (static_cast<int>(c.pixels.size()) < kMinComponentPixels) continue;
    Detection d;
    d.shape = classify_shape(c);
    d.color = classify_color(image, c);
    d.texture = classify_texture(image, c);
    d.px0 = c.x0;
    d.py0 = c.y0;
    d.px1 = c.x1 + 1;
    d.py1 = c.y1 + 1;
    d.area = static_cast<int>(c.pixels.size());
    double sx = 0, sy = 0;
    for (int p : c.pixels) {
      sx += p % kSide + 0.5;
      sy += p / kSide + 0.5;
    }
    d.cx = sx / c.pixels.size() / kSide;
    d.cy = sy / c.pixels.size() / kSide;
    dets.push_back(d);
  }
  return dets;
}

namespace {

int expected_shape(const LayoutSpec& layout, const SubjectBinding& b) {
  for (int tok : b.subject_tokens) {
    int id = layout.prompt_tokens[tok];
    if (vocab::is_shape(id)) return id;
  }
  return layout.prompt_tokens[b.subject_tokens[0]];
}

}  // namespace

RunScore score_run(const std::vector<Detection>& detections, const LayoutSpec& layout) {
  layout.validate();
  RunScore s;
  s.detections = static_cast<int>(detections.size());
  s.bindings = layout.gamma();

  // candidate pairs: centroid-in-box first, then everything, each sorted by
  // centroid distance to the box center; greedy one-to-one
  std::vector<int> det_match(detections.size(), -1);
  std::vector<int> bind_match(layout.bindings.size(), -1);
  for (int phase = 0; phase < 2; ++phase) {
    std::vector<std::tuple<double, int, int>> cands;
    for (size_t di = 0; di < detections.size(); ++di) {
      if (det_match[di] >= 0) continue;
      for (size_t bi = 0; bi < layout.bindings.size(); ++bi) {
        if (bind_match[bi] >= 0) continue;
        const Box& box = layout.bindings[bi].box;
        if (phase == 0 && !box.contains(detections[di].cx, detections[di].cy)) continue;
        double dx = detections[di].cx - box.cx(), dy = detections[di].cy - box.cy();
        cands.emplace_back(dx * dx + dy * dy, static_cast<int>(di), static_cast<int>(bi));
      }
    }
    std::sort(cands.begin(), cands.end());
    for (const auto& [d, di, bi] : cands) {
      if (det_match[di] >= 0 || bind_match[bi] >= 0) continue;
      det_match[di] = bi;
      bind_match[bi] = di;
    }
  }

  int spatial_ok = 0, attr_ok = 0;
  for (size_t di = 0; di < detections.size(); ++di) {
    int bi = det_match[di];
    if (bi < 0) continue;
    ++s.matched;
    const SubjectBinding& b = layout.bindings[bi];
    const Detection& d = detections[di];
    if (d.shape == expected_shape(layout, b)) ++s.true_positives;
    if (b.box.contains(d.cx, d.cy)) ++spatial_ok;
    bool attrs = true;
    for (int tok : b.attribute_tokens) {
      int id = layout.prompt_tokens[tok];
      if (vocab::is_color(id))
        attrs = attrs && d.color == id;
      else if (vocab::is_texture(id))
        attrs = attrs && d.texture == id;
    }
    if (attrs) ++attr_ok;
  }

  s.precision = s.detections > 0
                    ? static_cast<double>(s.true_positives) / s.detections
                    : 1.0;
  s.recall = static_cast<double>(s.true_positives) / s.bindings;
  s.f1 = (s.precision + s.recall) > 0
             ? 2 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  s.spatial = s.matched > 0 ? static_cast<double>(spatial_ok) / s.matched : 0.0;
  s.attribute = s.matched > 0 ? static_cast<double>(attr_ok) / s.matched : 0.0;
  for (size_t di = 0; di < detections.size(); ++di) {
    if (det_match[di] >= 0) continue;
    bool inside_any = false;
    for (const SubjectBinding& b : layout.bindings)
      inside_any = inside_any || b.box.contains(detections[di].cx, detections[di].cy);
    if (!inside_any) s.leakage = 1;
  }
  return s;
}

std::vector<AblationRow> default_ablation_rows() {
  return {
      {"iou", true, false, false, false},
      {"iou+mask", true, true, false, false},
      {"iou+kl", true, false, true, false},
      {"iou+mask+kl", true, true, true, false},
      {"iou+mask+kl+att", true, true, true, true},
  };
}

BenchmarkResult run_benchmark(const DenoiserParams<float>& params,
                              const NoiseSchedule& schedule,
                              const std::vector<SuiteEntry>& suite,
                              const std::vector<uint64_t>& seeds,
                              const std::vector<AblationRow>& rows,
                              const GuidanceConfig<float>& base_config, int threads) {
  check(!suite.empty() && !seeds.empty() && !rows.empty(), "benchmark: empty inputs");
  auto start = std::chrono::steady_clock::now();
  BenchmarkResult result;

  struct Job {
    int row = 0, entry = 0, seed_index = 0;
  };
  std::vector<Job> jobs;
  for (int r = 0; r < static_cast<int>(rows.size()); ++r)
    for (int e = 0; e < static_cast<int>(suite.size()); ++e)
      for (int s = 0; s < static_cast<int>(seeds.size()); ++s) jobs.push_back({r, e, s});

  std::vector<RunRecord> records(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      GuidanceConfig<float> cfg = base_config;
      cfg.use_iou = rows[job.row].use_iou;
      cfg.use_mask = rows[job.row].use_mask;
      cfg.use_kl = rows[job.row].use_kl;
      cfg.use_att = rows[job.row].use_att;
      RunRecord rec;
      rec.entry_index = job.entry;
      rec.seed = seeds[job.seed_index];
      try {
        GenerateOptions opts;
        opts.keep_trace = false;
        GenerateResult<float> gen = generate(params, schedule, suite[job.entry].layout,
                                             rec.seed, cfg, opts);
        rec.score = score_run(detect_objects(gen.image), suite[job.entry].layout);
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.error = e.what();
      }
      records[i] = std::move(rec);
    }
  };
  int nthreads = std::max(1, threads);
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  result.rows.resize(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    MetricsReport& rep = result.rows[r];
    rep.row_name = rows[r].name;
    rep.row = rows[r];
  }
  for (size_t i = 0; i < jobs.size(); ++i) {
    MetricsReport& rep = result.rows[jobs[i].row];
    rep.per_run.push_back(records[i]);
    ++result.total_runs;
    if (records[i].failed) {
      ++rep.failures;
      ++result.total_failures;
      continue;
    }
    ++rep.runs;
    rep.precision += records[i].score.precision;
    rep.recall += records[i].score.recall;
    rep.f1 += records[i].score.f1;
    rep.spatial += records[i].score.spatial;
    rep.attribute += records[i].score.attribute;
    rep.leakage += records[i].score.leakage;
  }
  for (MetricsReport& rep : result.rows) {
    if (rep.runs == 0) continue;
    rep.precision /= rep.runs;
    rep.recall /= rep.runs;
    rep.f1 /= rep.runs;
    rep.spatial /= rep.runs;
    rep.attribute /= rep.runs;
    rep.leakage /= rep.runs;
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string format_benchmark_table(const BenchmarkResult& result) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-18s %6s %6s %6s %6s %6s %8s %6s\n", "row", "P",
                "R", "F1", "spat", "attr", "leakage", "fail");
  out += line;
  for (const MetricsReport& r : result.rows) {
    std::snprintf(line, sizeof(line), "%-18s %6.3f %6.3f %6.3f %6.3f %6.3f %8.3f %6d\n",
                  r.row_name.c_str(), r.precision, r.recall, r.f1, r.spatial, r.attribute,
                  r.leakage, r.failures);
    out += line;
  }
  std::snprintf(line, sizeof(line), "runs=%d failures=%d wall=%.1fs\n", result.total_runs,
                result.total_failures, result.wall_seconds);
  out += line;
  return out;
}

}  // namespace toydiff
