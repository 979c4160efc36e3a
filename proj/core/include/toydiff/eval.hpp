#pragma once

#include <string>
#include <vector>

#include "toydiff/guidance.hpp"
#include "toydiff/layout.hpp"
#include "toydiff/model.hpp"
#include "toydiff/schedule.hpp"
#include "toydiff/suite.hpp"
#include "toydiff/tensor.hpp"

namespace toydiff {

struct Detection {
  int shape = -1, color = -1, texture = -1;  // vocabulary tokens
  int px0 = 0, py0 = 0, px1 = 0, py1 = 0;    // pixel bbox, half-open
  double cx = 0, cy = 0;                     // centroid, normalized [0,1]
  int area = 0;                              // pixels
};

// Connected-component detector over a {3, 32, 32} image in [-1,1]:
// background from the modal quantized border color, 4-connectivity grouping,
// components under 6 pixels dropped, shape by maximum pixel overlap against
// same-size rendered templates, color by nearest vocabulary color of the
// bright half, texture by a row-band frequency test.
std::vector<Detection> detect_objects(const Tensor<float>& image);

struct RunScore {
  double precision = 0, recall = 0, f1 = 0;
  double spatial = 0, attribute = 0;
  int leakage = 0;  // 1 if any unmatched detection sits outside every box
  int true_positives = 0, detections = 0, bindings = 0, matched = 0;
};

// Greedy one-to-one matching (centroid-in-box pairs first, then nearest
// centroid), then counting/spatial/attribute/leakage metrics.
RunScore score_run(const std::vector<Detection>& detections, const LayoutSpec& layout);

struct AblationRow {
  std::string name;
  bool use_iou = true, use_mask = false, use_kl = false, use_att = false;
};

// the five-row grid: iou, iou+mask, iou+kl, iou+mask+kl, full
std::vector<AblationRow> default_ablation_rows();

struct RunRecord {
  int entry_index = 0;
  uint64_t seed = 0;
  RunScore score;
  bool failed = false;
  std::string error;
};

struct MetricsReport {
  std::string row_name;
  AblationRow row;
  double precision = 0, recall = 0, f1 = 0, spatial = 0, attribute = 0, leakage = 0;
  int runs = 0, failures = 0;
  std::vector<RunRecord> per_run;
};

struct BenchmarkResult {
  std::vector<MetricsReport> rows;
  double wall_seconds = 0;
  int total_runs = 0, total_failures = 0;
};

// Full ablation benchmark: every row x suite entry x seed, aggregated
// per-row. Failed runs are recorded and excluded from the means.
BenchmarkResult run_benchmark(const DenoiserParams<float>& params,
                              const NoiseSchedule& schedule,
                              const std::vector<SuiteEntry>& suite,
                              const std::vector<uint64_t>& seeds,
                              const std::vector<AblationRow>& rows,
                              const GuidanceConfig<float>& base_config, int threads = 1);

// one-line-per-row text table of a benchmark result
std::string format_benchmark_table(const BenchmarkResult& result);

}  // namespace toydiff
