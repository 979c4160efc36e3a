#pragma once

#include <cstdint>
#include <string>

#include "toydiff/guidance.hpp"
#include "toydiff/model.hpp"
#include "toydiff/train.hpp"

namespace toydiff {

// Everything a run needs, serialized into every manifest so any output can be
// reproduced bit-for-bit on the same build.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GuidanceConfig<float> guidance;
  int schedule_T = 1000;
  double schedule_s = 0.008;
  uint64_t train_seed = 0;
  int image_scale = 8;  // nearest-neighbor upscale for saved images

  void validate() const {
    model.validate();
    train.validate();
    guidance.validate();
    check(schedule_T >= 1 && schedule_s > 0, "config: bad schedule");
    check(image_scale >= 1, "config: bad image scale");
  }
};

std::string serialize_config(const RunConfig& cfg);

// Defaults overridden by the (possibly partial) JSON in `text`; unknown keys
// are rejected.
RunConfig parse_config(const std::string& text);

inline RunConfig default_config() { return RunConfig{}; }

}  // namespace toydiff
