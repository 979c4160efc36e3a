#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "toydiff/model.hpp"
#include "toydiff/schedule.hpp"
#include "toydiff/tensor.hpp"

namespace toydiff {

// write-temp-then-rename; creates parent directories
void atomic_write(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

// crc32 over all tensor payloads in table order; the manifest's weights id
uint32_t weights_checksum(const DenoiserParams<float>& params);

struct WeightsBundle {
  DenoiserParams<float> params;
  NoiseSchedule schedule;
  uint32_t checksum = 0;
};

// Versioned binary container: magic "TOYDIFFW", u32 format version, a JSON
// header (model config, schedule recipe, rng id, vocabulary, tensor table
// with shapes and per-tensor crc32), then raw little-endian float32 payloads.
std::string serialize_weights(const DenoiserParams<float>& params,
                              const NoiseSchedule& schedule);
WeightsBundle deserialize_weights(const std::string& bytes);

void save_weights(const std::string& path, const DenoiserParams<float>& params,
                  const NoiseSchedule& schedule);
WeightsBundle load_weights(const std::string& path);

// {3, side, side} image in [-1,1] -> 8-bit RGB PNG (zlib-backed encoder),
// nearest-neighbor upscaled by `scale`
std::string encode_png(const Tensor<float>& image, int scale = 1);
// P6 PPM fallback for environments without PNG tooling
std::string encode_ppm(const Tensor<float>& image, int scale = 1);

void save_image(const std::string& path, const Tensor<float>& image, int scale = 1);

}  // namespace toydiff
