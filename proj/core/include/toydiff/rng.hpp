#pragma once

#include <cmath>
#include <cstdint>

#include "toydiff/tensor.hpp"

namespace toydiff {

// Philox4x32-10 counter-based generator (Salmon et al.). Runs are reproduced
// from (seed, stream) alone, so independent streams never share state and the
// draw sequence is portable across platforms and thread schedules.
//
// Identified in configs/manifests as rng {name:"philox4x32-10", version:1}.
class Philox {
 public:
  Philox(uint64_t seed, uint64_t stream)
      : key0_(static_cast<uint32_t>(seed)),
        key1_(static_cast<uint32_t>(seed >> 32)),
        ctr2_(static_cast<uint32_t>(stream)),
        ctr3_(static_cast<uint32_t>(stream >> 32)) {}

  uint32_t next_u32() {
    if (have_ == 0) refill();
    return out_[--have_];
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // uniform in [0,1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // standard normal via Box-Muller; pairs are drawn eagerly and cached
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - next_double();  // (0,1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  Tensor<T> normal_tensor(std::vector<int> shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(normal());
    return t;
  }

 private:
  static void round(uint32_t& c0, uint32_t& c1, uint32_t& c2, uint32_t& c3, uint32_t k0,
                    uint32_t k1) {
    const uint64_t m0 = 0xD2511F53ULL * c0;
    const uint64_t m1 = 0xCD9E8D57ULL * c2;
    uint32_t hi0 = static_cast<uint32_t>(m0 >> 32), lo0 = static_cast<uint32_t>(m0);
    uint32_t hi1 = static_cast<uint32_t>(m1 >> 32), lo1 = static_cast<uint32_t>(m1);
    uint32_t n0 = hi1 ^ c1 ^ k0;
    uint32_t n1 = lo1;
    uint32_t n2 = hi0 ^ c3 ^ k1;
    uint32_t n3 = lo0;
    c0 = n0;
    c1 = n1;
    c2 = n2;
    c3 = n3;
  }

  void refill() {
    uint32_t c0 = ctr0_, c1 = ctr1_, c2 = ctr2_, c3 = ctr3_;
    uint32_t k0 = key0_, k1 = key1_;
    for (int i = 0; i < 10; ++i) {
      round(c0, c1, c2, c3, k0, k1);
      k0 += 0x9E3779B9u;  // golden ratio
      k1 += 0xBB67AE85u;  // sqrt(3)-1
    }
    out_[0] = c0;
    out_[1] = c1;
    out_[2] = c2;
    out_[3] = c3;
    have_ = 4;
    if (++ctr0_ == 0) ++ctr1_;  // 64-bit block counter, streams live in ctr2/ctr3
  }

  uint32_t key0_, key1_;
  uint32_t ctr0_ = 0, ctr1_ = 0, ctr2_, ctr3_;
  uint32_t out_[4] = {0, 0, 0, 0};
  int have_ = 0;
  double cached_ = 0;
  bool has_cached_ = false;
};

// Stream-id layout used across the project. Grouping by purpose keeps every
// consumer of randomness independent of all others.
namespace rng_stream {
constexpr uint64_t kInitNoise = 1;        // sampler z_T
constexpr uint64_t kSceneBase = 1ull << 32;   // + sample index
constexpr uint64_t kNoiseBase = 2ull << 32;   // + sample index (training eps, t)
constexpr uint64_t kDropBase = 3ull << 32;    // + sample index (caption dropout)
constexpr uint64_t kInitParams = 4ull << 32;  // model init
constexpr uint64_t kSuiteBase = 5ull << 32;   // suite generation
}  // namespace rng_stream

}  // namespace toydiff
