#pragma once

#include <cmath>
#include <vector>

#include "toydiff/tensor.hpp"

namespace toydiff {

// Cumulative noise schedule over raw timesteps 0..T_train, alpha_bar[0] = 1,
// strictly decreasing, alpha_bar[T_train] > 0.
struct NoiseSchedule {
  int T_train = 0;
  double s = 0.008;               // cosine offset; kept so the recipe serializes
  std::vector<double> alpha_bar;  // indexed by raw timestep, size T_train + 1

  // squared-cosine schedule: betas derived from the cosine curve, clamped at
  // 0.999, then alpha_bar rebuilt by cumulative product
  static NoiseSchedule cosine(int T = 1000, double s = 0.008) {
    check(T >= 1, "schedule: T must be >= 1");
    NoiseSchedule sc;
    sc.T_train = T;
    sc.s = s;
    auto f = [&](double t) {
      double a = std::cos((t / T + s) / (1.0 + s) * M_PI / 2.0);
      return a * a;
    };
    sc.alpha_bar.resize(T + 1);
    sc.alpha_bar[0] = 1.0;
    double prev_raw = 1.0;
    for (int t = 1; t <= T; ++t) {
      double raw = f(double(t)) / f(0.0);
      double beta = std::min(1.0 - raw / prev_raw, 0.999);
      sc.alpha_bar[t] = sc.alpha_bar[t - 1] * (1.0 - beta);
      prev_raw = raw;
    }
    sc.validate();
    return sc;
  }

  void validate() const {
    check(static_cast<int>(alpha_bar.size()) == T_train + 1, "schedule: bad table size");
    check(alpha_bar[0] == 1.0, "schedule: alpha_bar[0] must be 1");
    for (int t = 1; t <= T_train; ++t) {
      check(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1],
            "schedule: alpha_bar must be strictly decreasing and positive");
    }
  }

  double at(int t) const {
    check(t >= 0 && t <= T_train, "schedule: timestep out of range");
    return alpha_bar[t];
  }

  // leading-spaced inference timesteps with stride T/steps: [T - stride + 1,
  // T - 2*stride + 1, ..., 1 + (T - steps*stride)]. The grid deliberately
  // skips the terminal timestep T, where alpha_bar is numerically zero and
  // the x0 reconstruction in a DDIM step would amplify prediction error by
  // 1/sqrt(alpha_bar); the step after the last entry is raw timestep 0.
  std::vector<int> inference_timesteps(int steps) const {
    check(steps >= 1 && steps <= T_train, "schedule: bad inference step count");
    int stride = T_train / steps;
    std::vector<int> ts(steps);
    for (int i = 0; i < steps; ++i) ts[i] = T_train - (i + 1) * stride + 1;
    return ts;
  }

  // q(z_t | z_0): sqrt(alpha_bar)*z0 + sqrt(1-alpha_bar)*noise
  template <typename T>
  Tensor<T> add_noise(const Tensor<T>& z0, const Tensor<T>& noise, int t) const {
    check(z0.same_shape(noise), "add_noise: shape mismatch");
    double ab = at(t);
    T sa = static_cast<T>(std::sqrt(ab)), sn = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out = z0;
    for (int64_t i = 0; i < out.numel(); ++i)
      out.data[i] = sa * z0.data[i] + sn * noise.data[i];
    return out;
  }
};

}  // namespace toydiff
