#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "nftl/rng.hpp"
#include "nftl/tensor.hpp"

namespace nftl {

// alpha_bar[t-1] holds the cumulative noise-retention factor at step t.
struct DiffusionSchedule {
  std::size_t timesteps = 0;
  std::vector<float> alpha_bar;
};

// Linear beta ramp from beta_start to beta_end over T steps.
// beta_start may be 0 (noise-free first step); both must stay below 1.
DiffusionSchedule make_schedule(std::size_t timesteps, double beta_start, double beta_end);

struct NoisySample {
  Tensor x_t;
  std::size_t t = 0;
  Tensor noise;
  Tensor x_0;
};

// x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps, eps ~ N(0, I).
// x_0 is a single sample (1 x d); t is 1-based in [1, T].
NoisySample forward_noise(const DiffusionSchedule& sched, const Tensor& x0, std::size_t t,
                          Rng& rng);

// One noise-prediction training batch: per clean row, draw t uniform in [1, T]
// and eps, emit input row (x_t .. t/T) of width d+1 and target row eps.
std::pair<Tensor, Tensor> build_denoise_batch(const DiffusionSchedule& sched, const Tensor& clean,
                                              Rng& rng);

// Inverts the forward step: (x_t - sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_bar_t).
Tensor reconstruct_x0(const DiffusionSchedule& sched, const Tensor& x_t, std::size_t t,
                      const Tensor& noise);

}  // namespace nftl
