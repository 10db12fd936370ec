#include "nftl/diffusion.hpp"

#include <cmath>

#include "nftl/error.hpp"

namespace nftl {

DiffusionSchedule make_schedule(std::size_t timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw Error("schedule needs at least one timestep");
  if (beta_start < 0.0 || beta_start > beta_end || beta_end >= 1.0) {
    throw Error("betas must satisfy 0 <= beta_start <= beta_end < 1");
  }
  DiffusionSchedule sched;
  sched.timesteps = timesteps;
  sched.alpha_bar.resize(timesteps);
  double prod = 1.0;
  for (std::size_t t = 0; t < timesteps; ++t) {
    double beta = (timesteps == 1)
                      ? beta_start
                      : beta_start + (beta_end - beta_start) * double(t) / double(timesteps - 1);
    prod *= 1.0 - beta;
    sched.alpha_bar[t] = static_cast<float>(prod);
  }
  return sched;
}

namespace {
void check_t(const DiffusionSchedule& sched, std::size_t t) {
  if (t < 1 || t > sched.timesteps) {
    throw Error("timestep " + std::to_string(t) + " outside [1, " +
                std::to_string(sched.timesteps) + "]");
  }
}
}  // namespace

NoisySample forward_noise(const DiffusionSchedule& sched, const Tensor& x0, std::size_t t,
                          Rng& rng) {
  check_t(sched, t);
  check_finite(x0, "forward_noise x0");
  double ab = sched.alpha_bar[t - 1];
  double sa = std::sqrt(ab);
  double sn = std::sqrt(1.0 - ab);
  NoisySample s;
  s.t = t;
  s.x_0 = x0;
  s.noise = zeros(x0.shape);
  s.x_t = zeros(x0.shape);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    double eps = rng.normal();
    s.noise.data[i] = static_cast<float>(eps);
    s.x_t.data[i] = static_cast<float>(sa * double(x0.data[i]) + sn * eps);
  }
  return s;
}

std::pair<Tensor, Tensor> build_denoise_batch(const DiffusionSchedule& sched, const Tensor& clean,
                                              Rng& rng) {
  if (clean.shape.size() != 2 || clean.rows() == 0) {
    throw Error("build_denoise_batch needs a non-empty 2-D clean batch");
  }
  std::size_t n = clean.rows(), d = clean.cols();
  Tensor inputs = zeros({n, d + 1});
  Tensor targets = zeros({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t t = 1 + rng.index(sched.timesteps);
    double ab = sched.alpha_bar[t - 1];
    double sa = std::sqrt(ab);
    double sn = std::sqrt(1.0 - ab);
    for (std::size_t j = 0; j < d; ++j) {
      double eps = rng.normal();
      targets.at(r, j) = static_cast<float>(eps);
      inputs.at(r, j) = static_cast<float>(sa * double(clean.at(r, j)) + sn * eps);
    }
    inputs.at(r, d) = static_cast<float>(double(t) / double(sched.timesteps));
  }
  return {std::move(inputs), std::move(targets)};
}

Tensor reconstruct_x0(const DiffusionSchedule& sched, const Tensor& x_t, std::size_t t,
                      const Tensor& noise) {
  check_t(sched, t);
  if (x_t.shape != noise.shape) throw Error("reconstruct_x0 shape mismatch");
  double ab = sched.alpha_bar[t - 1];
  if (!(ab > 0.0)) throw Error("alpha_bar must stay positive to invert the forward step");
  double sa = std::sqrt(ab);
  double sn = std::sqrt(1.0 - ab);
  Tensor x0 = zeros(x_t.shape);
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    x0.data[i] = static_cast<float>((double(x_t.data[i]) - sn * double(noise.data[i])) / sa);
  }
  return x0;
}

}  // namespace nftl
