#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nftl {

enum class OptKind { sgd, momentum, nesterov, adagrad, adadelta, adam };

std::string opt_kind_name(OptKind kind);
OptKind opt_kind_from_name(const std::string& name);

struct OptimizerSpec {
  OptKind kind = OptKind::sgd;
  float lr = 0.01f;
  float momentum = 0.9f;      // momentum / nesterov
  float beta1 = 0.9f;         // adam
  float beta2 = 0.999f;       // adam
  float rho = 0.9f;           // adadelta
  float eps = 1e-8f;          // stability epsilon
  float weight_decay = 0.0f;  // applied as g <- g + wd * theta
};

// Throws Error on lr < 0 (0 is a legal no-op), eps <= 0, or coefficients
// outside [0, 1).
void validate_spec(const OptimizerSpec& spec);

struct OptimizerState {
  OptKind kind = OptKind::sgd;
  std::uint64_t step_count = 0;
  std::vector<float> acc1;  // momentum buffer / grad-sq accumulator / adam m
  std::vector<float> acc2;  // adadelta delta-sq accumulator / adam v
};

OptimizerState init_optimizer(const OptimizerSpec& spec, std::size_t param_len);

// Pure: inputs untouched, identical inputs give bit-identical outputs.
// Throws NumericError if grads contain NaN/Inf.
std::pair<std::vector<float>, OptimizerState> step(const OptimizerSpec& spec,
                                                   const OptimizerState& state,
                                                   std::span<const float> params,
                                                   std::span<const float> grads);

// Diagonal positive-definite quadratic: loss(theta) = 1/2 * sum_i diag[i] * theta[i]^2.
struct QuadraticProblem {
  std::vector<float> diag;
  std::vector<float> theta0;
};

// Loss before any step and after each of `steps` updates (length steps + 1).
std::vector<double> reference_trajectory(const OptimizerSpec& spec, const QuadraticProblem& prob,
                                         std::size_t steps);

}  // namespace nftl
