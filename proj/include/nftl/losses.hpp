#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "nftl/tensor.hpp"

namespace nftl {

// Output of softmax over one logit row: entries in (0,1), summing to 1.
struct ProbVector {
  std::vector<float> p;

  std::size_t classes() const { return p.size(); }
};

struct LossEval {
  float value = 0.0f;
  Tensor grad;  // same shape as the logits / outputs it differentiates
};

// Max-subtracted, accumulated in double. Throws NumericError on non-finite input.
ProbVector softmax(const std::vector<float>& logits);

// Losses take raw network outputs (batch x C logits, or batch x d predictions).
// Values are arithmetic means over the batch; gradients carry the same 1/B.
LossEval ce(const Tensor& logits, const Tensor& onehot);

// Drives the true-class probability down; its gradient vanishes as that
// probability reaches zero, which keeps suppression training stable.
LossEval ice(const Tensor& logits, const Tensor& onehot);

// Pulls the output distribution toward uniform. Label-free.
LossEval klu(const Tensor& logits);

LossEval mse(const Tensor& pred, const Tensor& target);

// Mean squared norm of the raw prediction; minimizing it forces output to zero.
LossEval dos(const Tensor& pred);

enum class LossId { ce, ice, klu, mse, dos };

std::string loss_id_name(LossId id);
LossId loss_id_from_name(const std::string& name);

struct ProbePoint {
  double path_param = 0.0;
  double grad_norm = 0.0;
};

// Gradient magnitude along a path of worsening predictions.
// ce/ice: true-class probability slides 0.9 -> 1e-6 (off-class mass uniform).
// klu: the prediction slides 0.9 -> 1/C toward uniform, its own worst case.
// mse/dos: prediction scale slides 1 -> 0 against a fixed unit target offset.
std::vector<ProbePoint> stability_probe(LossId id, std::size_t points = 100,
                                        std::size_t classes = 4, std::size_t dim = 8);

// CSV columns: loss_id, path_param, grad_norm.
void write_probe_csv(std::ostream& out, const std::vector<LossId>& ids, std::size_t points = 100,
                     std::size_t classes = 4, std::size_t dim = 8);

}  // namespace nftl
