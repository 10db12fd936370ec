#pragma once

#include <string>
#include <vector>

#include "nftl/diffusion.hpp"
#include "nftl/domains.hpp"
#include "nftl/losses.hpp"
#include "nftl/model.hpp"
#include "nftl/rng.hpp"

namespace nftl {

enum class TaskMode { classification, generation };

std::string task_mode_name(TaskMode mode);
TaskMode task_mode_from_name(const std::string& name);

// Task environment shared by the trainer and the attack harness. The schedule
// is only consulted in generation mode.
struct ProblemEnv {
  TaskMode mode = TaskMode::classification;
  const DiffusionSchedule* schedule = nullptr;
};

// Network-ready batch: classification keeps inputs/labels as drawn; generation
// noises the clean rows and targets the drawn noise.
struct PreparedBatch {
  Tensor inputs;
  Tensor targets;
};

PreparedBatch prepare_batch(const ProblemEnv& env, const Tensor& raw_inputs,
                            const Tensor* labels, Rng& rng);

struct LossGrad {
  float value = 0.0f;
  std::vector<float> param_grad;
};

// Forward, loss by id, backward. ce/ice/mse need targets; klu/dos ignore them.
LossGrad eval_loss_and_grad(const Model& model, LossId id, const Tensor& inputs,
                            const Tensor* targets);

// Loss value only (no backward pass).
float eval_loss(const Model& model, LossId id, const Tensor& inputs, const Tensor* targets);

// The adversary's task loss: ce for classification, mse for generation.
LossId task_loss_id(TaskMode mode);

}  // namespace nftl
