#include "nftl/train_ops.hpp"

#include "nftl/error.hpp"

namespace nftl {

std::string task_mode_name(TaskMode mode) {
  return mode == TaskMode::classification ? "classification" : "generation";
}

TaskMode task_mode_from_name(const std::string& name) {
  if (name == "classification") return TaskMode::classification;
  if (name == "generation") return TaskMode::generation;
  throw Error("unknown task_mode '" + name + "'");
}

PreparedBatch prepare_batch(const ProblemEnv& env, const Tensor& raw_inputs,
                            const Tensor* labels, Rng& rng) {
  PreparedBatch out;
  if (env.mode == TaskMode::classification) {
    if (labels == nullptr) throw Error("classification batch needs labels");
    out.inputs = raw_inputs;
    out.targets = *labels;
    return out;
  }
  if (env.schedule == nullptr) throw Error("generation batch needs a diffusion schedule");
  auto [inputs, targets] = build_denoise_batch(*env.schedule, raw_inputs, rng);
  out.inputs = std::move(inputs);
  out.targets = std::move(targets);
  return out;
}

namespace {
LossEval loss_by_id(LossId id, const Tensor& output, const Tensor* targets) {
  switch (id) {
    case LossId::ce:
      if (targets == nullptr) throw Error("ce needs targets");
      return ce(output, *targets);
    case LossId::ice:
      if (targets == nullptr) throw Error("ice needs targets");
      return ice(output, *targets);
    case LossId::klu:
      return klu(output);
    case LossId::mse:
      if (targets == nullptr) throw Error("mse needs targets");
      return mse(output, *targets);
    case LossId::dos:
      return dos(output);
  }
  throw Error("unknown loss id");
}
}  // namespace

LossGrad eval_loss_and_grad(const Model& model, LossId id, const Tensor& inputs,
                            const Tensor* targets) {
  auto [output, cache] = forward(model, inputs);
  LossEval ev = loss_by_id(id, output, targets);
  LossGrad out;
  out.value = ev.value;
  out.param_grad = backward(model, cache, ev.grad);
  return out;
}

float eval_loss(const Model& model, LossId id, const Tensor& inputs, const Tensor* targets) {
  auto [output, cache] = forward(model, inputs);
  (void)cache;
  return loss_by_id(id, output, targets).value;
}

LossId task_loss_id(TaskMode mode) {
  return mode == TaskMode::classification ? LossId::ce : LossId::mse;
}

}  // namespace nftl
