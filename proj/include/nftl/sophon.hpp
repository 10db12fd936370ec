#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nftl/domains.hpp"
#include "nftl/losses.hpp"
#include "nftl/model.hpp"
#include "nftl/optim.hpp"
#include "nftl/rng.hpp"
#include "nftl/train_ops.hpp"

namespace nftl {

// Weighting of the per-round suppression losses. uniform spreads 1/(N*K) over
// every simulated round; final_only keeps only the last round (the classic
// first-order meta-gradient); custom supplies per-round weights.
enum class GammaMode { uniform, final_only, custom };

enum class InitMode { full, reinit_head };
enum class TransferMode { all, head_only };

std::string gamma_mode_name(GammaMode mode);
GammaMode gamma_mode_from_name(const std::string& name);
std::string init_mode_name(InitMode mode);
std::string transfer_mode_name(TransferMode mode);

// One way an adversary might fine-tune: how the model is initialized, which
// parameters move, with what optimizer and batch size, for how many rounds.
struct FineTuneStrategy {
  InitMode init_mode = InitMode::full;
  TransferMode transfer_mode = TransferMode::all;
  OptimizerSpec optimizer;
  std::size_t batch_size = 32;
  std::size_t rounds = 10;
};

struct SophonConfig {
  float alpha = 3e-4f;        // suppression meta learning rate
  float beta = 5e-4f;         // reinforcement learning rate
  std::size_t iters = 800;    // outer iterations
  std::size_t k_rounds = 50;  // simulated fine-tuning rounds per task
  std::size_t n_tasks = 1;    // tasks per suppression step
  std::size_t l_fts = 1;      // suppression loops per outer iteration
  std::size_t l_ntr = 1;      // reinforcement loops per outer iteration
  GammaMode gamma_mode = GammaMode::uniform;
  std::vector<float> gamma_weights;  // custom mode: one weight per round
  float lambda_tol = 0.1f;           // tolerated original-domain loss increase
  LossId loss_alpha = LossId::ice;   // suppression loss: ice/klu (cls), dos (gen)
  LossId loss_beta = LossId::ce;     // reinforcement loss: ce (cls), mse (gen)
  std::vector<float> ft_lr_grid;
  std::vector<std::size_t> ft_bs_grid;
};

void validate_sophon_config(const SophonConfig& cfg, TaskMode mode);

// One simulated fine-tuning environment: strategy, fine-tune data source, and
// evaluation data, plus the seed that makes the simulation reproducible.
struct TaskTriplet {
  FineTuneStrategy strategy;
  const Dataset* finetune_set = nullptr;
  const Dataset* test_set = nullptr;
  std::uint64_t seed = 0;
};

// Uniform draw over init_mode x lr grid x bs grid; Adam inner optimizer and
// transfer of all parameters, rounds = k_rounds.
TaskTriplet sample_task(const SophonConfig& cfg, const DomainSplit& restricted, Rng& rng);

// Replaces the head parameters with a fresh init (uniform weights in
// +-sqrt(6/(in+out)), zero biases), matching make_model's recipe.
void reinit_head(const std::vector<LayerSpec>& arch, ParamRange head, std::vector<float>& params,
                 Rng& rng);

struct SimResult {
  std::vector<std::vector<float>> checkpoints;  // params after rounds 1..K
  bool unstable = false;
  std::size_t failed_round = 0;  // 1-based round where the loss went non-finite
};

// Runs k_rounds minibatch steps of the task loss from theta (with the task's
// init_mode applied). theta itself is never touched.
SimResult simulate_finetune(const Model& theta, const ProblemEnv& env, const TaskTriplet& task,
                            std::size_t k_rounds);

struct FtsEval {
  std::vector<float> grad;  // aggregated first-order meta-gradient G
  float l_fts = 0.0f;       // weighted suppression loss across tasks/rounds
};

// G = sum_{i,k} gamma_{i,k} * grad of loss_alpha at the round-k parameters of
// task i, evaluated on a fresh test batch. reinit_head tasks contribute
// nothing at head coordinates.
FtsEval fts_gradient(const Model& theta, const ProblemEnv& env, const SophonConfig& cfg,
                     const std::vector<TaskTriplet>& tasks);

// One Adam step (lr alpha, descent) on the aggregated meta-gradient.
Model fts_step(const Model& theta, const ProblemEnv& env, const SophonConfig& cfg,
               const std::vector<TaskTriplet>& tasks, OptimizerState& adam_state,
               float* l_fts_out = nullptr);

// One Adam step (lr beta) on loss_beta over an original-domain batch.
Model ntr_step(const Model& theta, const ProblemEnv& env, const SophonConfig& cfg,
               const Tensor& batch_inputs, const Tensor* batch_labels, Rng& noise_rng,
               OptimizerState& adam_state, float* l_ntr_out = nullptr);

struct IterationRecord {
  std::size_t iter = 0;  // 1-based outer iteration
  bool has_fts = false;
  float l_fts = 0.0f;
  bool has_ntr = false;
  float l_ntr = 0.0f;
  float original_metric = 0.0f;    // accuracy or mse on the original test set
  float restricted_metric = 0.0f;  // pre-finetune metric on the restricted test set
};

struct ProtectResult {
  Model model;
  std::vector<IterationRecord> log;
  float original_loss_before = 0.0f;  // loss_beta of the input model, original test
  float original_loss_after = 0.0f;   // same for the protected model
  bool lambda_gate_ok = false;         // loss_after - loss_before <= lambda_tol
};

// Alternating suppression/reinforcement training. Per outer iteration: l_fts
// suppression steps (each over n_tasks fresh tasks), then l_ntr reinforcement
// steps. Numeric failures carry the outer iteration index in their message.
ProtectResult protect(const Model& pretrained, const ProblemEnv& env, const SophonConfig& cfg,
                      const DomainSplit& original, const DomainSplit& restricted,
                      std::size_t ntr_batch_size, std::uint64_t seed);

}  // namespace nftl
