#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nftl/model.hpp"
#include "nftl/optim.hpp"
#include "nftl/sophon.hpp"
#include "nftl/train_ops.hpp"

namespace nftl {

struct DataConfig {
  std::string original_id = "original";
  std::string restricted_id = "restricted";
  std::size_t samples = 2000;  // rows per domain
  std::size_t classes = 4;     // classification only
  std::size_t input_dim = 16;
  double test_fraction = 0.2;
};

struct ArchConfig {
  std::vector<std::size_t> hidden_dims = {32, 32};
  LayerKind activation = LayerKind::relu;
};

struct PretrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 32;
  std::size_t eval_every = 25;  // metric cadence in optimizer steps
  OptimizerSpec optimizer;
};

struct AttackConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 50;
  std::size_t eval_every = 16;
  std::vector<std::string> strategies = {"direct+all", "initFC+FC", "initFC+all"};
  OptimizerSpec optimizer;
  std::size_t extended_epochs = 0;  // optional longer-budget probe, 0 = off
};

struct DiffusionConfig {
  std::size_t timesteps = 50;
  float beta_start = 1e-4f;
  float beta_end = 0.2f;
};

// Whole-experiment description. Everything the pipeline does is a pure
// function of this struct, so identical configs give identical bytes out.
struct ExperimentConfig {
  TaskMode task_mode = TaskMode::classification;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "out";
  DataConfig data;
  ArchConfig arch;
  PretrainConfig pretrain;
  SophonConfig sophon;
  std::size_t ntr_batch_size = 32;  // reinforcement minibatch rows
  AttackConfig attack;
  DiffusionConfig diffusion;  // generation mode only
};

// Scaled-down defaults that finish in minutes on a CPU.
ExperimentConfig desk_profile(TaskMode mode);
// The published default hyper-parameters at full strength.
ExperimentConfig paper_profile(TaskMode mode);

// Strict schema: unknown keys anywhere are rejected with their full path;
// wrong types and out-of-range values name the offending field.
ExperimentConfig parse_config_json(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);

void validate_config(const ExperimentConfig& cfg);

// Canonical (sorted-key) dump; equal configs give equal strings.
std::string canonical_config_json(const ExperimentConfig& cfg);

// FNV-1a over the canonical dump plus the code version, as 16 hex digits.
std::string config_hash_hex(const ExperimentConfig& cfg);

// Layer stack for the configured task: classification d -> hidden -> C,
// generation (d+1) -> hidden -> d.
std::vector<LayerSpec> config_arch(const ExperimentConfig& cfg);

}  // namespace nftl
