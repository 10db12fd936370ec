#include "nftl/sophon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "nftl/adversary.hpp"
#include "nftl/error.hpp"

namespace nftl {

std::string gamma_mode_name(GammaMode mode) {
  switch (mode) {
    case GammaMode::uniform: return "uniform";
    case GammaMode::final_only: return "final_only";
    case GammaMode::custom: return "custom";
  }
  throw Error("unknown gamma mode");
}

GammaMode gamma_mode_from_name(const std::string& name) {
  if (name == "uniform") return GammaMode::uniform;
  if (name == "final_only") return GammaMode::final_only;
  if (name == "custom") return GammaMode::custom;
  throw Error("unknown gamma_mode '" + name + "'");
}

std::string init_mode_name(InitMode mode) {
  return mode == InitMode::full ? "full" : "reinit_head";
}

std::string transfer_mode_name(TransferMode mode) {
  return mode == TransferMode::all ? "all" : "head_only";
}

void validate_sophon_config(const SophonConfig& cfg, TaskMode mode) {
  if (!(cfg.alpha > 0.0f) || !std::isfinite(cfg.alpha)) throw Error("alpha must be > 0");
  if (!(cfg.beta > 0.0f) || !std::isfinite(cfg.beta)) throw Error("beta must be > 0");
  if (cfg.iters < 1) throw Error("iters must be >= 1");
  if (cfg.k_rounds < 1) throw Error("k_rounds must be >= 1");
  if (cfg.n_tasks < 1) throw Error("n_tasks must be >= 1");
  if (cfg.l_fts + cfg.l_ntr < 1) throw Error("l_fts and l_ntr cannot both be 0");
  if (!(cfg.lambda_tol >= 0.0f) || !std::isfinite(cfg.lambda_tol)) {
    throw Error("lambda_tol must be >= 0");
  }
  if (cfg.gamma_mode == GammaMode::custom) {
    if (cfg.gamma_weights.size() != cfg.k_rounds) {
      throw Error("custom gamma needs exactly k_rounds weights");
    }
    double sum = 0.0;
    for (float w : cfg.gamma_weights) {
      if (!std::isfinite(w) || w < 0.0f) throw Error("gamma weights must be finite and >= 0");
      sum += w;
    }
    if (!(sum > 0.0)) throw Error("gamma weights must not all be zero");
  } else if (!cfg.gamma_weights.empty()) {
    throw Error("gamma weights are only accepted with gamma_mode=custom");
  }
  if (mode == TaskMode::classification) {
    if (cfg.loss_alpha != LossId::ice && cfg.loss_alpha != LossId::klu) {
      throw Error("classification suppression loss must be ice or klu");
    }
    if (cfg.loss_beta != LossId::ce) throw Error("classification training loss must be ce");
  } else {
    if (cfg.loss_alpha != LossId::dos) throw Error("generation suppression loss must be dos");
    if (cfg.loss_beta != LossId::mse) throw Error("generation training loss must be mse");
  }
  if (cfg.ft_lr_grid.empty()) throw Error("ft_lr_grid must not be empty");
  for (float lr : cfg.ft_lr_grid) {
    if (!(lr > 0.0f) || !std::isfinite(lr)) throw Error("ft_lr_grid entries must be > 0");
  }
  if (cfg.ft_bs_grid.empty()) throw Error("ft_bs_grid must not be empty");
  for (std::size_t bs : cfg.ft_bs_grid) {
    if (bs < 1) throw Error("ft_bs_grid entries must be >= 1");
  }
}

TaskTriplet sample_task(const SophonConfig& cfg, const DomainSplit& restricted, Rng& rng) {
  if (cfg.ft_lr_grid.empty() || cfg.ft_bs_grid.empty()) {
    throw Error("sample_task needs non-empty lr and batch-size grids");
  }
  TaskTriplet task;
  task.strategy.init_mode = rng.index(2) == 0 ? InitMode::full : InitMode::reinit_head;
  OptimizerSpec opt;
  opt.kind = OptKind::adam;
  opt.lr = cfg.ft_lr_grid[rng.index(cfg.ft_lr_grid.size())];
  task.strategy.optimizer = opt;
  task.strategy.batch_size = cfg.ft_bs_grid[rng.index(cfg.ft_bs_grid.size())];
  task.strategy.transfer_mode = TransferMode::all;
  task.strategy.rounds = cfg.k_rounds;
  task.finetune_set = &restricted.defender_half;
  task.test_set = &restricted.test;
  task.seed = rng.next_u64();
  return task;
}

void reinit_head(const std::vector<LayerSpec>& arch, ParamRange head, std::vector<float>& params,
                 Rng& rng) {
  const LayerSpec* last_affine = nullptr;
  for (const auto& layer : arch) {
    if (layer.kind == LayerKind::affine) last_affine = &layer;
  }
  if (last_affine == nullptr) throw Error("reinit_head needs an affine layer");
  double bound = std::sqrt(6.0 / static_cast<double>(last_affine->in_dim + last_affine->out_dim));
  std::size_t weight_count = last_affine->in_dim * last_affine->out_dim;
  for (std::size_t i = 0; i < weight_count; ++i) {
    params[head.begin + i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  for (std::size_t i = head.begin + weight_count; i < head.end; ++i) params[i] = 0.0f;
}

namespace {

// One optimizer step honoring the transfer mode: head_only touches only the
// head slice, leaving every other coordinate bit-identical.
void strategy_step(const FineTuneStrategy& strategy, ParamRange head, OptimizerState& state,
                   std::vector<float>& params, const std::vector<float>& grads) {
  if (strategy.transfer_mode == TransferMode::all) {
    auto [next, next_state] = step(strategy.optimizer, state, params, grads);
    params = std::move(next);
    state = std::move(next_state);
    return;
  }
  std::span<const float> p(params.data() + head.begin, head.length());
  std::span<const float> g(grads.data() + head.begin, head.length());
  auto [next, next_state] = step(strategy.optimizer, state, p, g);
  std::copy(next.begin(), next.end(), params.begin() + static_cast<std::ptrdiff_t>(head.begin));
  state = std::move(next_state);
}

// Without-replacement batch draw; asking for the whole set (or more) returns
// it in row order.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t take, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (take >= n) return idx;
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + rng.index(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

struct RawBatch {
  Tensor inputs;
  std::optional<Tensor> labels;
};

RawBatch gather_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
  RawBatch out;
  std::size_t d = ds.dim();
  out.inputs = zeros({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const float* src = ds.inputs.data.data() + idx[r] * d;
    std::copy(src, src + d, out.inputs.data.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  if (ds.labels) {
    std::size_t c = ds.labels->cols();
    Tensor lab = zeros({idx.size(), c});
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float* src = ds.labels->data.data() + idx[r] * c;
      std::copy(src, src + c, lab.data.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    out.labels = std::move(lab);
  }
  return out;
}

// Per-round weight before the 1/N task factor.
double round_weight(const SophonConfig& cfg, std::size_t k) {
  switch (cfg.gamma_mode) {
    case GammaMode::uniform: return 1.0 / static_cast<double>(cfg.k_rounds);
    case GammaMode::final_only: return k == cfg.k_rounds ? 1.0 : 0.0;
    case GammaMode::custom: return static_cast<double>(cfg.gamma_weights[k - 1]);
  }
  throw Error("unknown gamma mode");
}

}  // namespace

SimResult simulate_finetune(const Model& theta, const ProblemEnv& env, const TaskTriplet& task,
                            std::size_t k_rounds) {
  if (task.finetune_set == nullptr || task.test_set == nullptr) {
    throw Error("task is missing its datasets");
  }
  if (k_rounds < 1) throw Error("simulate_finetune needs k_rounds >= 1");
  validate_spec(task.strategy.optimizer);

  SimResult result;
  result.checkpoints.reserve(k_rounds);

  std::vector<float> params = theta.params;
  if (task.strategy.init_mode == InitMode::reinit_head) {
    Rng head_rng(mix64(task.seed, hash64("head-init")));
    reinit_head(theta.arch, theta.head_range, params, head_rng);
  }

  BatchIterator batches(*task.finetune_set, task.strategy.batch_size,
                        mix64(task.seed, hash64("inner-order")));
  Rng noise_rng(mix64(task.seed, hash64("inner-noise")));
  LossId loss = task_loss_id(env.mode);
  std::size_t state_len = task.strategy.transfer_mode == TransferMode::all
                              ? params.size()
                              : theta.head_range.length();
  OptimizerState state = init_optimizer(task.strategy.optimizer, state_len);

  for (std::size_t k = 1; k <= k_rounds; ++k) {
    try {
      BatchIterator::Batch batch = batches.next();
      const Tensor* labels = batch.labels ? &*batch.labels : nullptr;
      PreparedBatch prepared = prepare_batch(env, batch.inputs, labels, noise_rng);
      Model current = make_model_with_params(theta.arch, params);
      LossGrad lg = eval_loss_and_grad(current, loss, prepared.inputs, &prepared.targets);
      if (!std::isfinite(lg.value)) throw NumericError("non-finite fine-tune loss");
      strategy_step(task.strategy, theta.head_range, state, params, lg.param_grad);
    } catch (const NumericError&) {
      result.unstable = true;
      result.failed_round = k;
      return result;
    }
    result.checkpoints.push_back(params);
  }
  return result;
}

FtsEval fts_gradient(const Model& theta, const ProblemEnv& env, const SophonConfig& cfg,
                     const std::vector<TaskTriplet>& tasks) {
  if (tasks.empty()) throw Error("fts_gradient needs at least one task");
  std::vector<double> accum(theta.params.size(), 0.0);
  double loss_accum = 0.0;
  double task_factor = 1.0 / static_cast<double>(tasks.size());

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const TaskTriplet& task = tasks[i];
    SimResult sim = simulate_finetune(theta, env, task, cfg.k_rounds);
    if (sim.unstable) {
      throw NumericError("suppression task " + std::to_string(i + 1) + " diverged at round " +
                         std::to_string(sim.failed_round));
    }
    const Dataset& test = *task.test_set;
    for (std::size_t k = 1; k <= cfg.k_rounds; ++k) {
      double gamma = round_weight(cfg, k) * task_factor;
      if (gamma == 0.0) continue;
      Rng batch_rng(mix64(task.seed, mix64(hash64("alpha-batch"), k)));
      std::vector<std::size_t> idx =
          sample_indices(test.size(), std::min(task.strategy.batch_size, test.size()), batch_rng);
      RawBatch raw = gather_rows(test, idx);
      const Tensor* labels = raw.labels ? &*raw.labels : nullptr;
      PreparedBatch prepared = prepare_batch(env, raw.inputs, labels, batch_rng);

      Model snapshot = make_model_with_params(theta.arch, sim.checkpoints[k - 1]);
      LossGrad lg;
      try {
        lg = eval_loss_and_grad(snapshot, cfg.loss_alpha, prepared.inputs, &prepared.targets);
        if (!std::isfinite(lg.value)) throw NumericError("non-finite suppression loss");
      } catch (const NumericError& e) {
        throw NumericError("suppression task " + std::to_string(i + 1) + ", round " +
                           std::to_string(k) + ": " + e.what());
      }
      if (task.strategy.init_mode == InitMode::reinit_head) {
        std::fill(lg.param_grad.begin() + static_cast<std::ptrdiff_t>(theta.head_range.begin),
                  lg.param_grad.begin() + static_cast<std::ptrdiff_t>(theta.head_range.end), 0.0f);
      }
      for (std::size_t p = 0; p < accum.size(); ++p) {
        accum[p] += gamma * static_cast<double>(lg.param_grad[p]);
      }
      loss_accum += gamma * static_cast<double>(lg.value);
    }
  }

  FtsEval out;
  out.grad.resize(accum.size());
  for (std::size_t p = 0; p < accum.size(); ++p) out.grad[p] = static_cast<float>(accum[p]);
  out.l_fts = static_cast<float>(loss_accum);
  return out;
}

Model fts_step(const Model& theta, const ProblemEnv& env, const SophonConfig& cfg,
               const std::vector<TaskTriplet>& tasks, OptimizerState& adam_state,
               float* l_fts_out) {
  FtsEval ev = fts_gradient(theta, env, cfg, tasks);
  OptimizerSpec spec;
  spec.kind = OptKind::adam;
  spec.lr = cfg.alpha;
  auto [next, next_state] = step(spec, adam_state, theta.params, ev.grad);
  adam_state = std::move(next_state);
  if (l_fts_out != nullptr) *l_fts_out = ev.l_fts;
  return make_model_with_params(theta.arch, std::move(next));
}

Model ntr_step(const Model& theta, const ProblemEnv& env, const SophonConfig& cfg,
               const Tensor& batch_inputs, const Tensor* batch_labels, Rng& noise_rng,
               OptimizerState& adam_state, float* l_ntr_out) {
  PreparedBatch prepared = prepare_batch(env, batch_inputs, batch_labels, noise_rng);
  LossGrad lg = eval_loss_and_grad(theta, cfg.loss_beta, prepared.inputs, &prepared.targets);
  if (!std::isfinite(lg.value)) throw NumericError("non-finite reinforcement loss");
  OptimizerSpec spec;
  spec.kind = OptKind::adam;
  spec.lr = cfg.beta;
  auto [next, next_state] = step(spec, adam_state, theta.params, lg.param_grad);
  adam_state = std::move(next_state);
  if (l_ntr_out != nullptr) *l_ntr_out = lg.value;
  return make_model_with_params(theta.arch, std::move(next));
}

namespace {

// Full-set training loss used by the degradation gate; generation noising is
// re-derived from the same seed every call so before/after are comparable.
float set_loss(const Model& model, const ProblemEnv& env, LossId loss, const Dataset& test,
               std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  const Tensor* labels = test.labels ? &*test.labels : nullptr;
  PreparedBatch prepared = prepare_batch(env, test.inputs, labels, rng);
  return eval_loss(model, loss, prepared.inputs, &prepared.targets);
}

}  // namespace

ProtectResult protect(const Model& pretrained, const ProblemEnv& env, const SophonConfig& cfg,
                      const DomainSplit& original, const DomainSplit& restricted,
                      std::size_t ntr_batch_size, std::uint64_t seed) {
  validate_sophon_config(cfg, env.mode);
  if (ntr_batch_size < 1) throw Error("ntr_batch_size must be >= 1");

  Rng task_rng(mix64(seed, hash64("tasks")));
  BatchIterator ntr_batches(original.defender_half, ntr_batch_size,
                            mix64(seed, hash64("ntr-order")));
  Rng ntr_noise(mix64(seed, hash64("ntr-noise")));
  std::uint64_t eval_noise_seed = mix64(seed, hash64("eval-noise"));

  ProtectResult result;
  result.original_loss_before =
      set_loss(pretrained, env, cfg.loss_beta, original.test, eval_noise_seed);

  std::size_t param_len = pretrained.params.size();
  OptimizerSpec adam_alpha;
  adam_alpha.kind = OptKind::adam;
  adam_alpha.lr = cfg.alpha;
  OptimizerSpec adam_beta;
  adam_beta.kind = OptKind::adam;
  adam_beta.lr = cfg.beta;
  OptimizerState fts_state = init_optimizer(adam_alpha, param_len);
  OptimizerState ntr_state = init_optimizer(adam_beta, param_len);

  Model model = pretrained;
  result.log.reserve(cfg.iters);

  for (std::size_t iter = 1; iter <= cfg.iters; ++iter) {
    IterationRecord rec;
    rec.iter = iter;
    try {
      double fts_sum = 0.0;
      for (std::size_t s = 0; s < cfg.l_fts; ++s) {
        std::vector<TaskTriplet> tasks;
        tasks.reserve(cfg.n_tasks);
        for (std::size_t i = 0; i < cfg.n_tasks; ++i) {
          tasks.push_back(sample_task(cfg, restricted, task_rng));
        }
        float l_fts = 0.0f;
        model = fts_step(model, env, cfg, tasks, fts_state, &l_fts);
        fts_sum += l_fts;
      }
      double ntr_sum = 0.0;
      for (std::size_t s = 0; s < cfg.l_ntr; ++s) {
        BatchIterator::Batch batch = ntr_batches.next();
        const Tensor* labels = batch.labels ? &*batch.labels : nullptr;
        float l_ntr = 0.0f;
        model = ntr_step(model, env, cfg, batch.inputs, labels, ntr_noise, ntr_state, &l_ntr);
        ntr_sum += l_ntr;
      }
      if (cfg.l_fts > 0) {
        rec.has_fts = true;
        rec.l_fts = static_cast<float>(fts_sum / static_cast<double>(cfg.l_fts));
      }
      if (cfg.l_ntr > 0) {
        rec.has_ntr = true;
        rec.l_ntr = static_cast<float>(ntr_sum / static_cast<double>(cfg.l_ntr));
      }
    } catch (const NumericError& e) {
      throw NumericError("protection iteration " + std::to_string(iter) + ": " + e.what());
    }
    rec.original_metric = evaluate(model, env, original.test, eval_noise_seed);
    rec.restricted_metric = evaluate(model, env, restricted.test, eval_noise_seed);
    result.log.push_back(rec);
  }

  result.original_loss_after = set_loss(model, env, cfg.loss_beta, original.test, eval_noise_seed);
  double rise = std::max(0.0, static_cast<double>(result.original_loss_after) -
                                  static_cast<double>(result.original_loss_before));
  result.lambda_gate_ok = rise < static_cast<double>(cfg.lambda_tol);
  result.model = std::move(model);
  return result;
}

}  // namespace nftl
