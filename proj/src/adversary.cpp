#include "nftl/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "nftl/error.hpp"

namespace nftl {

MetricKind task_metric(TaskMode mode) {
  return mode == TaskMode::classification ? MetricKind::acc : MetricKind::mse;
}

std::string metric_kind_name(MetricKind kind) {
  return kind == MetricKind::acc ? "acc" : "mse";
}

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  std::size_t best = 0;
  float best_val = t.at(row, 0);
  for (std::size_t c = 1; c < t.cols(); ++c) {
    if (t.at(row, c) > best_val) {  // strict: ties keep the lowest index
      best_val = t.at(row, c);
      best = c;
    }
  }
  return best;
}

}  // namespace

float evaluate(const Model& model, const ProblemEnv& env, const Dataset& test,
               std::uint64_t noise_seed) {
  if (test.size() == 0) throw Error("cannot evaluate on an empty test set");
  if (env.mode == TaskMode::classification) {
    if (!test.labels) throw Error("classification evaluation needs labels");
    auto [output, cache] = forward(model, test.inputs);
    (void)cache;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test.size(); ++r) {
      if (argmax_row(output, r) == argmax_row(*test.labels, r)) ++correct;
    }
    return static_cast<float>(static_cast<double>(correct) / static_cast<double>(test.size()));
  }
  Rng rng(noise_seed);
  PreparedBatch prepared = prepare_batch(env, test.inputs, nullptr, rng);
  return eval_loss(model, LossId::mse, prepared.inputs, &prepared.targets);
}

void validate_budget(const AttackBudget& budget) {
  if (budget.epochs < 1) throw Error("attack budget needs epochs >= 1");
  if (budget.batch_size < 1) throw Error("attack budget needs batch_size >= 1");
  if (budget.eval_every < 1) throw Error("attack budget needs eval_every >= 1");
}

std::size_t budget_steps(const AttackBudget& budget, std::size_t n) {
  if (n == 0) throw Error("cannot train on an empty dataset");
  std::size_t per_epoch = (n + budget.batch_size - 1) / budget.batch_size;
  return budget.epochs * per_epoch;
}

namespace {

// Shared fine-tune / scratch training loop; `start` already reflects the
// strategy's init_mode.
MetricSeries run_training(Model start, const ProblemEnv& env, const FineTuneStrategy& strategy,
                          const AttackBudget& budget, const DomainSplit& restricted,
                          const std::string& label, std::uint64_t seed,
                          std::uint64_t noise_seed) {
  validate_budget(budget);
  validate_spec(strategy.optimizer);

  MetricSeries series;
  series.metric = task_metric(env.mode);
  series.label = label;
  series.seed = seed;

  BatchIterator batches(restricted.adversary_half, budget.batch_size,
                        mix64(seed, hash64("attack-order")));
  Rng noise_rng(mix64(seed, hash64("attack-noise")));
  LossId loss = task_loss_id(env.mode);
  std::size_t steps = budget_steps(budget, restricted.adversary_half.size());

  std::vector<float> params = std::move(start.params);
  std::size_t state_len = strategy.transfer_mode == TransferMode::all
                              ? params.size()
                              : start.head_range.length();
  OptimizerState state = init_optimizer(strategy.optimizer, state_len);

  auto record = [&](std::size_t iteration) {
    Model current = make_model_with_params(start.arch, params);
    float value = evaluate(current, env, restricted.test, noise_seed);
    series.points.push_back({iteration, value});
  };

  record(0);
  for (std::size_t t = 1; t <= steps; ++t) {
    try {
      BatchIterator::Batch batch = batches.next();
      const Tensor* labels = batch.labels ? &*batch.labels : nullptr;
      PreparedBatch prepared = prepare_batch(env, batch.inputs, labels, noise_rng);
      Model current = make_model_with_params(start.arch, params);
      LossGrad lg = eval_loss_and_grad(current, loss, prepared.inputs, &prepared.targets);
      if (!std::isfinite(lg.value)) throw NumericError("non-finite fine-tune loss");
      if (strategy.transfer_mode == TransferMode::all) {
        auto [next, next_state] = step(strategy.optimizer, state, params, lg.param_grad);
        params = std::move(next);
        state = std::move(next_state);
      } else {
        ParamRange head = start.head_range;
        std::span<const float> p(params.data() + head.begin, head.length());
        std::span<const float> g(lg.param_grad.data() + head.begin, head.length());
        auto [next, next_state] = step(strategy.optimizer, state, p, g);
        std::copy(next.begin(), next.end(),
                  params.begin() + static_cast<std::ptrdiff_t>(head.begin));
        state = std::move(next_state);
      }
    } catch (const NumericError&) {
      series.unstable = true;
      break;
    }
    if (t % budget.eval_every == 0 || t == steps) record(t);
  }
  series.final_params = std::move(params);
  return series;
}

}  // namespace

MetricSeries finetune(const Model& model, const ProblemEnv& env, const FineTuneStrategy& strategy,
                      const AttackBudget& budget, const DomainSplit& restricted,
                      const std::string& label, std::uint64_t seed, std::uint64_t noise_seed) {
  Model start = model;
  if (strategy.init_mode == InitMode::reinit_head) {
    Rng head_rng(mix64(seed, hash64("head-init")));
    reinit_head(start.arch, start.head_range, start.params, head_rng);
  }
  return run_training(std::move(start), env, strategy, budget, restricted, label, seed,
                      noise_seed);
}

MetricSeries train_scratch(const std::vector<LayerSpec>& arch, const ProblemEnv& env,
                           const OptimizerSpec& optimizer, const AttackBudget& budget,
                           const DomainSplit& restricted, const std::string& label,
                           std::uint64_t seed, std::uint64_t noise_seed) {
  Rng init_rng(mix64(seed, hash64("scratch-init")));
  Model start = make_model(arch, init_rng);
  FineTuneStrategy strategy;
  strategy.init_mode = InitMode::full;
  strategy.transfer_mode = TransferMode::all;
  strategy.optimizer = optimizer;
  strategy.batch_size = budget.batch_size;
  return run_training(std::move(start), env, strategy, budget, restricted, label, seed,
                      noise_seed);
}

FineTuneStrategy make_named_strategy(const std::string& name, const OptimizerSpec& optimizer) {
  FineTuneStrategy strategy;
  strategy.optimizer = optimizer;
  if (name == "direct+all") {
    strategy.init_mode = InitMode::full;
    strategy.transfer_mode = TransferMode::all;
  } else if (name == "initFC+FC") {
    strategy.init_mode = InitMode::reinit_head;
    strategy.transfer_mode = TransferMode::head_only;
  } else if (name == "initFC+all") {
    strategy.init_mode = InitMode::reinit_head;
    strategy.transfer_mode = TransferMode::all;
  } else {
    throw Error("unknown fine-tune strategy '" + name + "'");
  }
  return strategy;
}

const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {"direct+all", "initFC+FC", "initFC+all"};
  return names;
}

SweepResult sweep(const Model& model, const ProblemEnv& env, const DomainSplit& restricted,
                  const SweepConfig& cfg) {
  if (cfg.cells.empty()) throw Error("sweep needs at least one cell");
  if (cfg.seeds.empty()) throw Error("sweep needs at least one seed");
  SweepResult result;
  result.series.reserve(cfg.cells.size() * cfg.seeds.size());
  for (const SweepCell& cell : cfg.cells) {
    for (std::uint64_t seed : cfg.seeds) {
      result.series.push_back(finetune(model, env, cell.strategy, cfg.budget, restricted,
                                       cell.label, seed, cfg.noise_seed));
    }
  }
  result.summary = summarize(result.series);
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<MetricSeries>& series) {
  std::vector<std::string> label_order;
  std::map<std::string, std::map<std::size_t, std::vector<double>>> grouped;
  for (const MetricSeries& s : series) {
    if (grouped.find(s.label) == grouped.end()) label_order.push_back(s.label);
    auto& by_iter = grouped[s.label];
    for (const MetricPoint& p : s.points) {
      by_iter[p.iteration].push_back(static_cast<double>(p.value));
    }
  }
  std::vector<SummaryRow> rows;
  for (const std::string& label : label_order) {
    for (const auto& [iteration, values] : grouped[label]) {
      SummaryRow row;
      row.label = label;
      row.iteration = iteration;
      row.n = values.size();
      double sum = 0.0;
      for (double v : values) sum += v;
      row.mean = sum / static_cast<double>(values.size());
      if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) sq += (v - row.mean) * (v - row.mean);
        row.sd = std::sqrt(sq / static_cast<double>(values.size() - 1));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace nftl
