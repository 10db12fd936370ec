#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nftl/domains.hpp"
#include "nftl/model.hpp"
#include "nftl/optim.hpp"
#include "nftl/sophon.hpp"
#include "nftl/train_ops.hpp"

namespace nftl {

enum class MetricKind { acc, mse };

MetricKind task_metric(TaskMode mode);
std::string metric_kind_name(MetricKind kind);

// Classification: fraction of rows whose argmax output matches the label
// (ties resolve to the lowest class index). Generation: denoising MSE with
// the noising fixed by noise_seed, so repeated calls are comparable.
float evaluate(const Model& model, const ProblemEnv& env, const Dataset& test,
               std::uint64_t noise_seed);

struct MetricPoint {
  std::size_t iteration = 0;  // optimizer steps taken when measured
  float value = 0.0f;
};

// One training curve: the restricted-domain test metric sampled along one
// fine-tuning or scratch-training run.
struct MetricSeries {
  MetricKind metric = MetricKind::acc;
  std::string label;  // "<source>:<strategy>" grouping key
  std::uint64_t seed = 0;
  std::vector<MetricPoint> points;
  bool unstable = false;            // loss went non-finite; series truncated there
  std::vector<float> final_params;  // parameters when training stopped
};

struct AttackBudget {
  std::size_t epochs = 5;  // passes over the adversary half
  std::size_t batch_size = 32;
  std::size_t eval_every = 10;  // metric cadence in optimizer steps
};

void validate_budget(const AttackBudget& budget);

// Optimizer steps the budget buys on a dataset of n rows:
// epochs * ceil(n / batch_size).
std::size_t budget_steps(const AttackBudget& budget, std::size_t n);

// Fine-tunes a copy of the model on the adversary half of `restricted`,
// honoring the strategy's init_mode / transfer_mode / optimizer and the
// budget's step count and batch size. The metric is recorded at iteration 0
// (before any step), on the eval_every cadence, and at the final step.
MetricSeries finetune(const Model& model, const ProblemEnv& env, const FineTuneStrategy& strategy,
                      const AttackBudget& budget, const DomainSplit& restricted,
                      const std::string& label, std::uint64_t seed, std::uint64_t noise_seed);

// Same budget and recording for a freshly initialized model: the
// train-from-scratch baseline at a matched step budget.
MetricSeries train_scratch(const std::vector<LayerSpec>& arch, const ProblemEnv& env,
                           const OptimizerSpec& optimizer, const AttackBudget& budget,
                           const DomainSplit& restricted, const std::string& label,
                           std::uint64_t seed, std::uint64_t noise_seed);

// "direct+all": keep all weights, tune everything. "initFC+FC": reinit the
// final layer and tune only it. "initFC+all": reinit the final layer, tune
// everything. Throws Error on any other name.
FineTuneStrategy make_named_strategy(const std::string& name, const OptimizerSpec& optimizer);

const std::vector<std::string>& strategy_names();

struct SummaryRow {
  std::string label;
  std::size_t iteration = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n-1); 0 when n == 1
  std::size_t n = 0;
};

// Groups series by label (first-seen order), then aggregates the metric at
// each iteration across seeds.
std::vector<SummaryRow> summarize(const std::vector<MetricSeries>& series);

struct SweepCell {
  std::string label;  // grouping key for the summary
  FineTuneStrategy strategy;
};

struct SweepConfig {
  std::vector<SweepCell> cells;
  std::vector<std::uint64_t> seeds;
  AttackBudget budget;
  std::uint64_t noise_seed = 0;  // frozen noising shared by every evaluation
};

struct SweepResult {
  std::vector<MetricSeries> series;  // one per cell x seed, cell-major order
  std::vector<SummaryRow> summary;
};

// Runs finetune for every cell x seed. Numeric blow-ups inside one run leave
// a truncated, unstable-flagged series; they never abort the sweep.
SweepResult sweep(const Model& model, const ProblemEnv& env, const DomainSplit& restricted,
                  const SweepConfig& cfg);

}  // namespace nftl
