#include "nftl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "nftl/csv.hpp"
#include "nftl/error.hpp"
#include "nftl/gradcheck.hpp"
#include "nftl/losses.hpp"
#include "nftl/optim.hpp"
#include "nftl/rng.hpp"
#include "nftl/version.hpp"

namespace nftl {

namespace fs = std::filesystem;

namespace {

// One frozen noising stream for every metric evaluation, shared across seeds
// and sources, so generation-mode numbers stay comparable everywhere.
const std::uint64_t kEvalNoiseSeed = hash64("eval-noise");

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

Model load_required_checkpoint(const fs::path& path, const std::string& produced_by) {
  if (!fs::exists(path)) {
    throw Error("missing '" + path.string() + "' (run " + produced_by + " first)");
  }
  return load_checkpoint(path.string());
}

// Task loss on a test set under the frozen evaluation noising.
float test_loss(const Model& model, const ProblemEnv& env, const Dataset& test) {
  Rng rng(kEvalNoiseSeed);
  PreparedBatch batch =
      prepare_batch(env, test.inputs, test.labels ? &*test.labels : nullptr, rng);
  return eval_loss(model, task_loss_id(env.mode), batch.inputs, &batch.targets);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

// Data rows of a CSV whose header must match exactly (guards against stale
// artefacts from older layouts).
std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error("'" + path.string() + "' does not start with '" + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_line(line));
  }
  if (rows.empty()) throw Error("'" + path.string() + "' has no data rows");
  return rows;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

const char* kAttackHeader =
    "iteration,metric,value,seed,source,strategy,init_mode,transfer_mode,optimizer,lr,"
    "weight_decay,batch_size,unstable";

}  // namespace

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
}

RunData build_run_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  RunData data;
  // Both domains draw from one generator seed: shared mean geometry makes the
  // restricted domain reachable from original-domain features.
  const std::uint64_t data_seed = mix64(seed, hash64("data"));
  if (cfg.task_mode == TaskMode::classification) {
    Dataset original = gen_classification_domain(cfg.data.original_id, cfg.data.samples,
                                                 cfg.data.classes, cfg.data.input_dim, data_seed);
    Dataset restricted = gen_classification_domain(cfg.data.restricted_id, cfg.data.samples,
                                                   cfg.data.classes, cfg.data.input_dim, data_seed);
    data.original = split(original, cfg.data.test_fraction, mix64(seed, hash64("split-original")));
    data.restricted =
        split(restricted, cfg.data.test_fraction, mix64(seed, hash64("split-restricted")));
  } else {
    Dataset original =
        gen_generation_domain(cfg.data.original_id, cfg.data.samples, cfg.data.input_dim, data_seed);
    Dataset restricted = gen_generation_domain(cfg.data.restricted_id, cfg.data.samples,
                                               cfg.data.input_dim, data_seed);
    data.original = split(original, cfg.data.test_fraction, mix64(seed, hash64("split-original")));
    data.restricted =
        split(restricted, cfg.data.test_fraction, mix64(seed, hash64("split-restricted")));
    data.schedule = make_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_start,
                                  cfg.diffusion.beta_end);
  }
  return data;
}

ProblemEnv problem_env(const ExperimentConfig& cfg, const RunData& data) {
  ProblemEnv env;
  env.mode = cfg.task_mode;
  env.schedule = cfg.task_mode == TaskMode::generation ? &data.schedule : nullptr;
  return env;
}

PretrainOutcome run_pretrain(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  RunData data = build_run_data(cfg, seed);
  ProblemEnv env = problem_env(cfg, data);

  Rng init_rng(mix64(seed, hash64("model-init")));
  Model model = make_model(config_arch(cfg), init_rng);

  BatchIterator batches(data.original.defender_half, cfg.pretrain.batch_size,
                        mix64(seed, hash64("pretrain-order")));
  Rng noise(mix64(seed, hash64("pretrain-noise")));
  const LossId loss = task_loss_id(cfg.task_mode);
  OptimizerState state = init_optimizer(cfg.pretrain.optimizer, model.params.size());
  const std::size_t steps = cfg.pretrain.epochs * batches.batches_per_epoch();

  std::ofstream out = open_out(seed_dir(cfg, seed) / "pretrain.csv");
  out << "iteration,loss,metric\n";
  float metric = 0.0f;
  auto record = [&](std::size_t iter) {
    const float l = test_loss(model, env, data.original.test);
    metric = evaluate(model, env, data.original.test, kEvalNoiseSeed);
    out << iter << ',' << csv_num(l) << ',' << csv_num(metric) << '\n';
  };
  record(0);
  for (std::size_t t = 1; t <= steps; ++t) {
    BatchIterator::Batch batch = batches.next();
    PreparedBatch prep =
        prepare_batch(env, batch.inputs, batch.labels ? &*batch.labels : nullptr, noise);
    LossGrad lg = eval_loss_and_grad(model, loss, prep.inputs, &prep.targets);
    auto [next, next_state] = step(cfg.pretrain.optimizer, state, model.params, lg.param_grad);
    model.params = std::move(next);
    state = std::move(next_state);
    if (t % cfg.pretrain.eval_every == 0 || t == steps) record(t);
  }
  save_checkpoint(model, (seed_dir(cfg, seed) / "f0.ckpt").string());
  return {std::move(model), metric};
}

ProtectResult run_protect(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  RunData data = build_run_data(cfg, seed);
  ProblemEnv env = problem_env(cfg, data);
  const fs::path dir = seed_dir(cfg, seed);

  Model f0 = load_required_checkpoint(dir / "f0.ckpt", "pretrain");
  ProtectResult res = protect(f0, env, cfg.sophon, data.original, data.restricted,
                              cfg.ntr_batch_size, mix64(seed, hash64("protect")));
  save_checkpoint(res.model, (dir / "protected.ckpt").string());

  std::ofstream log = open_out(dir / "protect_log.csv");
  log << "iteration,l_fts,l_ntr,original_metric,restricted_metric\n";
  for (const IterationRecord& rec : res.log) {
    log << rec.iter << ',' << (rec.has_fts ? csv_num(rec.l_fts) : std::string()) << ','
        << (rec.has_ntr ? csv_num(rec.l_ntr) : std::string()) << ','
        << csv_num(rec.original_metric) << ',' << csv_num(rec.restricted_metric) << '\n';
  }

  std::ofstream gate = open_out(dir / "protect_gate.csv");
  gate << "loss_before,loss_after,rise,lambda_tol,gate_ok\n";
  gate << csv_num(res.original_loss_before) << ',' << csv_num(res.original_loss_after) << ','
       << csv_num(res.original_loss_after - res.original_loss_before) << ','
       << csv_num(cfg.sophon.lambda_tol) << ',' << (res.lambda_gate_ok ? 1 : 0) << '\n';
  return res;
}

std::string attack_source_name(AttackSource source) {
  switch (source) {
    case AttackSource::protected_model: return "protected";
    case AttackSource::original_model: return "original";
    case AttackSource::scratch: return "scratch";
  }
  throw Error("unknown attack source");
}

void run_attack(const ExperimentConfig& cfg, std::uint64_t seed,
                const std::vector<AttackSource>& sources) {
  validate_config(cfg);
  if (sources.empty()) throw Error("attack: no sources requested");
  RunData data = build_run_data(cfg, seed);
  ProblemEnv env = problem_env(cfg, data);
  const fs::path dir = seed_dir(cfg, seed);
  // One stream seed for every run in this seed's sweep: sources and strategies
  // see identical batch orders, so curves compare like for like.
  const std::uint64_t attack_seed = mix64(seed, hash64("attack-run"));

  struct Row {
    std::string strategy;
    std::string init_mode;
    std::string transfer_mode;
    MetricSeries series;
  };

  auto run_budget = [&](const AttackBudget& budget, const std::string& prefix) {
    for (AttackSource source : sources) {
      const std::string sname = attack_source_name(source);
      std::vector<Row> rows;
      if (source == AttackSource::scratch) {
        MetricSeries series =
            train_scratch(config_arch(cfg), env, cfg.attack.optimizer, budget, data.restricted,
                          "scratch:scratch", attack_seed, kEvalNoiseSeed);
        rows.push_back({"scratch", "fresh", "all", std::move(series)});
      } else {
        const bool prot = source == AttackSource::protected_model;
        Model start = load_required_checkpoint(dir / (prot ? "protected.ckpt" : "f0.ckpt"),
                                               prot ? "protect" : "pretrain");
        for (const std::string& name : cfg.attack.strategies) {
          FineTuneStrategy strategy = make_named_strategy(name, cfg.attack.optimizer);
          MetricSeries series = finetune(start, env, strategy, budget, data.restricted,
                                         sname + ":" + name, attack_seed, kEvalNoiseSeed);
          rows.push_back({name, init_mode_name(strategy.init_mode),
                          transfer_mode_name(strategy.transfer_mode), std::move(series)});
        }
      }
      std::ofstream out = open_out(dir / (prefix + sname + ".csv"));
      out << kAttackHeader << '\n';
      for (const Row& row : rows) {
        for (const MetricPoint& pt : row.series.points) {
          out << pt.iteration << ',' << metric_kind_name(row.series.metric) << ','
              << csv_num(pt.value) << ',' << seed << ',' << sname << ',' << row.strategy << ','
              << row.init_mode << ',' << row.transfer_mode << ','
              << opt_kind_name(cfg.attack.optimizer.kind) << ','
              << csv_num(cfg.attack.optimizer.lr) << ','
              << csv_num(cfg.attack.optimizer.weight_decay) << ',' << budget.batch_size << ','
              << (row.series.unstable ? 1 : 0) << '\n';
        }
      }
    }
  };

  run_budget({cfg.attack.epochs, cfg.attack.batch_size, cfg.attack.eval_every}, "attack_");
  if (cfg.attack.extended_epochs > 0) {
    run_budget({cfg.attack.extended_epochs, cfg.attack.batch_size, cfg.attack.eval_every},
               "attack_extended_");
  }
}

GradcheckOutcome run_gradcheck(const ExperimentConfig& cfg, std::size_t cases,
                               std::uint64_t seed) {
  std::ostringstream buf;
  write_gradcheck_csv(buf, cases, seed);
  const std::string text = buf.str();
  open_out(fs::path(cfg.out_dir) / "gradcheck.csv") << text;
  {
    std::ofstream probe = open_out(fs::path(cfg.out_dir) / "stability_probe.csv");
    write_probe_csv(probe, {LossId::ce, LossId::ice, LossId::klu, LossId::mse, LossId::dos}, 100,
                    4, 8);
  }

  GradcheckOutcome res;
  auto add_fail = [&](const std::string& what) {
    res.ok = false;
    if (!res.detail.empty()) res.detail += "; ";
    res.detail += what;
  };
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (fields.back() != "1") add_fail(fields.front() + " breached tolerance");
  }
  const ProbeVerdict probe = check_stability_dichotomy(100);
  if (!probe.ok) add_fail("stability probe: " + probe.detail);
  if (res.ok) res.detail = "all gradient and stability checks passed";
  return res;
}

ReportOutcome run_report(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const fs::path root(cfg.out_dir);
  const std::vector<std::string> per_seed = {
      "pretrain.csv",         "protect_log.csv",    "protect_gate.csv",
      "attack_protected.csv", "attack_original.csv", "attack_scratch.csv"};

  std::vector<std::string> inputs;
  std::string missing;
  for (std::uint64_t seed : cfg.seeds) {
    for (const std::string& name : per_seed) {
      const fs::path path = seed_dir(cfg, seed) / name;
      if (fs::exists(path)) {
        inputs.push_back(path.generic_string());
      } else {
        missing += (missing.empty() ? "" : ", ") + path.generic_string();
      }
    }
  }
  if (!missing.empty()) throw Error("report: missing runs: " + missing);

  // Per-seed scalars.
  std::vector<double> pre_metric, prot_orig, prot_restr, rises;
  bool gate_all_ok = true;
  // Attack curves, rebuilt exactly as the harness recorded them.
  std::vector<MetricSeries> series;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path dir = seed_dir(cfg, seed);
    pre_metric.push_back(std::stod(read_csv(dir / "pretrain.csv", "iteration,loss,metric")
                                       .back()[2]));
    {
      const auto rows =
          read_csv(dir / "protect_log.csv", "iteration,l_fts,l_ntr,original_metric,restricted_metric");
      prot_orig.push_back(std::stod(rows.back()[3]));
      prot_restr.push_back(std::stod(rows.back()[4]));
    }
    {
      const auto rows =
          read_csv(dir / "protect_gate.csv", "loss_before,loss_after,rise,lambda_tol,gate_ok");
      rises.push_back(std::stod(rows.back()[2]));
      gate_all_ok = gate_all_ok && rows.back()[4] == "1";
    }
    for (const char* name : {"attack_protected.csv", "attack_original.csv", "attack_scratch.csv"}) {
      for (const auto& row : read_csv(dir / name, kAttackHeader)) {
        const std::string label = row[4] + ":" + row[5];
        const std::uint64_t row_seed = std::stoull(row[3]);
        if (series.empty() || series.back().label != label || series.back().seed != row_seed) {
          MetricSeries s;
          s.metric = row[1] == "acc" ? MetricKind::acc : MetricKind::mse;
          s.label = label;
          s.seed = row_seed;
          series.push_back(std::move(s));
        }
        series.back().points.push_back(
            {static_cast<std::size_t>(std::stoull(row[0])), std::stof(row[2])});
        series.back().unstable = row[12] == "1";
      }
    }
  }

  const std::vector<SummaryRow> summary = summarize(series);
  {
    std::ofstream out = open_out(root / "summary_attack.csv");
    out << "source,strategy,iteration,mean,sd,n\n";
    for (const SummaryRow& row : summary) {
      const std::size_t colon = row.label.find(':');
      out << row.label.substr(0, colon) << ',' << row.label.substr(colon + 1) << ','
          << row.iteration << ',' << csv_num(row.mean) << ',' << csv_num(row.sd) << ',' << row.n
          << '\n';
    }
  }

  // label -> iteration -> mean, plus the final recorded iteration per label.
  std::map<std::string, std::map<std::size_t, double>> means;
  for (const SummaryRow& row : summary) means[row.label][row.iteration] = row.mean;
  auto means_of = [&](const std::string& label) -> const std::map<std::size_t, double>& {
    const auto it = means.find(label);
    if (it == means.end()) throw Error("report: no recorded series '" + label + "'");
    return it->second;
  };
  auto final_mean = [&](const std::string& label) -> double {
    return means_of(label).rbegin()->second;
  };

  const bool cls = cfg.task_mode == TaskMode::classification;
  const double chance = cls ? 1.0 / static_cast<double>(cfg.data.classes) : 0.0;
  ReportOutcome outcome;

  {
    VerdictRow row;
    row.verdict = "intactness";
    if (cls) {
      row.observed = mean_of(pre_metric) - mean_of(prot_orig);  // accuracy drop
      row.bound = 0.05;
      row.pass = row.observed <= row.bound;
    } else {
      row.observed = mean_of(prot_orig) / mean_of(pre_metric) - 1.0;  // relative mse rise
      row.bound = 0.20;
      row.pass = row.observed <= row.bound;
    }
    row.notes = "pretrained=" + csv_num(mean_of(pre_metric)) +
                "; protected=" + csv_num(mean_of(prot_orig));
    outcome.verdicts.push_back(row);
  }
  {
    VerdictRow row;
    row.verdict = "lambda_gate";
    row.observed = *std::max_element(rises.begin(), rises.end());
    row.bound = cfg.sophon.lambda_tol;
    row.pass = gate_all_ok;
    row.notes = "max original-loss rise across seeds";
    outcome.verdicts.push_back(row);
  }
  {
    VerdictRow row;
    row.verdict = "non_transferability";
    const auto it = means.find("protected:direct+all");
    const double protected0 =
        it != means.end() ? it->second.at(0) : mean_of(prot_restr);  // pre-finetune metric
    if (cls) {
      row.observed = protected0;
      row.bound = chance + 0.10;
      row.pass = row.observed <= row.bound;
      row.notes = "protected restricted metric before any fine-tuning vs chance";
    } else {
      // Chance level for denoising: predicting nothing scores E||eps||^2,
      // which is the input dimension. The trap must hold the protected model
      // at or above most of that.
      row.observed = protected0;
      row.bound = 0.8 * static_cast<double>(cfg.data.input_dim);
      row.pass = row.observed >= row.bound;
      row.notes = "protected restricted mse before any fine-tuning vs chance level";
    }
    outcome.verdicts.push_back(row);
  }
  {
    VerdictRow row;
    row.verdict = "non_fine_tunability";
    row.pass = true;
    const double scratch_final = final_mean("scratch:scratch");
    if (cls) {
      double worst = 0.0;
      for (const std::string& name : cfg.attack.strategies) {
        const double prot_final = final_mean("protected:" + name);
        worst = std::max(worst, prot_final);
        if (prot_final > scratch_final + 1e-9 || prot_final > chance + 0.15) row.pass = false;
        row.notes += (row.notes.empty() ? "" : "; ") + name + "=" + csv_num(prot_final);
      }
      row.observed = worst;
      row.bound = std::min(scratch_final, chance + 0.15);
      row.notes += "; scratch=" + csv_num(scratch_final);
    } else {
      // Protected fine-tuning must never beat the matched-budget scratch
      // baseline at any recorded point after training starts.
      double worst_margin = 0.0;
      bool first = true;
      const auto& scratch = means_of("scratch:scratch");
      for (const std::string& name : cfg.attack.strategies) {
        for (const auto& [iter, value] : means_of("protected:" + name)) {
          if (iter == 0) continue;
          const auto scr = scratch.find(iter);
          if (scr == scratch.end()) continue;
          const double margin = value - scr->second;
          if (first || margin < worst_margin) worst_margin = margin;
          first = false;
        }
      }
      row.observed = worst_margin;
      row.bound = 0.0;
      row.pass = !first && worst_margin >= -1e-9;
      row.notes = "min protected-minus-scratch restricted mse over recorded steps";
    }
    outcome.verdicts.push_back(row);
  }

  outcome.all_pass = true;
  for (const VerdictRow& row : outcome.verdicts) outcome.all_pass = outcome.all_pass && row.pass;

  {
    std::ofstream out = open_out(root / "verdicts.csv");
    out << "verdict,pass,observed,bound,notes\n";
    for (const VerdictRow& row : outcome.verdicts) {
      out << row.verdict << ',' << (row.pass ? 1 : 0) << ',' << csv_num(row.observed) << ','
          << csv_num(row.bound) << ',' << row.notes << '\n';
    }
  }
  {
    nlohmann::json manifest;
    manifest["version"] = NFTL_VERSION;
    manifest["config_hash"] = config_hash_hex(cfg);
    manifest["config"] = nlohmann::json::parse(canonical_config_json(cfg));
    manifest["seeds"] = cfg.seeds;
    manifest["inputs"] = inputs;
    manifest["all_pass"] = outcome.all_pass;
    open_out(root / "manifest.json") << manifest.dump(2) << '\n';
  }
  return outcome;
}

}  // namespace nftl
