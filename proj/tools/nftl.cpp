#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nftl/adversary.hpp"
#include "nftl/config.hpp"
#include "nftl/error.hpp"
#include "nftl/pipeline.hpp"
#include "nftl/train_ops.hpp"

namespace {

using namespace nftl;

struct CommonArgs {
  std::string config_path;
  std::string profile;
  std::string mode = "classification";
  std::string out_dir;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  CLI::Option* config =
      cmd->add_option("--config", args.config_path, "experiment config file (JSON)");
  CLI::Option* profile =
      cmd->add_option("--profile", args.profile, "built-in config: desk (fast) or paper (full)")
          ->check(CLI::IsMember({"desk", "paper"}));
  config->excludes(profile);
  profile->excludes(config);
  cmd->add_option("--mode", args.mode, "task mode for --profile (classification | generation)")
      ->check(CLI::IsMember({"classification", "generation"}))
      ->needs(profile);
  cmd->add_option("--seed", args.seed, "run only this seed")->each([&](const std::string&) {
    args.has_seed = true;
  });
  cmd->add_option("--out", args.out_dir, "output directory (overrides the config)");
  if (config_required) {
    // exactly one source of truth for the experiment definition
    cmd->callback([&args]() {
      if (args.config_path.empty() && args.profile.empty()) {
        throw CLI::ValidationError("pass --config FILE or --profile {desk,paper}");
      }
    });
  }
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_path.empty()) {
    cfg = load_config(args.config_path);
  } else {
    const TaskMode mode = task_mode_from_name(args.mode);
    cfg = args.profile == "paper" ? paper_profile(mode) : desk_profile(mode);
  }
  if (args.has_seed) cfg.seeds = {args.seed};
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  validate_config(cfg);
  return cfg;
}

std::vector<AttackSource> pick_sources(const std::string& checkpoint, bool scratch) {
  if (scratch) return {AttackSource::scratch};
  if (checkpoint.empty()) {
    return {AttackSource::protected_model, AttackSource::original_model, AttackSource::scratch};
  }
  const std::string name = std::filesystem::path(checkpoint).filename().string();
  if (name == "protected.ckpt") return {AttackSource::protected_model};
  if (name == "f0.ckpt") return {AttackSource::original_model};
  throw Error("unknown checkpoint '" + name + "': expected f0.ckpt or protected.ckpt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-fine-tunable learning: pretrain, protect, attack, gradcheck, report"};
  app.require_subcommand(1);

  CommonArgs pretrain_args;
  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "train the base model per seed");
  add_common(pretrain_cmd, pretrain_args, true);

  CommonArgs protect_args;
  CLI::App* protect_cmd =
      app.add_subcommand("protect", "run suppression/reinforcement training per seed");
  add_common(protect_cmd, protect_args, true);

  CommonArgs attack_args;
  std::string attack_checkpoint;
  bool attack_scratch = false;
  CLI::App* attack_cmd =
      app.add_subcommand("attack", "fine-tune checkpoints on the restricted domain");
  add_common(attack_cmd, attack_args, true);
  attack_cmd->add_option("checkpoint", attack_checkpoint,
                         "start from this checkpoint only (f0.ckpt | protected.ckpt)");
  attack_cmd->add_flag("--scratch", attack_scratch, "train from scratch at the same budget");

  CommonArgs gradcheck_args;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference oracles and stability probes");
  add_common(gradcheck_cmd, gradcheck_args, false);

  CommonArgs report_args;
  bool report_strict = false;
  CLI::App* report_cmd = app.add_subcommand("report", "aggregate runs and compute verdicts");
  add_common(report_cmd, report_args, true);
  report_cmd->add_flag("--strict", report_strict, "exit 3 when any verdict fails");

  try {
    app.parse(argc, argv);

    if (pretrain_cmd->parsed()) {
      const ExperimentConfig cfg = resolve_config(pretrain_args);
      for (std::uint64_t seed : cfg.seeds) {
        const PretrainOutcome outcome = run_pretrain(cfg, seed);
        std::cout << "pretrain seed " << seed << ": "
                  << metric_kind_name(task_metric(cfg.task_mode)) << " "
                  << outcome.final_metric << " -> " << (seed_dir(cfg, seed) / "f0.ckpt").string()
                  << "\n";
      }
    } else if (protect_cmd->parsed()) {
      const ExperimentConfig cfg = resolve_config(protect_args);
      for (std::uint64_t seed : cfg.seeds) {
        const ProtectResult res = run_protect(cfg, seed);
        std::cout << "protect seed " << seed << ": original loss "
                  << res.original_loss_before << " -> " << res.original_loss_after
                  << (res.lambda_gate_ok ? " (gate ok)" : " (gate exceeded)") << " -> "
                  << (seed_dir(cfg, seed) / "protected.ckpt").string() << "\n";
      }
    } else if (attack_cmd->parsed()) {
      const ExperimentConfig cfg = resolve_config(attack_args);
      const std::vector<AttackSource> sources = pick_sources(attack_checkpoint, attack_scratch);
      for (std::uint64_t seed : cfg.seeds) {
        run_attack(cfg, seed, sources);
        for (AttackSource source : sources) {
          std::cout << "attack seed " << seed << ": "
                    << (seed_dir(cfg, seed) / ("attack_" + attack_source_name(source) + ".csv"))
                           .string()
                    << "\n";
        }
      }
    } else if (gradcheck_cmd->parsed()) {
      const ExperimentConfig cfg = resolve_config(gradcheck_args);
      const GradcheckOutcome outcome = run_gradcheck(cfg);
      std::cout << "gradcheck: " << outcome.detail << "\n";
      if (!outcome.ok) return 2;
    } else if (report_cmd->parsed()) {
      const ExperimentConfig cfg = resolve_config(report_args);
      const ReportOutcome outcome = run_report(cfg);
      for (const VerdictRow& row : outcome.verdicts) {
        std::cout << (row.pass ? "pass" : "FAIL") << " " << row.verdict << ": observed "
                  << row.observed << " vs bound " << row.bound << " (" << row.notes << ")\n";
      }
      std::cout << "report: " << (outcome.all_pass ? "all verdicts pass" : "verdict failure")
                << " -> " << (std::filesystem::path(cfg.out_dir) / "verdicts.csv").string()
                << "\n";
      if (report_strict && !outcome.all_pass) return 3;
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage problems map to 1; --help stays 0
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
