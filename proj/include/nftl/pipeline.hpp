#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nftl/adversary.hpp"
#include "nftl/config.hpp"
#include "nftl/diffusion.hpp"
#include "nftl/domains.hpp"
#include "nftl/model.hpp"
#include "nftl/sophon.hpp"
#include "nftl/train_ops.hpp"

namespace nftl {

// Per-seed artefact directory: <out_dir>/seed_<seed>.
std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);

// Everything one run seed determines: both domains and their splits, plus the
// noise schedule in generation mode. The two domains share one generator seed,
// so their geometry overlaps enough for transfer while the ids keep them
// distributionally distinct.
struct RunData {
  DomainSplit original;
  DomainSplit restricted;
  DiffusionSchedule schedule;  // generation only
};

RunData build_run_data(const ExperimentConfig& cfg, std::uint64_t seed);

// View into `data`; the RunData must outlive the returned value.
ProblemEnv problem_env(const ExperimentConfig& cfg, const RunData& data);

// Trains the base model on the original-domain defender half. Writes f0.ckpt
// and pretrain.csv (iteration, loss, metric on the original test set).
struct PretrainOutcome {
  Model model;
  float final_metric = 0.0f;
};
PretrainOutcome run_pretrain(const ExperimentConfig& cfg, std::uint64_t seed);

// Runs protection starting from f0.ckpt. Writes protected.ckpt,
// protect_log.csv and protect_gate.csv. Fails if pretraining artefacts are
// missing.
ProtectResult run_protect(const ExperimentConfig& cfg, std::uint64_t seed);

// Which parameters the adversary starts from.
enum class AttackSource { protected_model, original_model, scratch };

std::string attack_source_name(AttackSource source);

// Fine-tunes each source on the restricted domain under every configured
// strategy at the configured budget. Writes attack_<source>.csv per source,
// plus attack_extended_<source>.csv when extended_epochs > 0.
void run_attack(const ExperimentConfig& cfg, std::uint64_t seed,
                const std::vector<AttackSource>& sources);

// Gradient oracles and the loss stability probe. Writes gradcheck.csv and
// stability_probe.csv under out_dir; ok is false on any tolerance breach.
struct GradcheckOutcome {
  bool ok = true;
  std::string detail;
};
GradcheckOutcome run_gradcheck(const ExperimentConfig& cfg, std::size_t cases = 200,
                               std::uint64_t seed = 20240801);

struct VerdictRow {
  std::string verdict;
  bool pass = false;
  double observed = 0.0;
  double bound = 0.0;
  std::string notes;
};

struct ReportOutcome {
  std::vector<VerdictRow> verdicts;
  bool all_pass = false;
};

// Aggregates every seed's artefacts into summary_attack.csv, verdicts.csv and
// manifest.json. Throws Error naming every missing artefact when some seed has
// not produced its runs yet.
ReportOutcome run_report(const ExperimentConfig& cfg);

}  // namespace nftl
