#pragma once

#include "vlfa/diffusion.hpp"
#include "vlfa/metrics.hpp"

namespace vlfa {

struct AblationRow {
  std::string label;  // "gaussian", "init", or a condition mask name
  std::string seed;   // seed number, or "mean" for the seed-averaged table
  int n_scenes = 0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  long flags = 0;  // scenes with any flag below
  long diverged = 0;
  long keyp_zeroed = 0;
  long pa_fallback = 0;
  double mean_reproj = 0.0;  // over scenes with a measurable objective
  long reproj_valid = 0;
};

struct AblationReport {
  std::vector<AblationRow> per_seed;
  std::vector<AblationRow> table;  // one seed-averaged row per label
  std::string config_hash;
};

// Evaluates the initial prediction, a diffusion baseline started from a
// neutral pose instead of the initial prediction, and every requested
// condition mask, each over cfg.ablate.seeds.
AblationReport run_ablation(const std::vector<SceneRecord>& corpus, const RegressorNet& reg,
                            const GuidanceContext& ctx, const DenoiserNet& net,
                            const RunConfig& cfg);

// CSV of the seed-averaged table: mask,seed,n_scenes,mpjpe_mm,pa_mpjpe_mm,flags.
void write_ablation_csv(const AblationReport& rep, const std::string& path);

// Full mirror: config, per-seed rows, and the averaged table.
nlohmann::json ablation_json(const AblationReport& rep, const RunConfig& cfg);

}  // namespace vlfa
