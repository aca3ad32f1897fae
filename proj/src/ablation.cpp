#include "vlfa/ablation.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

namespace vlfa {

namespace {

// Start of the baseline chain: a neutral standing pose at the depth the
// untrained translation head defaults to.
PoseParams neutral_init() {
  PoseParams p = PoseParams::rest();
  p.trans = {0.0f, 0.0f, 3.5f};
  return p;
}

struct SceneEval {
  PoseMetrics metrics;
  bool diverged = false;
  bool keyp_zeroed = false;
  bool reproj_valid = false;
  float reproj = 0.0f;
};

AblationRow reduce_rows(const std::vector<SceneEval>& evals, const std::string& label,
                        const std::string& seed) {
  AblationRow row;
  row.label = label;
  row.seed = seed;
  row.n_scenes = static_cast<int>(evals.size());
  double reproj_acc = 0.0;
  for (const SceneEval& e : evals) {
    row.mpjpe_mm += e.metrics.mpjpe_mm;
    row.pa_mpjpe_mm += e.metrics.pa_mpjpe_mm;
    row.diverged += e.diverged ? 1 : 0;
    row.keyp_zeroed += e.keyp_zeroed ? 1 : 0;
    row.pa_fallback += e.metrics.pa_degenerate ? 1 : 0;
    row.flags += (e.diverged || e.keyp_zeroed || e.metrics.pa_degenerate) ? 1 : 0;
    if (e.reproj_valid) {
      reproj_acc += e.reproj;
      row.reproj_valid += 1;
    }
  }
  row.mpjpe_mm /= row.n_scenes;
  row.pa_mpjpe_mm /= row.n_scenes;
  row.mean_reproj = row.reproj_valid > 0 ? reproj_acc / row.reproj_valid : 0.0;
  return row;
}

AblationRow average_rows(const std::vector<AblationRow>& rows) {
  AblationRow avg = rows[0];
  avg.seed = "mean";
  for (size_t i = 1; i < rows.size(); ++i) {
    avg.mpjpe_mm += rows[i].mpjpe_mm;
    avg.pa_mpjpe_mm += rows[i].pa_mpjpe_mm;
    avg.mean_reproj += rows[i].mean_reproj;
    avg.flags += rows[i].flags;
    avg.diverged += rows[i].diverged;
    avg.keyp_zeroed += rows[i].keyp_zeroed;
    avg.pa_fallback += rows[i].pa_fallback;
    avg.reproj_valid += rows[i].reproj_valid;
  }
  avg.mpjpe_mm /= static_cast<double>(rows.size());
  avg.pa_mpjpe_mm /= static_cast<double>(rows.size());
  avg.mean_reproj /= static_cast<double>(rows.size());
  return avg;
}

nlohmann::json row_json(const AblationRow& r) {
  return {{"mask", r.label},
          {"seed", r.seed},
          {"n_scenes", r.n_scenes},
          {"mpjpe_mm", r.mpjpe_mm},
          {"pa_mpjpe_mm", r.pa_mpjpe_mm},
          {"flags", r.flags},
          {"diverged", r.diverged},
          {"keyp_zeroed", r.keyp_zeroed},
          {"pa_fallback", r.pa_fallback},
          {"mean_reproj", r.mean_reproj},
          {"reproj_valid", r.reproj_valid}};
}

}  // namespace

AblationReport run_ablation(const std::vector<SceneRecord>& corpus, const RegressorNet& reg,
                            const GuidanceContext& ctx, const DenoiserNet& net,
                            const RunConfig& cfg) {
  if (corpus.empty()) throw ContractError("run_ablation: empty corpus");
  if (cfg.ablate.seeds.empty()) throw ContractError("run_ablation: no seeds");
  for (const std::string& m : cfg.ablate.masks) {
    if (!valid_mask_name(m)) throw ConfigError("unknown condition mask \"" + m + "\" in ablate.masks");
  }

  size_t n = corpus.size();
  NoiseSchedule sched =
      NoiseSchedule::linear(cfg.diffusion.timesteps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);
  bool with_scale = cfg.metrics.pa_with_scale;

  std::vector<const SceneRecord*> scenes(n);
  std::vector<PoseParams> reg_inits(n);
  std::vector<PoseParams> neutral_inits(n, neutral_init());
  for (size_t i = 0; i < n; ++i) {
    scenes[i] = &corpus[i];
    reg_inits[i] = predict(reg, corpus[i]);
  }

  AblationReport rep;
  rep.config_hash = cfg.hash();
  Rng root(cfg.seed);
  Rng ablate_root = root.derive("ablate");

  auto eval_refined = [&](const std::vector<PoseParams>& inits, const ConditionMask& mask,
                          uint64_t refine_seed) {
    RefineOptions opt;
    opt.mask = mask;
    std::vector<RefineResult> results;
    refine_batch(scenes, inits, ctx, net, sched, opt, refine_seed, &results);
    std::vector<SceneEval> evals(n);
    for (size_t i = 0; i < n; ++i) {
      evals[i].metrics =
          pose_metrics(results[i].pose, corpus[i].gt_params, *ctx.tmpl, with_scale);
      evals[i].diverged = results[i].diverged;
      evals[i].keyp_zeroed = results[i].keyp_zeroed;
      evals[i].reproj_valid = results[i].reproj_valid;
      evals[i].reproj = results[i].reproj;
    }
    return evals;
  };

  auto eval_inits = [&]() {
    std::vector<SceneEval> evals(n);
    for (size_t i = 0; i < n; ++i) {
      evals[i].metrics = pose_metrics(reg_inits[i], corpus[i].gt_params, *ctx.tmpl, with_scale);
      try {
        JointSet js = fk_joints(reg_inits[i], *ctx.tmpl);
        evals[i].reproj = reproj_objective(corpus[i].camera, js, corpus[i].obs_keypoints);
        evals[i].reproj_valid = true;
      } catch (const BehindCameraError&) {
      }
    }
    return evals;
  };

  std::vector<std::string> labels;
  labels.push_back("gaussian");
  labels.push_back("init");
  for (const std::string& m : cfg.ablate.masks) labels.push_back(m);

  ConditionMask all;
  for (const std::string& label : labels) {
    std::vector<AblationRow> seed_rows;
    for (int seed : cfg.ablate.seeds) {
      uint64_t rseed = ablate_root.derive(label, static_cast<uint64_t>(seed)).next_u64();
      std::vector<SceneEval> evals;
      if (label == "gaussian") {
        evals = eval_refined(neutral_inits, all, rseed);
      } else if (label == "init") {
        evals = eval_inits();
      } else {
        evals = eval_refined(reg_inits, ConditionMask::from_name(label), rseed);
      }
      seed_rows.push_back(reduce_rows(evals, label, std::to_string(seed)));
    }
    for (const AblationRow& r : seed_rows) rep.per_seed.push_back(r);
    rep.table.push_back(average_rows(seed_rows));
  }
  return rep;
}

void write_ablation_csv(const AblationReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "mask,seed,n_scenes,mpjpe_mm,pa_mpjpe_mm,flags\n";
  char buf[256];
  for (const AblationRow& r : rep.table) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f,%ld\n", r.label.c_str(), r.seed.c_str(),
                  r.n_scenes, r.mpjpe_mm, r.pa_mpjpe_mm, r.flags);
    out << buf;
  }
  if (!out.good()) throw FormatError("failed writing " + path);
}

nlohmann::json ablation_json(const AblationReport& rep, const RunConfig& cfg) {
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationRow& r : rep.per_seed) rows.push_back(row_json(r));
  nlohmann::json table = nlohmann::json::array();
  for (const AblationRow& r : rep.table) table.push_back(row_json(r));
  return {{"config", cfg.to_json()},
          {"config_hash", rep.config_hash},
          {"rows", rows},
          {"table", table}};
}

}  // namespace vlfa
