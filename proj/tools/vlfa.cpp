#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "vlfa/pipeline.hpp"

namespace {

vlfa::RunConfig load_config_or_default(const std::string& path) {
  vlfa::RunConfig cfg;
  if (!path.empty()) cfg = vlfa::RunConfig::load(path);
  cfg.validate();
  return cfg;
}

struct RefineArgs {
  std::string config;
  std::string data;
  std::string ckpt_dir;
  std::string mask = "all";
  std::string out;
  std::string traj;
  bool allow_mixed = false;
  bool seed_set = false;
  uint64_t seed = 0;
};

int do_refine(const RefineArgs& a) {
  vlfa::RunConfig cfg = load_config_or_default(a.config);
  if (!vlfa::valid_mask_name(a.mask)) {
    throw vlfa::ConfigError("unknown condition mask \"" + a.mask + "\"");
  }
  auto corpus = vlfa::load_corpus(a.data);

  vlfa::RegressorNet reg = vlfa::regressor_from_checkpoint(
      vlfa::load_artifact(a.ckpt_dir, vlfa::kRegressorFile, "regressor", cfg, a.allow_mixed));
  vlfa::PoseVqvae vq = vlfa::vqvae_from_checkpoint(
      vlfa::load_artifact(a.ckpt_dir, vlfa::kVqvaeFile, "vqvae", cfg, a.allow_mixed));
  vlfa::freeze_vqvae(vq);
  vlfa::TextEncoder text = vlfa::text_encoder_from_checkpoint(
      vlfa::load_artifact(a.ckpt_dir, vlfa::kTextFile, "text_align", cfg, a.allow_mixed));
  vlfa::DenoiserNet net = vlfa::denoiser_from_checkpoint(
      vlfa::load_artifact(a.ckpt_dir, vlfa::kDenoiserFile, "diffusion", cfg, a.allow_mixed));

  vlfa::GuidanceContext ctx;
  ctx.vqvae = &vq;
  ctx.text = &text;
  ctx.tmpl = &vlfa::BodyTemplate::canonical();
  ctx.sigma = cfg.diffusion.sigma;
  ctx.cosine_squared = cfg.align.cosine_squared;
  vlfa::NoiseSchedule sched = vlfa::NoiseSchedule::linear(
      cfg.diffusion.timesteps, cfg.diffusion.beta_min, cfg.diffusion.beta_max);

  vlfa::RefineOptions opt;
  opt.mask = vlfa::ConditionMask::from_name(a.mask);
  opt.record_trajectory = !a.traj.empty();

  std::vector<const vlfa::SceneRecord*> scenes;
  std::vector<vlfa::PoseParams> inits;
  scenes.reserve(corpus.size());
  inits.reserve(corpus.size());
  for (const auto& rec : corpus) {
    scenes.push_back(&rec);
    inits.push_back(vlfa::predict(reg, rec));
  }

  uint64_t seed = a.seed_set ? a.seed : cfg.seed;
  std::vector<vlfa::RefineResult> results;
  vlfa::refine_batch(scenes, inits, ctx, net, sched, opt, seed, &results);

  std::vector<vlfa::PoseRecord> poses(results.size());
  for (size_t i = 0; i < results.size(); ++i) {
    poses[i].id = corpus[i].id;
    poses[i].pose = results[i].pose;
    poses[i].diverged = results[i].diverged;
    poses[i].keyp_zeroed = results[i].keyp_zeroed;
  }
  vlfa::save_poses(a.out, poses);

  if (!a.traj.empty()) {
    std::ofstream tout(a.traj, std::ios::binary);
    if (!tout) throw vlfa::FormatError("cannot open " + a.traj + " for writing");
    for (size_t i = 0; i < results.size(); ++i) {
      nlohmann::json j = {{"id", corpus[i].id}, {"trajectory", results[i].trajectory}};
      tout << j.dump() << "\n";
    }
    if (!tout.good()) throw vlfa::FormatError("failed writing " + a.traj);
  }

  long flagged = 0;
  for (const auto& r : results) flagged += (r.diverged || r.keyp_zeroed) ? 1 : 0;
  std::fprintf(stderr, "[refine] %zu scenes, mask %s, %ld flagged -> %s\n", corpus.size(),
               a.mask.c_str(), flagged, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string data;
  std::string poses;
  std::string ckpt_dir;
  bool allow_mixed = false;
};

int do_eval(const EvalArgs& a) {
  vlfa::RunConfig cfg = load_config_or_default(a.config);
  auto corpus = vlfa::load_corpus(a.data);
  const vlfa::BodyTemplate& tmpl = vlfa::BodyTemplate::canonical();

  std::vector<std::pair<const vlfa::SceneRecord*, vlfa::PoseParams>> pairs;
  if (!a.poses.empty()) {
    auto poses = vlfa::load_poses(a.poses);
    std::map<int, const vlfa::SceneRecord*> by_id;
    for (const auto& rec : corpus) by_id[rec.id] = &rec;
    for (const auto& p : poses) {
      auto it = by_id.find(p.id);
      if (it == by_id.end()) {
        throw vlfa::ConfigError("pose id " + std::to_string(p.id) + " has no scene in " + a.data);
      }
      pairs.emplace_back(it->second, p.pose);
    }
  } else if (!a.ckpt_dir.empty()) {
    vlfa::RegressorNet reg = vlfa::regressor_from_checkpoint(
        vlfa::load_artifact(a.ckpt_dir, vlfa::kRegressorFile, "regressor", cfg, a.allow_mixed));
    for (const auto& rec : corpus) pairs.emplace_back(&rec, vlfa::predict(reg, rec));
  } else {
    throw vlfa::ConfigError("eval needs --poses or --ckpt-dir");
  }

  double mpjpe = 0.0, pa = 0.0;
  long fallback = 0;
  for (const auto& [rec, pose] : pairs) {
    vlfa::PoseMetrics m = vlfa::pose_metrics(pose, rec->gt_params, tmpl, cfg.metrics.pa_with_scale);
    mpjpe += m.mpjpe_mm;
    pa += m.pa_mpjpe_mm;
    fallback += m.pa_degenerate ? 1 : 0;
  }
  size_t n = pairs.size();
  if (n == 0) throw vlfa::ConfigError("nothing to evaluate");
  nlohmann::json out = {{"n_scenes", n},
                        {"mpjpe_mm", mpjpe / static_cast<double>(n)},
                        {"pa_mpjpe_mm", pa / static_cast<double>(n)},
                        {"pa_fallback", fallback}};
  std::printf("%s\n", out.dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose refinement pipeline: synthetic scenes, initial regression, "
               "latent text alignment, and guided diffusion"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("-j,--threads", threads, "worker threads (0 = VLFA_THREADS or core count)");

  std::string config_path, dir, out_dir, data_path;
  bool allow_mixed = false;

  auto* gen = app.add_subcommand("gen-data", "synthesize train and eval corpora");
  gen->add_option("--config", config_path, "config JSON");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* treg = app.add_subcommand("train-regressor", "train the initial regressor");
  treg->add_option("--config", config_path, "config JSON");
  treg->add_option("--dir", dir, "artifact directory")->required();

  auto* tvq = app.add_subcommand("train-vqvae", "train the discrete pose latent space");
  tvq->add_option("--config", config_path, "config JSON");
  tvq->add_option("--dir", dir, "artifact directory")->required();

  auto* tal = app.add_subcommand("train-align", "train the text encoder against frozen pose latents");
  tal->add_option("--config", config_path, "config JSON");
  tal->add_option("--dir", dir, "artifact directory")->required();

  auto* tdi = app.add_subcommand("train-diffusion", "train the conditional denoiser");
  tdi->add_option("--config", config_path, "config JSON");
  tdi->add_option("--dir", dir, "artifact directory")->required();

  RefineArgs ra;
  auto* ref = app.add_subcommand("refine", "reverse-sample refined poses for a corpus");
  ref->add_option("--config", ra.config, "config JSON");
  ref->add_option("--data", ra.data, "corpus NDJSON")->required();
  ref->add_option("--ckpt-dir", ra.ckpt_dir, "checkpoint directory")->required();
  ref->add_option("--mask", ra.mask, "condition mask (all, image, keypoints, text, no-image, no-keypoints, no-text)");
  ref->add_option("--out", ra.out, "refined poses NDJSON")->required();
  ref->add_option("--traj", ra.traj, "trajectory NDJSON dump");
  ref->add_option("--seed", ra.seed, "sampling seed (default: config seed)");
  ref->add_flag("--allow-mixed", ra.allow_mixed, "accept checkpoints from other config hashes");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score poses against ground truth");
  ev->add_option("--config", ea.config, "config JSON");
  ev->add_option("--data", ea.data, "corpus NDJSON")->required();
  ev->add_option("--poses", ea.poses, "poses NDJSON (from refine)");
  ev->add_option("--ckpt-dir", ea.ckpt_dir, "score the regressor's initial predictions");
  ev->add_flag("--allow-mixed", ea.allow_mixed, "accept checkpoints from other config hashes");

  auto* abl = app.add_subcommand("ablate", "run the condition-mask ablation table");
  abl->add_option("--config", config_path, "config JSON");
  abl->add_option("--dir", dir, "artifact directory")->required();
  abl->add_flag("--allow-mixed", allow_mixed, "accept checkpoints from other config hashes");

  auto* all = app.add_subcommand("run-all", "gen-data, all training stages, and the ablation");
  all->add_option("--config", config_path, "config JSON");
  all->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads > 0) vlfa::set_worker_count(threads);
    if (gen->parsed()) {
      vlfa::RunConfig cfg = load_config_or_default(config_path);
      std::filesystem::create_directories(out_dir);
      vlfa::stage_gen_data(cfg, out_dir);
    } else if (treg->parsed()) {
      vlfa::stage_train_regressor(load_config_or_default(config_path), dir);
    } else if (tvq->parsed()) {
      vlfa::stage_train_vqvae(load_config_or_default(config_path), dir);
    } else if (tal->parsed()) {
      vlfa::stage_train_align(load_config_or_default(config_path), dir);
    } else if (tdi->parsed()) {
      vlfa::stage_train_diffusion(load_config_or_default(config_path), dir);
    } else if (ref->parsed()) {
      ra.seed_set = ref->count("--seed") > 0;
      return do_refine(ra);
    } else if (ev->parsed()) {
      return do_eval(ea);
    } else if (abl->parsed()) {
      vlfa::stage_ablate(load_config_or_default(config_path), dir, allow_mixed);
    } else if (all->parsed()) {
      vlfa::run_all(load_config_or_default(config_path), out_dir);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
