#include "vlfa/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace vlfa {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string join(const std::string& dir, const char* file) {
  return (fs::path(dir) / file).string();
}

// Artifacts are written under a .partial suffix and renamed once the stage
// finishes, so an interrupted run leaves only clearly marked partial files.
void commit_partial(const std::string& final_path) {
  fs::rename(final_path + ".partial", final_path);
}

std::string corpus_hash(const std::string& dir) {
  return hex64(fnv1a64_file(join(dir, kTrainCorpusFile)));
}

void stamp_and_save(Checkpoint& ck, const RunConfig& cfg, const std::string& dir,
                    const char* file) {
  ck.meta["config_hash"] = cfg.hash();
  ck.meta["seed"] = cfg.seed;
  ck.meta["corpus_hash"] = corpus_hash(dir);
  std::string path = join(dir, file);
  ck.save(path + ".partial");
  commit_partial(path);
}

std::vector<SceneRecord> load_stage_corpus(const std::string& dir, const char* file) {
  std::string path = join(dir, file);
  if (!fs::exists(path)) {
    throw ConfigError(std::string("missing corpus ") + path + "; run gen-data first");
  }
  return load_corpus(path);
}

NoiseConfig noise_from(const DataConfig& d) {
  NoiseConfig n;
  n.sigma_px = d.sigma_px;
  n.p_occ = d.p_occ;
  return n;
}

GuidanceContext guidance_context(const PoseVqvae& vq, const TextEncoder& text,
                                 const RunConfig& cfg) {
  GuidanceContext ctx;
  ctx.vqvae = &vq;
  ctx.text = &text;
  ctx.tmpl = &BodyTemplate::canonical();
  ctx.sigma = cfg.diffusion.sigma;
  ctx.cosine_squared = cfg.align.cosine_squared;
  return ctx;
}

}  // namespace

Camera camera_from(const DataConfig& d) {
  Camera cam;
  cam.focal = d.focal;
  cam.image_size[0] = d.image_size[0];
  cam.image_size[1] = d.image_size[1];
  cam.principal[0] = 0.5f * static_cast<float>(d.image_size[0]);
  cam.principal[1] = 0.5f * static_cast<float>(d.image_size[1]);
  return cam;
}

Checkpoint load_artifact(const std::string& dir, const char* file, const char* module,
                         const RunConfig& cfg, bool allow_mixed) {
  std::string path = join(dir, file);
  if (!fs::exists(path)) {
    throw ConfigError("missing artifact " + path);
  }
  Checkpoint ck = Checkpoint::load(path);
  if (ck.module != module) {
    throw IntegrityError(path + " holds module \"" + ck.module + "\", expected \"" + module + "\"");
  }
  if (!allow_mixed) {
    std::string have = ck.meta.value("config_hash", "");
    std::string want = cfg.hash();
    if (have != want) {
      throw ConfigError(path + " was built under config hash " + have + ", current config is " +
                        want + "; pass --allow-mixed to override");
    }
  }
  return ck;
}

double stage_gen_data(const RunConfig& cfg, const std::string& dir) {
  auto t0 = Clock::now();
  Camera cam = camera_from(cfg.data);
  NoiseConfig noise = noise_from(cfg.data);
  const BodyTemplate& tmpl = BodyTemplate::canonical();
  Rng root(cfg.seed);

  auto train = gen_corpus(root.derive("data-train").next_u64(), cfg.data.n_train, cam, tmpl, noise);
  auto eval = gen_corpus(root.derive("data-eval").next_u64(), cfg.data.n_eval, cam, tmpl, noise);

  std::string train_path = join(dir, kTrainCorpusFile);
  std::string eval_path = join(dir, kEvalCorpusFile);
  save_corpus(train_path + ".partial", train);
  save_corpus(eval_path + ".partial", eval);
  commit_partial(train_path);
  commit_partial(eval_path);

  double secs = seconds_since(t0);
  std::fprintf(stderr, "[gen-data] %d train + %d eval scenes (%.1fs)\n", cfg.data.n_train,
               cfg.data.n_eval, secs);
  return secs;
}

double stage_train_regressor(const RunConfig& cfg, const std::string& dir) {
  auto t0 = Clock::now();
  auto corpus = load_stage_corpus(dir, kTrainCorpusFile);
  Rng rng = Rng(cfg.seed).derive("stage-regressor");
  RegressorTrainReport report;
  RegressorNet net = train_regressor(corpus, BodyTemplate::canonical(), cfg.regressor, rng, &report);

  Checkpoint ck = regressor_checkpoint(net);
  ck.meta["final_loss"] = report.epoch_loss.empty() ? 0.0f : report.epoch_loss.back();
  stamp_and_save(ck, cfg, dir, kRegressorFile);

  double secs = seconds_since(t0);
  std::fprintf(stderr, "[train-regressor] %d epochs, final loss %.4f (%.1fs)\n",
               cfg.regressor.epochs, report.epoch_loss.empty() ? 0.0f : report.epoch_loss.back(),
               secs);
  return secs;
}

double stage_train_vqvae(const RunConfig& cfg, const std::string& dir) {
  auto t0 = Clock::now();
  auto corpus = load_stage_corpus(dir, kTrainCorpusFile);
  Rng rng = Rng(cfg.seed).derive("stage-vqvae");
  VqvaeTrainReport report;
  PoseVqvae model = train_vqvae(corpus, BodyTemplate::canonical(), cfg.vqvae, rng, &report);

  Checkpoint ck = vqvae_checkpoint(model);
  ck.meta["perplexity"] = report.perplexity;
  ck.meta["recon_mpjpe_quantized_mm"] = report.recon_mpjpe_quantized_mm;
  stamp_and_save(ck, cfg, dir, kVqvaeFile);

  double secs = seconds_since(t0);
  std::fprintf(stderr,
               "[train-vqvae] perplexity %.1f, quantized recon %.1f mm, %d codes (%.1fs)\n",
               report.perplexity, report.recon_mpjpe_quantized_mm, report.used_codes, secs);
  return secs;
}

double stage_train_align(const RunConfig& cfg, const std::string& dir) {
  auto t0 = Clock::now();
  auto corpus = load_stage_corpus(dir, kTrainCorpusFile);
  PoseVqvae vq = vqvae_from_checkpoint(load_artifact(dir, kVqvaeFile, "vqvae", cfg, false));
  freeze_vqvae(vq);

  Rng rng = Rng(cfg.seed).derive("stage-align");
  AlignTrainReport report;
  TextEncoder enc = train_alignment(corpus, vq, cfg.align, rng, &report);

  Checkpoint ck = text_encoder_checkpoint(enc);
  ck.meta["retrieval_train"] = report.retrieval;
  stamp_and_save(ck, cfg, dir, kTextFile);

  double secs = seconds_since(t0);
  std::fprintf(stderr, "[train-align] train retrieval %.1f%% (%.1fs)\n", 100.0f * report.retrieval,
               secs);
  return secs;
}

double stage_train_diffusion(const RunConfig& cfg, const std::string& dir) {
  auto t0 = Clock::now();
  auto corpus = load_stage_corpus(dir, kTrainCorpusFile);
  RegressorNet reg =
      regressor_from_checkpoint(load_artifact(dir, kRegressorFile, "regressor", cfg, false));
  PoseVqvae vq = vqvae_from_checkpoint(load_artifact(dir, kVqvaeFile, "vqvae", cfg, false));
  freeze_vqvae(vq);
  TextEncoder text =
      text_encoder_from_checkpoint(load_artifact(dir, kTextFile, "text_align", cfg, false));

  GuidanceContext ctx = guidance_context(vq, text, cfg);
  Rng rng = Rng(cfg.seed).derive("stage-diffusion");
  DiffusionTrainReport report;
  DenoiserNet net = train_diffusion(corpus, reg, ctx, cfg.diffusion, rng, &report);

  Checkpoint ck = denoiser_checkpoint(net);
  ck.meta["final_loss"] = report.epoch_loss.empty() ? 0.0f : report.epoch_loss.back();
  stamp_and_save(ck, cfg, dir, kDenoiserFile);

  double secs = seconds_since(t0);
  std::fprintf(stderr, "[train-diffusion] %d epochs, final loss %.4f (%.1fs)\n",
               cfg.diffusion.epochs, report.epoch_loss.empty() ? 0.0f : report.epoch_loss.back(),
               secs);
  return secs;
}

double stage_ablate(const RunConfig& cfg, const std::string& dir, bool allow_mixed) {
  auto t0 = Clock::now();

  std::vector<std::string> missing;
  for (const char* f : {kEvalCorpusFile, kRegressorFile, kVqvaeFile, kTextFile, kDenoiserFile}) {
    if (!fs::exists(join(dir, f))) missing.push_back(join(dir, f));
  }
  if (!missing.empty()) {
    std::string msg = "missing artifacts:";
    for (const std::string& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }

  Checkpoint reg_ck = load_artifact(dir, kRegressorFile, "regressor", cfg, true);
  Checkpoint vq_ck = load_artifact(dir, kVqvaeFile, "vqvae", cfg, true);
  Checkpoint text_ck = load_artifact(dir, kTextFile, "text_align", cfg, true);
  Checkpoint den_ck = load_artifact(dir, kDenoiserFile, "diffusion", cfg, true);
  if (!allow_mixed) {
    std::string want = cfg.hash();
    std::string mixed;
    for (const auto* ck : {&reg_ck, &vq_ck, &text_ck, &den_ck}) {
      std::string have = ck->meta.value("config_hash", "");
      if (have != want) mixed += " " + ck->module + "(" + have + ")";
    }
    if (!mixed.empty()) {
      throw ConfigError("checkpoints built under other config hashes than " + want + ":" + mixed +
                        "; pass --allow-mixed to override");
    }
  }

  auto corpus = load_stage_corpus(dir, kEvalCorpusFile);
  RegressorNet reg = regressor_from_checkpoint(reg_ck);
  PoseVqvae vq = vqvae_from_checkpoint(vq_ck);
  freeze_vqvae(vq);
  TextEncoder text = text_encoder_from_checkpoint(text_ck);
  DenoiserNet net = denoiser_from_checkpoint(den_ck);

  GuidanceContext ctx = guidance_context(vq, text, cfg);
  AblationReport rep = run_ablation(corpus, reg, ctx, net, cfg);

  std::string csv_path = join(dir, kAblationCsvFile);
  std::string json_path = join(dir, kAblationJsonFile);
  write_ablation_csv(rep, csv_path + ".partial");
  {
    std::ofstream out(json_path + ".partial", std::ios::binary);
    out << ablation_json(rep, cfg).dump(2) << "\n";
    if (!out.good()) throw FormatError("failed writing " + json_path);
  }
  commit_partial(csv_path);
  commit_partial(json_path);

  double secs = seconds_since(t0);
  for (const AblationRow& r : rep.table) {
    std::fprintf(stderr, "[ablate] %-12s mpjpe %7.1f mm, pa %7.1f mm, flags %ld\n",
                 r.label.c_str(), r.mpjpe_mm, r.pa_mpjpe_mm, r.flags);
  }
  std::fprintf(stderr, "[ablate] %zu scenes x %zu seeds (%.1fs)\n", corpus.size(),
               cfg.ablate.seeds.size(), secs);
  return secs;
}

void run_all(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  fs::create_directories(dir);

  nlohmann::json stages = nlohmann::json::array();
  auto record = [&](const char* name, double secs) {
    stages.push_back({{"name", name}, {"seconds", secs}});
  };

  record("gen-data", stage_gen_data(cfg, dir));
  record("train-regressor", stage_train_regressor(cfg, dir));
  record("train-vqvae", stage_train_vqvae(cfg, dir));
  record("train-align", stage_train_align(cfg, dir));
  record("train-diffusion", stage_train_diffusion(cfg, dir));
  record("ablate", stage_ablate(cfg, dir, false));

  nlohmann::json manifest = {
      {"config", cfg.to_json()},
      {"config_hash", cfg.hash()},
      {"corpus_hash", corpus_hash(dir)},
      {"stages", stages},
      {"artifacts",
       {kTrainCorpusFile, kEvalCorpusFile, kRegressorFile, kVqvaeFile, kTextFile, kDenoiserFile,
        kAblationCsvFile, kAblationJsonFile}},
  };
  std::string manifest_path = join(dir, kManifestFile);
  {
    std::ofstream out(manifest_path + ".partial", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out.good()) throw FormatError("failed writing " + manifest_path);
  }
  commit_partial(manifest_path);
}

void save_poses(const std::string& path, const std::vector<PoseRecord>& poses) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  for (const PoseRecord& p : poses) {
    nlohmann::json j = {{"id", p.id},
                        {"theta", p.pose.theta},
                        {"beta", p.pose.beta},
                        {"trans", p.pose.trans},
                        {"diverged", p.diverged},
                        {"keyp_zeroed", p.keyp_zeroed}};
    out << j.dump() << "\n";
  }
  if (!out.good()) throw FormatError("failed writing " + path);
}

std::vector<PoseRecord> load_poses(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<PoseRecord> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      PoseRecord p;
      p.id = j.at("id").get<int>();
      auto theta = j.at("theta").get<std::vector<float>>();
      auto beta = j.at("beta").get<std::vector<float>>();
      auto trans = j.at("trans").get<std::vector<float>>();
      if (theta.size() != kThetaDim || beta.size() != kBetaDim || trans.size() != kTransDim) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": wrong parameter arity");
      }
      std::copy(theta.begin(), theta.end(), p.pose.theta.begin());
      std::copy(beta.begin(), beta.end(), p.pose.beta.begin());
      std::copy(trans.begin(), trans.end(), p.pose.trans.begin());
      p.diverged = j.value("diverged", false);
      p.keyp_zeroed = j.value("keyp_zeroed", false);
      poses.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return poses;
}

}  // namespace vlfa
