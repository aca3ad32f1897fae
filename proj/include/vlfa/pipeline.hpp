#pragma once

#include "vlfa/ablation.hpp"

namespace vlfa {

// Artifact names inside a pipeline output directory.
inline constexpr const char* kTrainCorpusFile = "train.ndjson";
inline constexpr const char* kEvalCorpusFile = "eval.ndjson";
inline constexpr const char* kRegressorFile = "regressor.ckpt";
inline constexpr const char* kVqvaeFile = "vqvae.ckpt";
inline constexpr const char* kTextFile = "text.ckpt";
inline constexpr const char* kDenoiserFile = "denoiser.ckpt";
inline constexpr const char* kAblationCsvFile = "ablation.csv";
inline constexpr const char* kAblationJsonFile = "ablation.json";
inline constexpr const char* kManifestFile = "manifest.json";

Camera camera_from(const DataConfig& d);

// Loads a checkpoint and enforces the module name and, unless allow_mixed,
// the recorded config hash.
Checkpoint load_artifact(const std::string& dir, const char* file, const char* module,
                         const RunConfig& cfg, bool allow_mixed);

// Individual pipeline stages. Each reads its inputs from dir, writes its
// outputs into dir under the names above (via a .partial temp that is
// renamed on success), and returns the wall seconds spent.
double stage_gen_data(const RunConfig& cfg, const std::string& dir);
double stage_train_regressor(const RunConfig& cfg, const std::string& dir);
double stage_train_vqvae(const RunConfig& cfg, const std::string& dir);
double stage_train_align(const RunConfig& cfg, const std::string& dir);
double stage_train_diffusion(const RunConfig& cfg, const std::string& dir);
double stage_ablate(const RunConfig& cfg, const std::string& dir, bool allow_mixed);

// All stages in order plus a manifest with per-stage timings.
void run_all(const RunConfig& cfg, const std::string& dir);

// Refined (or otherwise produced) poses as NDJSON, one scene per line.
struct PoseRecord {
  int id = 0;
  PoseParams pose;
  bool diverged = false;
  bool keyp_zeroed = false;
};

void save_poses(const std::string& path, const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> load_poses(const std::string& path);

}  // namespace vlfa
