#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

namespace vlfa {

// Pipeline configuration. Every field has a desk-scale default; a config file
// may specify any subset, and unknown keys anywhere are a ConfigError.
struct DataConfig {
  int n_train = 4000;
  int n_eval = 2000;
  float sigma_px = 3.0f;
  float p_occ = 0.15f;
  float focal = 500.0f;
  int image_size[2] = {512, 512};
};

struct RegressorConfig {
  int epochs = 50;
  int batch = 64;
  float lr = 1e-3f;
  float lambda_smpl = 1.0f;
  float lambda_joint = 5.0f;
  float lambda_reproj = 0.01f;
};

struct VqvaeConfig {
  int epochs = 400;
  int batch = 128;
  float lr = 1e-3f;
  float alpha = 0.25f;
  float ema_decay = 0.99f;
  float reseed_below_perplexity = 8.0f;
};

struct AlignConfig {
  int epochs = 80;
  int batch = 32;
  float lr = 1e-3f;
  float tau = 0.07f;
  bool symmetric = false;
  bool cosine_squared = false;
};

struct DiffusionTrainConfig {
  int timesteps = 100;
  float beta_min = 1e-4f;
  float beta_max = 0.02f;
  float sigma = 0.5f;
  int epochs = 30;
  int batch = 64;
  float lr = 1e-3f;
};

struct AblateConfig {
  std::vector<int> seeds = {0, 1, 2};
  std::vector<std::string> masks = {"all", "image", "keypoints", "text", "no-keypoints", "no-text"};
};

struct MetricsConfig {
  bool pa_with_scale = true;
};

struct RunConfig {
  uint64_t seed = 0;
  int threads = 0;  // 0 = use VLFA_THREADS or the machine's core count
  DataConfig data;
  RegressorConfig regressor;
  VqvaeConfig vqvae;
  AlignConfig align;
  DiffusionTrainConfig diffusion;
  AblateConfig ablate;
  MetricsConfig metrics;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
  // Hash of the fully resolved config; checkpoints record it so mixing
  // artifacts from different configurations is caught at load time.
  std::string hash() const;
};

// The condition masks understood by the refinement stage.
bool valid_mask_name(const std::string& name);

}  // namespace vlfa
