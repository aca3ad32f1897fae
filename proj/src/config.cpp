#include "vlfa/config.hpp"

#include <fstream>
#include <set>

#include "vlfa/common.hpp"

namespace vlfa {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + section);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

bool valid_mask_name(const std::string& name) {
  static const std::set<std::string> names = {"all",      "image",        "keypoints", "text",
                                              "no-image", "no-keypoints", "no-text"};
  return names.count(name) > 0;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, "config",
             {"seed", "threads", "data", "regressor", "vqvae", "align", "diffusion", "ablate",
              "metrics"});
  read_field(j, "seed", c.seed);
  read_field(j, "threads", c.threads);

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"n_train", "n_eval", "sigma_px", "p_occ", "focal", "image_size"});
    read_field(d, "n_train", c.data.n_train);
    read_field(d, "n_eval", c.data.n_eval);
    read_field(d, "sigma_px", c.data.sigma_px);
    read_field(d, "p_occ", c.data.p_occ);
    read_field(d, "focal", c.data.focal);
    if (d.contains("image_size")) {
      auto v = d.at("image_size").get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError("data.image_size must be [width, height]");
      c.data.image_size[0] = v[0];
      c.data.image_size[1] = v[1];
    }
  }
  if (j.contains("regressor")) {
    const json& d = j.at("regressor");
    check_keys(d, "regressor",
               {"epochs", "batch", "lr", "lambda_smpl", "lambda_joint", "lambda_reproj"});
    read_field(d, "epochs", c.regressor.epochs);
    read_field(d, "batch", c.regressor.batch);
    read_field(d, "lr", c.regressor.lr);
    read_field(d, "lambda_smpl", c.regressor.lambda_smpl);
    read_field(d, "lambda_joint", c.regressor.lambda_joint);
    read_field(d, "lambda_reproj", c.regressor.lambda_reproj);
  }
  if (j.contains("vqvae")) {
    const json& d = j.at("vqvae");
    check_keys(d, "vqvae",
               {"epochs", "batch", "lr", "alpha", "ema_decay", "reseed_below_perplexity"});
    read_field(d, "epochs", c.vqvae.epochs);
    read_field(d, "batch", c.vqvae.batch);
    read_field(d, "lr", c.vqvae.lr);
    read_field(d, "alpha", c.vqvae.alpha);
    read_field(d, "ema_decay", c.vqvae.ema_decay);
    read_field(d, "reseed_below_perplexity", c.vqvae.reseed_below_perplexity);
  }
  if (j.contains("align")) {
    const json& d = j.at("align");
    check_keys(d, "align", {"epochs", "batch", "lr", "tau", "symmetric", "cosine_squared"});
    read_field(d, "epochs", c.align.epochs);
    read_field(d, "batch", c.align.batch);
    read_field(d, "lr", c.align.lr);
    read_field(d, "tau", c.align.tau);
    read_field(d, "symmetric", c.align.symmetric);
    read_field(d, "cosine_squared", c.align.cosine_squared);
  }
  if (j.contains("diffusion")) {
    const json& d = j.at("diffusion");
    check_keys(d, "diffusion",
               {"timesteps", "beta_min", "beta_max", "sigma", "epochs", "batch", "lr"});
    read_field(d, "timesteps", c.diffusion.timesteps);
    read_field(d, "beta_min", c.diffusion.beta_min);
    read_field(d, "beta_max", c.diffusion.beta_max);
    read_field(d, "sigma", c.diffusion.sigma);
    read_field(d, "epochs", c.diffusion.epochs);
    read_field(d, "batch", c.diffusion.batch);
    read_field(d, "lr", c.diffusion.lr);
  }
  if (j.contains("ablate")) {
    const json& d = j.at("ablate");
    check_keys(d, "ablate", {"seeds", "masks"});
    read_field(d, "seeds", c.ablate.seeds);
    read_field(d, "masks", c.ablate.masks);
  }
  if (j.contains("metrics")) {
    const json& d = j.at("metrics");
    check_keys(d, "metrics", {"pa_with_scale"});
    read_field(d, "pa_with_scale", c.metrics.pa_with_scale);
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["data"] = {{"n_train", data.n_train},   {"n_eval", data.n_eval},
               {"sigma_px", data.sigma_px}, {"p_occ", data.p_occ},
               {"focal", data.focal},       {"image_size", {data.image_size[0], data.image_size[1]}}};
  j["regressor"] = {{"epochs", regressor.epochs},
                    {"batch", regressor.batch},
                    {"lr", regressor.lr},
                    {"lambda_smpl", regressor.lambda_smpl},
                    {"lambda_joint", regressor.lambda_joint},
                    {"lambda_reproj", regressor.lambda_reproj}};
  j["vqvae"] = {{"epochs", vqvae.epochs},
                {"batch", vqvae.batch},
                {"lr", vqvae.lr},
                {"alpha", vqvae.alpha},
                {"ema_decay", vqvae.ema_decay},
                {"reseed_below_perplexity", vqvae.reseed_below_perplexity}};
  j["align"] = {{"epochs", align.epochs},
                {"batch", align.batch},
                {"lr", align.lr},
                {"tau", align.tau},
                {"symmetric", align.symmetric},
                {"cosine_squared", align.cosine_squared}};
  j["diffusion"] = {{"timesteps", diffusion.timesteps}, {"beta_min", diffusion.beta_min},
                    {"beta_max", diffusion.beta_max},   {"sigma", diffusion.sigma},
                    {"epochs", diffusion.epochs},       {"batch", diffusion.batch},
                    {"lr", diffusion.lr}};
  j["ablate"] = {{"seeds", ablate.seeds}, {"masks", ablate.masks}};
  j["metrics"] = {{"pa_with_scale", metrics.pa_with_scale}};
  return j;
}

void RunConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0)) throw ConfigError(std::string(what) + " must be positive");
  };
  if (data.n_train < 0 || data.n_eval < 0) throw ConfigError("data sizes must be non-negative");
  if (data.sigma_px < 0) throw ConfigError("data.sigma_px must be non-negative");
  if (data.p_occ < 0 || data.p_occ > 1) throw ConfigError("data.p_occ must be in [0, 1]");
  positive(data.focal, "data.focal");
  positive(data.image_size[0], "data.image_size[0]");
  positive(data.image_size[1], "data.image_size[1]");
  positive(regressor.epochs, "regressor.epochs");
  positive(regressor.batch, "regressor.batch");
  positive(regressor.lr, "regressor.lr");
  if (regressor.lambda_smpl < 0 || regressor.lambda_joint < 0 || regressor.lambda_reproj < 0) {
    throw ConfigError("regressor loss weights must be non-negative");
  }
  positive(vqvae.epochs, "vqvae.epochs");
  positive(vqvae.batch, "vqvae.batch");
  positive(vqvae.lr, "vqvae.lr");
  if (vqvae.alpha < 0) throw ConfigError("vqvae.alpha must be non-negative");
  if (vqvae.ema_decay <= 0 || vqvae.ema_decay >= 1) {
    throw ConfigError("vqvae.ema_decay must be in (0, 1)");
  }
  positive(align.epochs, "align.epochs");
  positive(align.batch, "align.batch");
  positive(align.lr, "align.lr");
  positive(align.tau, "align.tau");
  positive(diffusion.timesteps, "diffusion.timesteps");
  positive(diffusion.beta_min, "diffusion.beta_min");
  positive(diffusion.sigma, "diffusion.sigma");
  positive(diffusion.epochs, "diffusion.epochs");
  positive(diffusion.batch, "diffusion.batch");
  positive(diffusion.lr, "diffusion.lr");
  if (diffusion.beta_max < diffusion.beta_min || diffusion.beta_max >= 1.0f) {
    throw ConfigError("diffusion betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  if (ablate.seeds.empty()) throw ConfigError("ablate.seeds must not be empty");
  for (const auto& m : ablate.masks) {
    if (!valid_mask_name(m)) throw ConfigError("unknown condition mask \"" + m + "\"");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

std::string RunConfig::hash() const {
  std::string dump = to_json().dump();
  return hex64(fnv1a64(dump));
}

}  // namespace vlfa
