#pragma once

#include <functional>

#include "vlfa/camera.hpp"
#include "vlfa/checkpoint.hpp"
#include "vlfa/config.hpp"
#include "vlfa/regressor.hpp"
#include "vlfa/scene.hpp"
#include "vlfa/text_align.hpp"

namespace vlfa {

inline constexpr int kStateDim = kThetaDim + 3;
inline constexpr int kCondDim = kFeatureDim + 3 * kNumJoints + kThetaDim;
inline constexpr int kTimeEmbedDim = 32;
// Residual units: rotations are divided by sigma, translation deltas are
// multiplied by this factor before the division so both segments sit near
// unit scale under typical initial-prediction errors.
inline constexpr float kTransResidualScale = 0.5f;
// Keypoint gradients are pixel-scale quantities; they enter the condition
// vector scaled down to keep the network inputs near unit magnitude.
inline constexpr float kKeypGradScale = 1e-4f;
// Both gradient segments are clamped entrywise after scaling; states decoded
// near the camera plane otherwise produce unbounded entries.
inline constexpr float kCondClamp = 10.0f;

struct NoiseSchedule {
  std::vector<float> betas;
  std::vector<float> alphas;      // 1 - beta_t
  std::vector<float> alpha_bars;  // cumulative product of alphas
  int timesteps() const { return static_cast<int>(betas.size()); }
  static NoiseSchedule linear(int timesteps, float beta_min, float beta_max);
};

// Which condition segments stay live; masked segments are zeroed, which is
// all the retraining-free ablation needs.
struct ConditionMask {
  bool image = true;
  bool keypoints = true;
  bool text = true;
  static ConditionMask from_name(const std::string& name);
};

struct Condition {
  std::array<float, kCondDim> c{};
  // The keypoint segment was zeroed because the decoded pose could not be
  // projected (behind the camera or a degenerate rotation block).
  bool keyp_zeroed = false;
};

struct DenoiserNet {
  Mlp mlp;  // (147 state + 280 condition + 32 time) -> 512 -> 512 -> 147
};

DenoiserNet make_denoiser(RngBase& rng);

std::array<float, kTimeEmbedDim> timestep_embedding(int t);

// Residual coordinates around an initial estimate:
//   r = [(theta - theta0) / sigma, kTransResidualScale * (trans - trans0) / sigma]
// decode inverts this and carries beta over from the init bitwise.
void encode_residual(const PoseParams& x, const PoseParams& init, float sigma, float* r147);
PoseParams decode_residual(const float* r147, const PoseParams& init, float sigma);

// Everything the condition builder needs besides the scene itself. The
// encoders must be frozen; sigma and cosine_squared must match between
// training and refinement.
struct GuidanceContext {
  const PoseVqvae* vqvae = nullptr;
  const TextEncoder* text = nullptr;
  const BodyTemplate* tmpl = nullptr;
  float sigma = 0.5f;
  bool cosine_squared = false;
};

// c = [image features | keypoint-objective gradient | text-similarity
// gradient], built at the decoded state, with masked segments zeroed.
// z_text64 may be null when the text segment is masked.
Condition build_condition(const float* r147, const PoseParams& init, const SceneRecord& scene,
                          const GuidanceContext& ctx, const float* z_text64,
                          const ConditionMask& mask);

// x <- (1 - beta/2) x + beta * score + sqrt(beta) * z with the score taken
// as -eps / sqrt(1 - alpha_bar_t); z is pre-drawn noise, null at t = 1.
void reverse_step(float* x, const float* eps, int dim, const NoiseSchedule& sched, int t,
                  const float* z);

// Forward noising r_t = sqrt(abar_t) r0 + sqrt(1 - abar_t) eps.
void forward_noise(const float* r0, const float* eps, int dim, const NoiseSchedule& sched, int t,
                   float* rt);

// Full reverse chain from x_T ~ N(0, I) for an arbitrary epsilon model;
// the harness for schedule-level checks without the pose machinery.
std::vector<float> reverse_sample(const NoiseSchedule& sched, int dim,
                                  const std::function<void(const float* x, int t, float* eps)>& eps_fn,
                                  RngBase& rng);

struct DiffusionTrainReport {
  std::vector<float> epoch_loss;
  long keyp_zeroed = 0;
};

DenoiserNet train_diffusion(const std::vector<SceneRecord>& corpus, const RegressorNet& reg,
                            const GuidanceContext& ctx, const DiffusionTrainConfig& cfg,
                            RngBase& rng, DiffusionTrainReport* report = nullptr);

struct RefineOptions {
  ConditionMask mask;
  bool record_trajectory = false;
};

struct RefineResult {
  PoseParams pose;
  bool keyp_zeroed = false;  // some step lost its keypoint gradient
  bool diverged = false;     // residual blew past the guard; pose is best-so-far
  bool reproj_valid = false;
  float reproj = 0.0f;  // confidence-weighted reprojection objective at the returned pose
  std::vector<std::array<float, kStateDim>> trajectory;
};

// Reverse sampling for one scene around the given initial estimate. Noise
// comes from a stream derived from (seed, scene id), so results match
// refine_batch bit for bit.
RefineResult refine(const SceneRecord& scene, const PoseParams& init, const GuidanceContext& ctx,
                    const DenoiserNet& net, const NoiseSchedule& sched, const RefineOptions& opt,
                    uint64_t seed);

// Lockstep refinement of many scenes; per-step denoiser evaluations are
// batched. Identical results to calling refine on each scene.
void refine_batch(const std::vector<const SceneRecord*>& scenes,
                  const std::vector<PoseParams>& inits, const GuidanceContext& ctx,
                  const DenoiserNet& net, const NoiseSchedule& sched, const RefineOptions& opt,
                  uint64_t seed, std::vector<RefineResult>* out);

Checkpoint denoiser_checkpoint(const DenoiserNet& net);
DenoiserNet denoiser_from_checkpoint(const Checkpoint& ck);

}  // namespace vlfa
