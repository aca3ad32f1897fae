#pragma once

#include "vlfa/checkpoint.hpp"
#include "vlfa/config.hpp"
#include "vlfa/nn.hpp"
#include "vlfa/scene.hpp"

namespace vlfa {

inline constexpr int kFeatureDim = 64;
inline constexpr int kRegressorOut = kThetaDim + kBetaDim + 3;  // rotations, shape, (du, dv, log z)

struct RegressorNet {
  Mlp mlp;  // 64 -> 256 -> 256 -> 157
};

RegressorNet make_regressor(RngBase& rng);

// Camera-space translation from the box-relative head: the root is placed on
// the ray through (bbox centre + du*w, bbox centre + dv*h) at depth exp(lz).
// lz is clamped to [-2, 3] to keep the depth finite and in front of the
// camera.
void trans_from_head(const float* head3, const float* bbox, const Camera& cam, float* trans_out);
Tensor trans_graph(const Tensor& head3, const float* bbox, const Camera& cam);

// One forward pass to full parameters. Degenerate rotation blocks are nudged
// toward identity once; if that does not fix them, DegeneracyError.
PoseParams predict(const RegressorNet& net, const SceneRecord& scene);

// Per-sample training objective: a parameter term on [beta, theta], a 3-D
// joint term, and reprojection against the noiseless ground-truth
// projections. *reproj_masked reports that the predicted joints went behind
// the camera and the reprojection term was dropped.
Tensor regressor_loss(const Tensor& theta, const Tensor& beta, const Tensor& trans,
                      const SceneRecord& scene, const BodyTemplate& tmpl,
                      const RegressorConfig& cfg, bool* reproj_masked);

struct RegressorTrainReport {
  std::vector<float> epoch_loss;
  long reproj_masked = 0;
  long degenerate_skipped = 0;
};

RegressorNet train_regressor(const std::vector<SceneRecord>& corpus, const BodyTemplate& tmpl,
                             const RegressorConfig& cfg, RngBase& rng,
                             RegressorTrainReport* report = nullptr);

Checkpoint regressor_checkpoint(const RegressorNet& net);
RegressorNet regressor_from_checkpoint(const Checkpoint& ck);

}  // namespace vlfa
