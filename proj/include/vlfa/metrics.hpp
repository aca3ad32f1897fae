#pragma once

#include "vlfa/body_model.hpp"

namespace vlfa {

// Mean per-joint position error in millimetres, no alignment.
double mpjpe_mm(const JointSet& pred, const JointSet& gt);

// Error after the optimal similarity alignment (rotation, translation and,
// by default, scale) of pred onto gt. For a rank-deficient joint cloud the
// alignment falls back to translation only and *degenerate is set. The
// recovered rotation is always a proper rotation (determinant +1).
double pa_mpjpe_mm(const JointSet& pred, const JointSet& gt, bool with_scale = true,
                   bool* degenerate = nullptr);

struct PoseMetrics {
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  bool pa_degenerate = false;
};

PoseMetrics pose_metrics(const PoseParams& pred, const PoseParams& gt, const BodyTemplate& tmpl,
                         bool pa_with_scale = true);

}  // namespace vlfa
