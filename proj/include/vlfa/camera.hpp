#pragma once

#include <array>

#include "vlfa/body_model.hpp"
#include "vlfa/tensor.hpp"

namespace vlfa {

// Pinhole intrinsics; the camera sits at the origin looking down +z.
struct Camera {
  float focal = 500.0f;
  float principal[2] = {256.0f, 256.0f};
  int image_size[2] = {512, 512};
};

// Observed 2-D joints with per-joint confidence in [0, 1]; confidence zero
// marks an occluded joint.
struct Keypoints2D {
  float uv[kNumJoints][2] = {};
  float confidence[kNumJoints] = {};
};

inline constexpr float kMinDepth = 0.01f;

// u = f*x/z + cx, v = f*y/z + cy for every joint; a joint at or behind the
// minimum depth is a BehindCameraError. Result is [24, 2].
Tensor project_graph(const Camera& cam, const Tensor& joints);

std::array<float, kNumJoints * 2> project(const Camera& cam, const JointSet& joints);

struct KeypointGrad {
  float g[kNumJoints][3] = {};
};

// Gradient of the confidence-weighted reprojection objective
//   sum_j c_j^2 * |proj(P_j) - uv_j|^2
// with respect to the 3-D joints. Rows for zero-confidence joints are zero.
KeypointGrad keypoint_gradient(const Camera& cam, const JointSet& joints, const Keypoints2D& obs);

// Value of the same objective.
float reproj_objective(const Camera& cam, const JointSet& joints, const Keypoints2D& obs);

}  // namespace vlfa
