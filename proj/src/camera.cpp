#include "vlfa/camera.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace vlfa {

namespace {

void require_depth(float z, int j) {
  if (!(z > kMinDepth)) {
    throw BehindCameraError("joint " + std::string(joint_name(j)) + " at depth " +
                            std::to_string(z) + " is behind the camera");
  }
}

}  // namespace

Tensor project_graph(const Camera& cam, const Tensor& joints) {
  if (joints.numel() != kNumJoints * 3) {
    throw DimensionError("project_graph: expected 24x3 joints");
  }
  const Array& v = joints.value();
  for (int j = 0; j < kNumJoints; ++j) require_depth(v[3 * j + 2], j);

  std::vector<Tensor> rows;
  rows.reserve(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) {
    Tensor p = slice(joints, 3 * j, 3);
    Tensor x = slice(p, 0, 1);
    Tensor y = slice(p, 1, 1);
    Tensor z = slice(p, 2, 1);
    Tensor u = shift(scale(div(x, z), cam.focal), cam.principal[0]);
    Tensor vv = shift(scale(div(y, z), cam.focal), cam.principal[1]);
    rows.push_back(concat({u, vv}));
  }
  return reshape(concat(rows), {kNumJoints, 2});
}

std::array<float, kNumJoints * 2> project(const Camera& cam, const JointSet& joints) {
  std::array<float, kNumJoints * 2> out;
  for (int j = 0; j < kNumJoints; ++j) {
    float z = joints.z(j);
    require_depth(z, j);
    out[2 * j + 0] = cam.focal * joints.x(j) / z + cam.principal[0];
    out[2 * j + 1] = cam.focal * joints.y(j) / z + cam.principal[1];
  }
  return out;
}

KeypointGrad keypoint_gradient(const Camera& cam, const JointSet& joints, const Keypoints2D& obs) {
  KeypointGrad out;
  for (int j = 0; j < kNumJoints; ++j) {
    float c = obs.confidence[j];
    if (c < 0.0f || c > 1.0f) {
      throw DomainError("keypoint confidence out of [0, 1] at joint " +
                        std::string(joint_name(j)));
    }
    if (c == 0.0f) continue;
    float z = joints.z(j);
    require_depth(z, j);
    float x = joints.x(j), y = joints.y(j);
    float u = cam.focal * x / z + cam.principal[0];
    float v = cam.focal * y / z + cam.principal[1];
    float ru = u - obs.uv[j][0];
    float rv = v - obs.uv[j][1];
    // Two applications of the chain rule through u = f*x/z + cx:
    //   du/dx = f/z, du/dz = -f*x/z^2, likewise for v with y.
    float w = 2.0f * c * c;
    float fz = cam.focal / z;
    out.g[j][0] = w * ru * fz;
    out.g[j][1] = w * rv * fz;
    out.g[j][2] = w * (-ru * cam.focal * x - rv * cam.focal * y) / (z * z);
  }
  return out;
}

float reproj_objective(const Camera& cam, const JointSet& joints, const Keypoints2D& obs) {
  double acc = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    float c = obs.confidence[j];
    if (c < 0.0f || c > 1.0f) {
      throw DomainError("keypoint confidence out of [0, 1] at joint " +
                        std::string(joint_name(j)));
    }
    if (c == 0.0f) continue;
    float z = joints.z(j);
    require_depth(z, j);
    float u = cam.focal * joints.x(j) / z + cam.principal[0];
    float v = cam.focal * joints.y(j) / z + cam.principal[1];
    float ru = u - obs.uv[j][0];
    float rv = v - obs.uv[j][1];
    acc += static_cast<double>(c) * c * (ru * ru + rv * rv);
  }
  return static_cast<float>(acc);
}

}  // namespace vlfa
