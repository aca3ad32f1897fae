#pragma once

#include <array>
#include <cstdint>

#include "vlfa/tensor.hpp"

namespace vlfa {

inline constexpr int kNumJoints = 24;
inline constexpr int kNumVertices = 48;
inline constexpr int kThetaDim = 144;  // 24 joints x 6-number rotation blocks
inline constexpr int kBetaDim = 10;
inline constexpr int kTransDim = 3;

// Full articulated-body parameterization: per-joint rotations in the
// two-column 6-number form, shape coefficients, and root translation in
// camera coordinates (y up, camera looking down +z from the origin).
struct PoseParams {
  std::array<float, kThetaDim> theta{};
  std::array<float, kBetaDim> beta{};
  std::array<float, kTransDim> trans{};

  static PoseParams rest();
};

// Joint positions as a flat [24 x 3] block.
struct JointSet {
  std::array<float, kNumJoints * 3> xyz{};

  float x(int j) const { return xyz[3 * j + 0]; }
  float y(int j) const { return xyz[3 * j + 1]; }
  float z(int j) const { return xyz[3 * j + 2]; }
  float* joint(int j) { return &xyz[3 * j]; }
  const float* joint(int j) const { return &xyz[3 * j]; }
};

// Fixed articulated template: a 24-joint tree, per-joint rest offsets from
// the parent, linear shape directions, 48 rigidly skinned surface points
// (one pair per joint, offset +-delta along the joint's local x) and the
// averaging regressor that maps those points back onto joints.
struct BodyTemplate {
  std::array<int, kNumJoints> parent;
  float rest_offsets[kNumJoints][3];
  float shape_dirs[kNumJoints][3][kBetaDim];
  float vertices_local[kNumVertices][3];  // offsets in the owning joint's frame
  float skin_weights[kNumVertices][kNumJoints];
  float joint_regressor[kNumJoints][kNumVertices];

  static const BodyTemplate& canonical();
  // Joint that owns vertex v (rigid skinning: the single nonzero weight).
  int vertex_owner(int v) const { return v / 2; }
};

// Names for error messages and the description module.
const char* joint_name(int j);

// Index of the first degenerate 6-number block in theta (near-zero column or
// near-parallel columns), or -1 when all blocks are usable. A larger eps asks
// for a safety margin rather than the exact failure threshold.
int degenerate_theta_block(const float* theta, float eps = 1e-8f);

// Two-column rotation recovery: Gram-Schmidt on the two stored columns, the
// third column is their cross product. Throws DegeneracyError on near-zero
// or near-parallel inputs. r6 is [6], result is [3, 3].
Tensor rot6d_to_matrix(const Tensor& r6);

// Plain-value variant (no graph), used by samplers and the describer.
std::array<float, 9> rot6d_value(const float* six);

// Fills out[0..5] with the two leading columns of a rotation matrix given
// row-major m[9].
void matrix_to_rot6d(const float* m, float* out);

struct FkOut {
  Tensor joints;                    // [24, 3]
  std::vector<Tensor> world_rot;    // 24 entries of [3, 3]
};

// Forward kinematics through the tree: shaped offsets rotated by the
// accumulated parent rotation, root pinned at trans.
FkOut forward_kinematics(const Tensor& theta, const Tensor& beta, const Tensor& trans,
                         const BodyTemplate& tmpl);

// Surface points from an FK result: v = p_owner + R_owner * local_offset.
Tensor skin_vertices(const FkOut& fk, const BodyTemplate& tmpl);  // [48, 3]

// J = regressor * vertices, [24, 3].
Tensor joints_from_vertices(const Tensor& vertices, const BodyTemplate& tmpl);

// Convenience value-only paths.
JointSet fk_joints(const PoseParams& p, const BodyTemplate& tmpl);
JointSet joints_of(const Tensor& joints_tensor);

}  // namespace vlfa
