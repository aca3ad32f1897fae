#include "vlfa/body_model.hpp"

#include <cmath>
#include <cstring>

#include "vlfa/rng.hpp"

namespace vlfa {

namespace {

constexpr float kColumnEps = 1e-8f;

const char* kJointNames[kNumJoints] = {
    "pelvis",     "l_hip",      "r_hip",  "spine1",     "l_knee",     "r_knee",
    "spine2",     "l_ankle",    "r_ankle", "spine3",     "l_foot",     "r_foot",
    "neck",       "l_collar",   "r_collar", "head",      "l_shoulder", "r_shoulder",
    "l_elbow",    "r_elbow",    "l_wrist", "r_wrist",    "l_hand",     "r_hand"};

BodyTemplate build_canonical() {
  BodyTemplate t{};
  t.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

  // Rest offsets from the parent joint, metres, y up. The left side carries
  // +x; arms hang down so the rest pose reads as "arms lowered".
  const float off[kNumJoints][3] = {
      {0.00f, 0.00f, 0.00f},    // pelvis
      {0.09f, -0.09f, 0.00f},   // l_hip
      {-0.09f, -0.09f, 0.00f},  // r_hip
      {0.00f, 0.11f, 0.00f},    // spine1
      {0.00f, -0.42f, 0.00f},   // l_knee
      {0.00f, -0.42f, 0.00f},   // r_knee
      {0.00f, 0.13f, 0.00f},    // spine2
      {0.00f, -0.42f, 0.00f},   // l_ankle
      {0.00f, -0.42f, 0.00f},   // r_ankle
      {0.00f, 0.13f, 0.00f},    // spine3
      {0.00f, -0.05f, 0.12f},   // l_foot
      {0.00f, -0.05f, 0.12f},   // r_foot
      {0.00f, 0.10f, 0.00f},    // neck
      {0.07f, 0.05f, 0.00f},    // l_collar
      {-0.07f, 0.05f, 0.00f},   // r_collar
      {0.00f, 0.12f, 0.00f},    // head
      {0.12f, 0.02f, 0.00f},    // l_shoulder
      {-0.12f, 0.02f, 0.00f},   // r_shoulder
      {0.02f, -0.26f, 0.00f},   // l_elbow
      {-0.02f, -0.26f, 0.00f},  // r_elbow
      {0.00f, -0.25f, 0.00f},   // l_wrist
      {0.00f, -0.25f, 0.00f},   // r_wrist
      {0.00f, -0.08f, 0.00f},   // l_hand
      {0.00f, -0.08f, 0.00f},   // r_hand
  };
  std::memcpy(t.rest_offsets, off, sizeof(off));

  // Shape directions: component 0 scales the whole skeleton, 1 the legs,
  // 2 the arms; the rest are small fixed directions. The root row stays
  // zero so the root always lands exactly at trans.
  const bool leg[kNumJoints] = {false, true, true, false, true, true, false, true,
                                true,  false, true, true, false, false, false, false,
                                false, false, false, false, false, false, false, false};
  const bool arm[kNumJoints] = {false, false, false, false, false, false, false, false,
                                false, false, false, false, false, true,  true,  false,
                                true,  true,  true,  true,  true,  true,  true,  true};
  Rng dirs(0x5eed5u);
  for (int j = 0; j < kNumJoints; ++j) {
    for (int a = 0; a < 3; ++a) {
      t.shape_dirs[j][a][0] = 0.1f * off[j][a];
      t.shape_dirs[j][a][1] = leg[j] ? 0.1f * off[j][a] : 0.0f;
      t.shape_dirs[j][a][2] = arm[j] ? 0.1f * off[j][a] : 0.0f;
    }
    for (int k = 3; k < kBetaDim; ++k) {
      for (int a = 0; a < 3; ++a) {
        float v = 0.01f * dirs.normal();
        t.shape_dirs[j][a][k] = j == 0 ? 0.0f : v;
      }
    }
  }

  // One surface point pair per joint at +-delta along the joint's local x,
  // rigidly bound to it. The averaging regressor then recovers the joint
  // exactly in every pose.
  const float delta = 0.02f;
  for (int j = 0; j < kNumJoints; ++j) {
    t.vertices_local[2 * j][0] = delta;
    t.vertices_local[2 * j + 1][0] = -delta;
    t.skin_weights[2 * j][j] = 1.0f;
    t.skin_weights[2 * j + 1][j] = 1.0f;
    t.joint_regressor[j][2 * j] = 0.5f;
    t.joint_regressor[j][2 * j + 1] = 0.5f;
  }
  return t;
}

}  // namespace

const BodyTemplate& BodyTemplate::canonical() {
  static const BodyTemplate t = build_canonical();
  return t;
}

const char* joint_name(int j) {
  if (j < 0 || j >= kNumJoints) throw ContractError("joint_name: index out of range");
  return kJointNames[j];
}

PoseParams PoseParams::rest() {
  PoseParams p;
  for (int j = 0; j < kNumJoints; ++j) {
    p.theta[6 * j + 0] = 1.0f;
    p.theta[6 * j + 4] = 1.0f;
  }
  return p;
}

int degenerate_theta_block(const float* theta, float eps) {
  for (int j = 0; j < kNumJoints; ++j) {
    const float* a1 = theta + 6 * j;
    const float* a2 = a1 + 3;
    float n1 = std::sqrt(a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]);
    if (n1 <= eps) return j;
    float inv = 1.0f / n1;
    float b1[3] = {a1[0] * inv, a1[1] * inv, a1[2] * inv};
    float d = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
    float u2[3] = {a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]};
    float n2 = std::sqrt(u2[0] * u2[0] + u2[1] * u2[1] + u2[2] * u2[2]);
    if (n2 <= eps) return j;
  }
  return -1;
}

Tensor rot6d_to_matrix(const Tensor& r6) {
  if (r6.numel() != 6) {
    throw DimensionError("rot6d_to_matrix: expected 6 elements, got " + std::to_string(r6.numel()));
  }
  Tensor a1 = slice(r6, 0, 3);
  Tensor a2 = slice(r6, 3, 3);
  Tensor n1 = l2norm(a1);
  if (n1.item() <= kColumnEps) {
    throw DegeneracyError("rot6d_to_matrix: first column has near-zero norm");
  }
  Tensor b1 = div(a1, n1);
  Tensor d = dot(b1, a2);
  Tensor u2 = sub(a2, mul(b1, d));
  Tensor n2 = l2norm(u2);
  if (n2.item() <= kColumnEps) {
    throw DegeneracyError("rot6d_to_matrix: columns are near-parallel");
  }
  Tensor b2 = div(u2, n2);
  Tensor b3 = cross3(b1, b2);
  // Stack as rows then transpose so b1, b2, b3 become the matrix columns.
  return transpose(reshape(concat({b1, b2, b3}), {3, 3}));
}

std::array<float, 9> rot6d_value(const float* six) {
  NoGradGuard ng;
  Tensor r6 = Tensor::constant(Array({6}, std::vector<float>(six, six + 6)));
  Tensor m = rot6d_to_matrix(r6);
  std::array<float, 9> out;
  std::memcpy(out.data(), m.value().data.data(), 9 * sizeof(float));
  return out;
}

void matrix_to_rot6d(const float* m, float* out) {
  out[0] = m[0];
  out[1] = m[3];
  out[2] = m[6];
  out[3] = m[1];
  out[4] = m[4];
  out[5] = m[7];
}

FkOut forward_kinematics(const Tensor& theta, const Tensor& beta, const Tensor& trans,
                         const BodyTemplate& tmpl) {
  if (theta.numel() != kThetaDim) {
    throw DimensionError("forward_kinematics: theta must have 144 elements");
  }
  if (beta.numel() != kBetaDim) {
    throw DimensionError("forward_kinematics: beta must have 10 elements");
  }
  if (trans.numel() != kTransDim) {
    throw DimensionError("forward_kinematics: trans must have 3 elements");
  }
  Tensor beta_col = reshape(beta, {kBetaDim, 1});

  std::vector<Tensor> pos(kNumJoints);   // each [3, 1]
  std::vector<Tensor> rot(kNumJoints);   // each [3, 3]
  for (int j = 0; j < kNumJoints; ++j) {
    Tensor local;
    try {
      local = rot6d_to_matrix(slice(theta, 6 * j, 6));
    } catch (const DegeneracyError& e) {
      throw DegeneracyError(std::string(e.what()) + " (joint " + joint_name(j) + ")");
    }
    int par = tmpl.parent[j];
    if (par < 0) {
      pos[j] = reshape(trans, {3, 1});
      rot[j] = local;
      continue;
    }
    Array sd({3, kBetaDim});
    for (int a = 0; a < 3; ++a) {
      for (int k = 0; k < kBetaDim; ++k) {
        sd.data[static_cast<size_t>(a) * kBetaDim + k] = tmpl.shape_dirs[j][a][k];
      }
    }
    Array rest({3, 1}, {tmpl.rest_offsets[j][0], tmpl.rest_offsets[j][1], tmpl.rest_offsets[j][2]});
    Tensor offset = add(Tensor::constant(std::move(rest)),
                        matmul(Tensor::constant(std::move(sd)), beta_col));
    pos[j] = add(pos[par], matmul(rot[par], offset));
    rot[j] = matmul(rot[par], local);
  }

  std::vector<Tensor> flat;
  flat.reserve(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) flat.push_back(reshape(pos[j], {3}));
  FkOut out;
  out.joints = reshape(concat(flat), {kNumJoints, 3});
  out.world_rot = std::move(rot);
  return out;
}

Tensor skin_vertices(const FkOut& fk, const BodyTemplate& tmpl) {
  std::vector<Tensor> rows;
  rows.reserve(kNumVertices);
  for (int v = 0; v < kNumVertices; ++v) {
    int j = tmpl.vertex_owner(v);
    Array local({3, 1},
                {tmpl.vertices_local[v][0], tmpl.vertices_local[v][1], tmpl.vertices_local[v][2]});
    Tensor p = reshape(slice(fk.joints, 3 * j, 3), {3, 1});
    Tensor world = add(p, matmul(fk.world_rot[j], Tensor::constant(std::move(local))));
    rows.push_back(reshape(world, {3}));
  }
  return reshape(concat(rows), {kNumVertices, 3});
}

Tensor joints_from_vertices(const Tensor& vertices, const BodyTemplate& tmpl) {
  if (vertices.shape() != Shape{kNumVertices, 3}) {
    throw DimensionError("joints_from_vertices: expected a 48x3 tensor, got " +
                         shape_str(vertices.shape()));
  }
  Array w({kNumJoints, kNumVertices});
  for (int j = 0; j < kNumJoints; ++j) {
    for (int v = 0; v < kNumVertices; ++v) {
      w.data[static_cast<size_t>(j) * kNumVertices + v] = tmpl.joint_regressor[j][v];
    }
  }
  return matmul(Tensor::constant(std::move(w)), vertices);
}

JointSet fk_joints(const PoseParams& p, const BodyTemplate& tmpl) {
  NoGradGuard ng;
  Tensor theta = Tensor::constant(Array({kThetaDim}, {p.theta.begin(), p.theta.end()}));
  Tensor beta = Tensor::constant(Array({kBetaDim}, {p.beta.begin(), p.beta.end()}));
  Tensor trans = Tensor::constant(Array({kTransDim}, {p.trans.begin(), p.trans.end()}));
  return joints_of(forward_kinematics(theta, beta, trans, tmpl).joints);
}

JointSet joints_of(const Tensor& joints_tensor) {
  if (joints_tensor.numel() != kNumJoints * 3) {
    throw DimensionError("joints_of: expected 72 elements");
  }
  JointSet js;
  std::memcpy(js.xyz.data(), joints_tensor.value().data.data(), sizeof(js.xyz));
  return js;
}

}  // namespace vlfa
