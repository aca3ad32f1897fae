#include "vlfa/scene.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <unordered_map>

namespace vlfa {

namespace {

using json = nlohmann::json;

constexpr float kPi = 3.14159265358979323846f;

float rad(float deg) { return deg * kPi / 180.0f; }
float deg(float r) { return r * 180.0f / kPi; }

// Describer thresholds. Angles in degrees, lengths in metres on the
// canonical (shape-zeroed) body.
constexpr float kLyingTiltDeg = 60.0f;
constexpr float kLeanTiltDeg = 30.0f;
constexpr float kTwistDeg = 30.0f;
constexpr float kHeadTurnDeg = 25.0f;
constexpr float kHeadTiltDeg = 20.0f;
constexpr float kArmBentDeg = 90.0f;
constexpr float kArmExtendedDeg = 150.0f;
constexpr float kArmReachFrac = 0.6f;
constexpr float kLegBentDeg = 100.0f;
constexpr float kSitKneeDeg = 120.0f;
constexpr float kSitDropM = 0.7f;
constexpr float kCrossMarginM = 0.04f;
constexpr float kWideStanceM = 0.44f;
constexpr float kTogetherM = 0.10f;
constexpr int kMaxTokens = 12;

struct V3 {
  float x, y, z;
};

V3 jpos(const JointSet& js, int j) { return {js.x(j), js.y(j), js.z(j)}; }

V3 vsub(V3 a, V3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
float vlen(V3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }

float interior_angle_deg(V3 a, V3 b, V3 c) {
  V3 u = vsub(a, b), v = vsub(c, b);
  float nu = vlen(u), nv = vlen(v);
  if (nu == 0.0f || nv == 0.0f) return 180.0f;
  float cosang = (u.x * v.x + u.y * v.y + u.z * v.z) / (nu * nv);
  cosang = std::clamp(cosang, -1.0f, 1.0f);
  return deg(std::acos(cosang));
}

}  // namespace

DescriptionVocab::DescriptionVocab() {
  tokens_ = {
      "standing",
      "sitting_like",
      "lying_like",
      "torso_upright",
      "torso_leaning_forward",
      "torso_leaning_back",
      "torso_leaning_sideways",
      "torso_twisted",
      "head_neutral",
      "head_turned_left",
      "head_turned_right",
      "head_tilted",
      "left_arm_lowered",
      "left_arm_raised",
      "left_arm_bent",
      "left_arm_extended",
      "left_arm_crossed",
      "right_arm_lowered",
      "right_arm_raised",
      "right_arm_bent",
      "right_arm_extended",
      "right_arm_crossed",
      "left_leg_straight",
      "left_leg_bent",
      "left_leg_crossed",
      "right_leg_straight",
      "right_leg_bent",
      "right_leg_crossed",
      "wide_stance",
      "feet_together",
  };
}

const DescriptionVocab& DescriptionVocab::instance() {
  static const DescriptionVocab v;
  return v;
}

const std::string& DescriptionVocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<size_t>(id)];
}

int DescriptionVocab::id(const std::string& token) const {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    const auto& toks = DescriptionVocab::instance().tokens_;
    for (size_t i = 0; i < toks.size(); ++i) m[toks[i]] = static_cast<int>(i);
    return m;
  }();
  auto it = index.find(token);
  if (it == index.end()) throw VocabularyError("unknown description token: " + token);
  return it->second;
}

PoseParams sample_pose(RngBase& rng) {
  PoseParams p;
  auto set_block = [&](int j, const Eigen::Matrix3f& r) {
    float m[9] = {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)};
    matrix_to_rot6d(m, p.theta.data() + 6 * j);
  };
  auto axis_of = [](char a) -> Eigen::Vector3f {
    switch (a) {
      case 'x':
        return Eigen::Vector3f::UnitX();
      case 'y':
        return Eigen::Vector3f::UnitY();
      default:
        return Eigen::Vector3f::UnitZ();
    }
  };
  struct AxisRange {
    char axis;
    float limit_deg;
  };
  auto draw = [&](int j, std::initializer_list<AxisRange> axes) {
    Eigen::Matrix3f r = Eigen::Matrix3f::Identity();
    for (const AxisRange& ar : axes) {
      float a = rng.uniform(-rad(ar.limit_deg), rad(ar.limit_deg));
      r = r * Eigen::Matrix3f(Eigen::AngleAxisf(a, axis_of(ar.axis)));
    }
    set_block(j, r);
  };

  // Root: free heading only. Every other joint stays inside rough
  // articulation limits; a zero draw everywhere reproduces the rest pose.
  draw(0, {{'y', 180.0f}});
  draw(1, {{'z', 45.0f}, {'x', 120.0f}});   // l_hip
  draw(2, {{'z', 45.0f}, {'x', 120.0f}});   // r_hip
  draw(3, {{'x', 30.0f}, {'y', 30.0f}, {'z', 30.0f}});  // spine1
  draw(4, {{'x', 120.0f}});                 // l_knee
  draw(5, {{'x', 120.0f}});                 // r_knee
  draw(6, {{'x', 30.0f}, {'y', 30.0f}, {'z', 30.0f}});  // spine2
  draw(7, {{'x', 45.0f}});                  // l_ankle
  draw(8, {{'x', 45.0f}});                  // r_ankle
  draw(9, {{'x', 30.0f}, {'y', 30.0f}, {'z', 30.0f}});  // spine3
  draw(10, {{'x', 30.0f}});                 // l_foot
  draw(11, {{'x', 30.0f}});                 // r_foot
  draw(12, {{'x', 30.0f}, {'y', 30.0f}, {'z', 30.0f}});  // neck
  draw(13, {{'z', 15.0f}});                 // l_collar
  draw(14, {{'z', 15.0f}});                 // r_collar
  draw(15, {{'x', 30.0f}, {'y', 30.0f}, {'z', 30.0f}});  // head
  draw(16, {{'z', 45.0f}, {'x', 120.0f}});  // l_shoulder
  draw(17, {{'z', 45.0f}, {'x', 120.0f}});  // r_shoulder
  draw(18, {{'x', 120.0f}});                // l_elbow
  draw(19, {{'x', 120.0f}});                // r_elbow
  draw(20, {{'x', 45.0f}});                 // l_wrist
  draw(21, {{'x', 45.0f}});                 // r_wrist
  set_block(22, Eigen::Matrix3f::Identity());
  set_block(23, Eigen::Matrix3f::Identity());

  for (int k = 0; k < kBetaDim; ++k) {
    p.beta[k] = std::clamp(0.5f * rng.normal(), -2.0f, 2.0f);
  }
  p.trans[0] = rng.uniform(-1.0f, 1.0f);
  p.trans[1] = rng.uniform(-1.0f, 1.0f);
  p.trans[2] = 3.0f + rng.uniform(-1.0f, 2.0f);
  return p;
}

Observation observe(const PoseParams& gt, const Camera& cam, const BodyTemplate& tmpl,
                    const NoiseConfig& noise, RngBase& rng) {
  if (noise.sigma_px < 0.0f || noise.p_occ < 0.0f || noise.p_occ > 1.0f) {
    throw DomainError("observe: sigma_px must be >= 0 and p_occ in [0, 1]");
  }
  JointSet js = fk_joints(gt, tmpl);
  auto exact = project(cam, js);

  float umin = exact[0], umax = exact[0], vmin = exact[1], vmax = exact[1];
  for (int j = 1; j < kNumJoints; ++j) {
    umin = std::min(umin, exact[2 * j]);
    umax = std::max(umax, exact[2 * j]);
    vmin = std::min(vmin, exact[2 * j + 1]);
    vmax = std::max(vmax, exact[2 * j + 1]);
  }
  const float margin = 10.0f;
  Observation out;
  out.bbox[0] = umin - margin;
  out.bbox[1] = vmin - margin;
  out.bbox[2] = (umax - umin) + 2 * margin;
  out.bbox[3] = (vmax - vmin) + 2 * margin;
  float cx = out.bbox[0] + 0.5f * out.bbox[2];
  float cy = out.bbox[1] + 0.5f * out.bbox[3];

  for (int j = 0; j < kNumJoints; ++j) {
    // A zero draw sits below the occlusion band, so the stub rng keeps every
    // joint visible.
    bool occluded = rng.u01() >= 1.0f - noise.p_occ;
    if (occluded) {
      out.kp.uv[j][0] = cx;
      out.kp.uv[j][1] = cy;
      out.kp.confidence[j] = 0.0f;
    } else {
      out.kp.uv[j][0] = exact[2 * j] + noise.sigma_px * rng.normal();
      out.kp.uv[j][1] = exact[2 * j + 1] + noise.sigma_px * rng.normal();
      out.kp.confidence[j] = 0.7f + 0.3f * rng.u01();
    }
  }

  // Feature layout: 48 box-normalized keypoints, 8 grouped confidence means,
  // 4 box stats in image units, 4 reserved zeros.
  for (int j = 0; j < kNumJoints; ++j) {
    out.feature_vec[2 * j + 0] = (out.kp.uv[j][0] - out.bbox[0]) / out.bbox[2];
    out.feature_vec[2 * j + 1] = (out.kp.uv[j][1] - out.bbox[1]) / out.bbox[3];
  }
  for (int g = 0; g < 8; ++g) {
    float acc = 0.0f;
    for (int k = 0; k < 3; ++k) acc += out.kp.confidence[3 * g + k];
    out.feature_vec[48 + g] = acc / 3.0f;
  }
  out.feature_vec[56] = cx / static_cast<float>(cam.image_size[0]);
  out.feature_vec[57] = cy / static_cast<float>(cam.image_size[1]);
  out.feature_vec[58] = out.bbox[2] / static_cast<float>(cam.image_size[0]);
  out.feature_vec[59] = out.bbox[3] / static_cast<float>(cam.image_size[1]);
  return out;
}

std::vector<int> describe(const PoseParams& p, const BodyTemplate& tmpl) {
  const auto& vocab = DescriptionVocab::instance();
  auto tid = [&](const char* s) { return vocab.id(s); };

  // Canonical evaluation: zero shape, root at origin, root yaw removed, so
  // the description depends only on articulation.
  PoseParams canon;
  canon.theta = p.theta;
  JointSet raw = fk_joints(canon, tmpl);

  auto root = rot6d_value(p.theta.data());
  float yaw = std::atan2(root[2], root[8]);
  float cy = std::cos(yaw), sy = std::sin(yaw);
  JointSet js;
  for (int j = 0; j < kNumJoints; ++j) {
    float x = raw.x(j), y = raw.y(j), z = raw.z(j);
    js.xyz[3 * j + 0] = cy * x - sy * z;
    js.xyz[3 * j + 1] = y;
    js.xyz[3 * j + 2] = sy * x + cy * z;
  }

  // Knee interior angles and spine tilt feed both the per-leg tokens and the
  // global class.
  float knee_l = interior_angle_deg(jpos(js, 1), jpos(js, 4), jpos(js, 7));
  float knee_r = interior_angle_deg(jpos(js, 2), jpos(js, 5), jpos(js, 8));
  V3 spine = vsub(jpos(js, 12), jpos(js, 0));
  float spine_len = vlen(spine);
  float tilt = spine_len == 0.0f ? 0.0f : deg(std::acos(std::clamp(spine.y / spine_len, -1.0f, 1.0f)));

  std::vector<int> out;

  // Global class.
  float drop = js.y(0) - std::min(js.y(7), js.y(8));
  if (tilt > kLyingTiltDeg) {
    out.push_back(tid("lying_like"));
  } else if (knee_l < kSitKneeDeg && knee_r < kSitKneeDeg && drop < kSitDropM) {
    out.push_back(tid("sitting_like"));
  } else {
    out.push_back(tid("standing"));
  }

  // Torso.
  {
    V3 sh = vsub(jpos(js, 16), jpos(js, 17));
    V3 hip = vsub(jpos(js, 1), jpos(js, 2));
    float cross = sh.z * hip.x - sh.x * hip.z;
    float dotxz = sh.x * hip.x + sh.z * hip.z;
    float twist = std::fabs(deg(std::atan2(cross, dotxz)));
    if (twist > kTwistDeg) {
      out.push_back(tid("torso_twisted"));
    } else if (tilt > kLeanTiltDeg) {
      if (std::fabs(spine.x) > std::fabs(spine.z)) {
        out.push_back(tid("torso_leaning_sideways"));
      } else if (spine.z > 0.0f) {
        out.push_back(tid("torso_leaning_forward"));
      } else {
        out.push_back(tid("torso_leaning_back"));
      }
    } else {
      out.push_back(tid("torso_upright"));
    }
  }

  // Head, from the neck and head blocks relative to the upper spine.
  {
    auto rn = rot6d_value(p.theta.data() + 6 * 12);
    auto rh = rot6d_value(p.theta.data() + 6 * 15);
    float m[9];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        m[3 * r + c] = rn[3 * r + 0] * rh[c] + rn[3 * r + 1] * rh[3 + c] + rn[3 * r + 2] * rh[6 + c];
      }
    }
    float hyaw = deg(std::atan2(m[2], m[8]));
    float hroll = deg(std::atan2(m[3], m[4]));
    if (hyaw > kHeadTurnDeg) {
      out.push_back(tid("head_turned_left"));
    } else if (hyaw < -kHeadTurnDeg) {
      out.push_back(tid("head_turned_right"));
    } else if (std::fabs(hroll) > kHeadTiltDeg) {
      out.push_back(tid("head_tilted"));
    } else {
      out.push_back(tid("head_neutral"));
    }
  }

  // Arms.
  auto arm_token = [&](bool left) {
    int sh = left ? 16 : 17, el = left ? 18 : 19, wr = left ? 20 : 21;
    V3 s = jpos(js, sh), e = jpos(js, el), w = jpos(js, wr);
    bool crossed = left ? w.x < -kCrossMarginM : w.x > kCrossMarginM;
    float phi = interior_angle_deg(s, e, w);
    float al = vlen(vsub(s, e)) + vlen(vsub(e, w));
    float reach = std::hypot(w.x - s.x, w.z - s.z);
    const char* name;
    if (crossed) {
      name = left ? "left_arm_crossed" : "right_arm_crossed";
    } else if (phi < kArmBentDeg) {
      name = left ? "left_arm_bent" : "right_arm_bent";
    } else if (w.y > s.y) {
      name = left ? "left_arm_raised" : "right_arm_raised";
    } else if (phi >= kArmExtendedDeg && al > 0.0f && reach > kArmReachFrac * al) {
      name = left ? "left_arm_extended" : "right_arm_extended";
    } else {
      name = left ? "left_arm_lowered" : "right_arm_lowered";
    }
    out.push_back(tid(name));
  };
  arm_token(true);
  arm_token(false);

  // Legs.
  auto leg_token = [&](bool left) {
    int an = left ? 7 : 8;
    float ax = js.x(an);
    bool crossed = left ? ax < -kCrossMarginM : ax > kCrossMarginM;
    float phi = left ? knee_l : knee_r;
    const char* name;
    if (crossed) {
      name = left ? "left_leg_crossed" : "right_leg_crossed";
    } else if (phi < kLegBentDeg) {
      name = left ? "left_leg_bent" : "right_leg_bent";
    } else {
      name = left ? "left_leg_straight" : "right_leg_straight";
    }
    out.push_back(tid(name));
  };
  leg_token(true);
  leg_token(false);

  // Stance, only when it is distinctive.
  float sep = std::fabs(js.x(7) - js.x(8));
  if (sep > kWideStanceM) {
    out.push_back(tid("wide_stance"));
  } else if (sep < kTogetherM) {
    out.push_back(tid("feet_together"));
  }

  if (out.size() > kMaxTokens) out.resize(kMaxTokens);
  return out;
}

std::vector<SceneRecord> gen_corpus(uint64_t seed, int count, const Camera& cam,
                                    const BodyTemplate& tmpl, const NoiseConfig& noise) {
  if (count < 0) throw ContractError("gen_corpus: count must be non-negative");
  Rng base(seed);
  std::vector<SceneRecord> out;
  out.reserve(static_cast<size_t>(count));
  for (int id = 0; id < count; ++id) {
    SceneRecord rec;
    rec.id = id;
    rec.camera = cam;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Rng rs = base.derive("scene", static_cast<uint64_t>(id) * 4096u + attempt);
      PoseParams gt = sample_pose(rs);
      try {
        Observation obs = observe(gt, cam, tmpl, noise, rs);
        rec.gt_params = gt;
        rec.obs_keypoints = obs.kp;
        std::copy(obs.bbox, obs.bbox + 4, rec.bbox);
        rec.feature_vec = obs.feature_vec;
        ok = true;
      } catch (const BehindCameraError&) {
        continue;
      }
    }
    if (!ok) {
      throw DomainError("gen_corpus: could not place scene " + std::to_string(id) +
                        " in front of the camera after 100 attempts");
    }
    rec.tokens = describe(rec.gt_params, tmpl);
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

json record_to_json(const SceneRecord& r) {
  const auto& vocab = DescriptionVocab::instance();
  json j;
  j["id"] = r.id;
  j["theta"] = r.gt_params.theta;
  j["beta"] = r.gt_params.beta;
  j["trans"] = r.gt_params.trans;
  j["camera"] = {{"focal", r.camera.focal},
                 {"principal", {r.camera.principal[0], r.camera.principal[1]}},
                 {"image_size", {r.camera.image_size[0], r.camera.image_size[1]}}};
  std::vector<float> uv(kNumJoints * 2), conf(kNumJoints);
  for (int k = 0; k < kNumJoints; ++k) {
    uv[2 * k] = r.obs_keypoints.uv[k][0];
    uv[2 * k + 1] = r.obs_keypoints.uv[k][1];
    conf[k] = r.obs_keypoints.confidence[k];
  }
  j["keypoints"] = {{"uv", uv}, {"confidence", conf}};
  j["bbox"] = {r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]};
  j["feature_vec"] = r.feature_vec;
  std::vector<std::string> toks;
  for (int t : r.tokens) toks.push_back(vocab.token(t));
  j["tokens"] = toks;
  return j;
}

SceneRecord record_from_json(const json& j) {
  const auto& vocab = DescriptionVocab::instance();
  SceneRecord r;
  r.id = j.at("id").get<int>();
  auto theta = j.at("theta").get<std::vector<float>>();
  auto beta = j.at("beta").get<std::vector<float>>();
  auto trans = j.at("trans").get<std::vector<float>>();
  if (theta.size() != kThetaDim || beta.size() != kBetaDim || trans.size() != kTransDim) {
    throw FormatError("scene record has wrong parameter arity");
  }
  std::copy(theta.begin(), theta.end(), r.gt_params.theta.begin());
  std::copy(beta.begin(), beta.end(), r.gt_params.beta.begin());
  std::copy(trans.begin(), trans.end(), r.gt_params.trans.begin());
  const json& jc = j.at("camera");
  r.camera.focal = jc.at("focal").get<float>();
  r.camera.principal[0] = jc.at("principal").at(0).get<float>();
  r.camera.principal[1] = jc.at("principal").at(1).get<float>();
  r.camera.image_size[0] = jc.at("image_size").at(0).get<int>();
  r.camera.image_size[1] = jc.at("image_size").at(1).get<int>();
  auto uv = j.at("keypoints").at("uv").get<std::vector<float>>();
  auto conf = j.at("keypoints").at("confidence").get<std::vector<float>>();
  if (uv.size() != kNumJoints * 2 || conf.size() != kNumJoints) {
    throw FormatError("scene record has wrong keypoint arity");
  }
  for (int k = 0; k < kNumJoints; ++k) {
    r.obs_keypoints.uv[k][0] = uv[2 * k];
    r.obs_keypoints.uv[k][1] = uv[2 * k + 1];
    float c = conf[k];
    if (c < 0.0f || c > 1.0f) {
      throw DomainError("keypoint confidence out of [0, 1] in scene " + std::to_string(r.id));
    }
    r.obs_keypoints.confidence[k] = c;
  }
  for (int k = 0; k < 4; ++k) r.bbox[k] = j.at("bbox").at(k).get<float>();
  if (r.bbox[2] <= 0.0f || r.bbox[3] <= 0.0f) {
    throw FormatError("scene record has a degenerate bounding box");
  }
  auto feat = j.at("feature_vec").get<std::vector<float>>();
  if (feat.size() != r.feature_vec.size()) {
    throw FormatError("scene record feature_vec must have 64 entries");
  }
  std::copy(feat.begin(), feat.end(), r.feature_vec.begin());
  for (const auto& t : j.at("tokens")) {
    r.tokens.push_back(vocab.id(t.get<std::string>()));
  }
  return r;
}

}  // namespace

void save_corpus(const std::string& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  for (const SceneRecord& r : records) {
    out << record_to_json(r).dump() << '\n';
  }
  if (!out) throw FormatError("write failed: " + path);
}

std::vector<SceneRecord> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open corpus: " + path);
  std::vector<SceneRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      out.push_back(record_from_json(j));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vlfa
