#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vlfa/metrics.hpp"

using namespace vlfa;

namespace {

JointSet random_cloud(uint64_t seed) {
  Rng rng(seed);
  JointSet js;
  for (auto& v : js.xyz) v = rng.normal();
  return js;
}

JointSet apply_similarity(const JointSet& js, const std::array<float, 9>& r, float s,
                          const std::array<float, 3>& t) {
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) {
    float x = js.x(j), y = js.y(j), z = js.z(j);
    out.xyz[3 * j + 0] = s * (r[0] * x + r[1] * y + r[2] * z) + t[0];
    out.xyz[3 * j + 1] = s * (r[3] * x + r[4] * y + r[5] * z) + t[1];
    out.xyz[3 * j + 2] = s * (r[6] * x + r[7] * y + r[8] * z) + t[2];
  }
  return out;
}

double naive_mpjpe_mm(const JointSet& a, const JointSet& b) {
  double acc = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    double dx = static_cast<double>(a.x(j)) - b.x(j);
    double dy = static_cast<double>(a.y(j)) - b.y(j);
    double dz = static_cast<double>(a.z(j)) - b.z(j);
    acc += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return acc / kNumJoints * 1000.0;
}

double translation_aligned_mm(const JointSet& pred, const JointSet& gt) {
  std::array<float, 3> cp{}, cg{};
  for (int j = 0; j < kNumJoints; ++j) {
    for (int k = 0; k < 3; ++k) {
      cp[k] += pred.xyz[3 * j + k] / kNumJoints;
      cg[k] += gt.xyz[3 * j + k] / kNumJoints;
    }
  }
  JointSet shifted = pred;
  for (int j = 0; j < kNumJoints; ++j) {
    for (int k = 0; k < 3; ++k) shifted.xyz[3 * j + k] += cg[k] - cp[k];
  }
  return naive_mpjpe_mm(shifted, gt);
}

}  // namespace

TEST_CASE("identical clouds score zero") {
  JointSet js = random_cloud(1);
  CHECK(mpjpe_mm(js, js) == 0.0);
  CHECK(pa_mpjpe_mm(js, js) < 1e-6);
}

TEST_CASE("a single five-millimetre offset averages across joints") {
  JointSet gt = random_cloud(2);
  JointSet pred = gt;
  pred.xyz[3 * 11 + 0] += 0.003f;
  pred.xyz[3 * 11 + 2] += 0.004f;
  CHECK(mpjpe_mm(pred, gt) == doctest::Approx(5.0 / 24.0).epsilon(1e-4));
}

TEST_CASE("the metric matches a naive loop on random pairs") {
  for (int i = 0; i < 50; ++i) {
    JointSet a = random_cloud(100 + i);
    JointSet b = random_cloud(200 + i);
    CHECK(mpjpe_mm(a, b) == doctest::Approx(naive_mpjpe_mm(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("raw error is invariant to a shared rigid motion") {
  JointSet a = random_cloud(3);
  JointSet b = random_cloud(4);
  auto r = vlfa_test::axis_angle_matrix(0.3f, -0.5f, 0.8f, 1.1f);
  std::array<float, 3> t = {0.5f, -1.0f, 2.0f};
  double before = mpjpe_mm(a, b);
  double after = mpjpe_mm(apply_similarity(a, r, 1.0f, t), apply_similarity(b, r, 1.0f, t));
  CHECK(after == doctest::Approx(before).epsilon(1e-6));
}

TEST_CASE("alignment removes an exact similarity transform") {
  JointSet gt = random_cloud(5);
  // An axis permutation and a power-of-two scale keep the transformed copy
  // exact in float (the centroids still differ, so translation recovery is
  // exercised); the residual is pure double-precision solver error.
  std::array<float, 9> rz90 = {0, -1, 0, 1, 0, 0, 0, 0, 1};
  JointSet pred = apply_similarity(gt, rz90, 2.0f, {0.0f, 0.0f, 0.0f});
  CHECK(pa_mpjpe_mm(pred, gt) < 1e-6);
  JointSet rigid = apply_similarity(gt, rz90, 1.0f, {0.0f, 0.0f, 0.0f});
  CHECK(pa_mpjpe_mm(rigid, gt, false) < 1e-6);

  // A generic rotation rounds through float, so expect rounding-level error.
  auto r = vlfa_test::axis_angle_matrix(1.0f, 2.0f, -0.5f, 0.9f);
  JointSet generic = apply_similarity(gt, r, 1.3f, {0.2f, 0.7f, -0.4f});
  CHECK(pa_mpjpe_mm(generic, gt) < 1e-3);
  // Without scale recovery the 1.3x dilation must remain visible.
  CHECK(pa_mpjpe_mm(generic, gt, false) > 1.0);
}

TEST_CASE("full alignment beats translation alignment and no alignment") {
  for (int i = 0; i < 100; ++i) {
    JointSet pred = random_cloud(300 + i);
    JointSet gt = random_cloud(400 + i);
    double raw = mpjpe_mm(pred, gt);
    double shifted = translation_aligned_mm(pred, gt);
    double pa = pa_mpjpe_mm(pred, gt);
    CHECK(pa <= shifted * (1.0 + 1e-9) + 1e-9);
    CHECK(pa <= raw * (1.0 + 1e-9) + 1e-9);
  }
}

TEST_CASE("a mirrored cloud cannot be aligned away") {
  JointSet gt = random_cloud(6);
  JointSet mirror = gt;
  for (int j = 0; j < kNumJoints; ++j) mirror.xyz[3 * j] = -mirror.xyz[3 * j];
  // The optimal alignment is restricted to proper rotations, so a reflection
  // leaves real error behind.
  CHECK(pa_mpjpe_mm(mirror, gt) > 10.0);
}

TEST_CASE("collinear clouds fall back to translation alignment") {
  JointSet gt, pred;
  for (int j = 0; j < kNumJoints; ++j) {
    gt.xyz[3 * j + 0] = 0.1f * j;
    gt.xyz[3 * j + 1] = 0.0f;
    gt.xyz[3 * j + 2] = 0.0f;
    pred.xyz[3 * j + 0] = 0.12f * j + 0.05f;
    pred.xyz[3 * j + 1] = 0.02f;
    pred.xyz[3 * j + 2] = 0.0f;
  }
  bool degenerate = false;
  double pa = pa_mpjpe_mm(pred, gt, true, &degenerate);
  CHECK(degenerate);
  CHECK(pa == doctest::Approx(translation_aligned_mm(pred, gt)).epsilon(1e-6));
}

TEST_CASE("pose metrics wrap both measures consistently") {
  const BodyTemplate& tmpl = BodyTemplate::canonical();
  for (int i = 0; i < 20; ++i) {
    PoseParams pred = vlfa_test::random_pose(500 + i);
    PoseParams gt = vlfa_test::random_pose(600 + i);
    PoseMetrics m = pose_metrics(pred, gt, tmpl);
    JointSet jp = fk_joints(pred, tmpl), jg = fk_joints(gt, tmpl);
    CHECK(m.mpjpe_mm == doctest::Approx(mpjpe_mm(jp, jg)).epsilon(1e-9));
    CHECK(m.pa_mpjpe_mm <= m.mpjpe_mm * (1.0 + 1e-9) + 1e-9);
    CHECK_FALSE(m.pa_degenerate);
  }
}
