#include "vlfa/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace vlfa {

double mpjpe_mm(const JointSet& pred, const JointSet& gt) {
  double acc = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    double dx = static_cast<double>(pred.x(j)) - gt.x(j);
    double dy = static_cast<double>(pred.y(j)) - gt.y(j);
    double dz = static_cast<double>(pred.z(j)) - gt.z(j);
    acc += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return acc / kNumJoints * 1000.0;
}

double pa_mpjpe_mm(const JointSet& pred, const JointSet& gt, bool with_scale, bool* degenerate) {
  if (degenerate) *degenerate = false;

  Eigen::Matrix<double, 3, kNumJoints> p, g;
  for (int j = 0; j < kNumJoints; ++j) {
    p.col(j) << pred.x(j), pred.y(j), pred.z(j);
    g.col(j) << gt.x(j), gt.y(j), gt.z(j);
  }
  Eigen::Vector3d pc = p.rowwise().mean();
  Eigen::Vector3d gc = g.rowwise().mean();
  p.colwise() -= pc;
  g.colwise() -= gc;

  Eigen::Matrix3d h = g * p.transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sv = svd.singularValues();
  double pvar = p.squaredNorm();

  // A collapsed or collinear cloud has no well-posed rotation; align by
  // translation alone.
  bool rank_ok = sv(0) > 0.0 && sv(1) > 1e-9 * sv(0) && pvar > 0.0;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  double s = 1.0;
  if (rank_ok) {
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    r = u * d.asDiagonal() * v.transpose();
    if (r.determinant() < 0.0) {
      throw ContractError("pa_mpjpe: alignment produced an improper rotation");
    }
    if (with_scale) s = sv.dot(d) / pvar;
  } else if (degenerate) {
    *degenerate = true;
  }

  Eigen::Matrix<double, 3, kNumJoints> aligned = s * (r * p);
  double acc = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    acc += (aligned.col(j) - g.col(j)).norm();
  }
  return acc / kNumJoints * 1000.0;
}

PoseMetrics pose_metrics(const PoseParams& pred, const PoseParams& gt, const BodyTemplate& tmpl,
                         bool pa_with_scale) {
  JointSet pj = fk_joints(pred, tmpl);
  JointSet gj = fk_joints(gt, tmpl);
  PoseMetrics m;
  m.mpjpe_mm = mpjpe_mm(pj, gj);
  m.pa_mpjpe_mm = pa_mpjpe_mm(pj, gj, pa_with_scale, &m.pa_degenerate);
  return m;
}

}  // namespace vlfa
