#include "vlfa/regressor.hpp"

#include <cmath>
#include <cstring>

namespace vlfa {

namespace {

constexpr float kLogDepthMin = -2.0f;
constexpr float kLogDepthMax = 3.0f;

}  // namespace

RegressorNet make_regressor(RngBase& rng) {
  RegressorNet net;
  net.mlp = make_mlp({kFeatureDim, 256, 256, kRegressorOut}, rng);
  // Bias the head at a sensible start: identity rotation blocks, zero shape,
  // box-centred root at depth 3.5.
  Array& b = net.mlp.layers.back().b.mutable_value();
  for (int j = 0; j < kNumJoints; ++j) {
    b[6 * j + 0] = 1.0f;
    b[6 * j + 4] = 1.0f;
  }
  b[kThetaDim + kBetaDim + 2] = std::log(3.5f);
  return net;
}

void trans_from_head(const float* head3, const float* bbox, const Camera& cam, float* trans_out) {
  float cx = bbox[0] + 0.5f * bbox[2];
  float cy = bbox[1] + 0.5f * bbox[3];
  float u = cx + head3[0] * bbox[2];
  float v = cy + head3[1] * bbox[3];
  float lz = std::clamp(head3[2], kLogDepthMin, kLogDepthMax);
  float z = std::exp(lz);
  trans_out[0] = (u - cam.principal[0]) * z / cam.focal;
  trans_out[1] = (v - cam.principal[1]) * z / cam.focal;
  trans_out[2] = z;
}

Tensor trans_graph(const Tensor& head3, const float* bbox, const Camera& cam) {
  if (head3.numel() != 3) throw DimensionError("trans_graph: head must have 3 elements");
  float cx = bbox[0] + 0.5f * bbox[2];
  float cy = bbox[1] + 0.5f * bbox[3];
  Tensor du = slice(head3, 0, 1);
  Tensor dv = slice(head3, 1, 1);
  Tensor lz = slice(head3, 2, 1);
  // clamp(lz, lo, hi) = lo + relu(lz - lo) - relu(lz - hi); unit gradient
  // inside the band, zero outside, matching the plain clamp.
  lz = shift(sub(relu(shift(lz, -kLogDepthMin)), relu(shift(lz, -kLogDepthMax))), kLogDepthMin);
  Tensor z = exp(lz);
  Tensor u = shift(scale(du, bbox[2]), cx);
  Tensor v = shift(scale(dv, bbox[3]), cy);
  Tensor x = scale(mul(shift(u, -cam.principal[0]), z), 1.0f / cam.focal);
  Tensor y = scale(mul(shift(v, -cam.principal[1]), z), 1.0f / cam.focal);
  return concat({x, y, z});
}

PoseParams predict(const RegressorNet& net, const SceneRecord& scene) {
  NoGradGuard ng;
  Tensor feat = Tensor::constant(
      Array({kFeatureDim}, {scene.feature_vec.begin(), scene.feature_vec.end()}));
  Tensor out = net.mlp.forward(feat);
  const Array& o = out.value();

  PoseParams p;
  std::memcpy(p.theta.data(), o.data.data(), kThetaDim * sizeof(float));
  std::memcpy(p.beta.data(), o.data.data() + kThetaDim, kBetaDim * sizeof(float));
  trans_from_head(o.data.data() + kThetaDim + kBetaDim, scene.bbox, scene.camera, p.trans.data());

  // A near-degenerate rotation block gets one nudge toward identity.
  if (degenerate_theta_block(p.theta.data(), 1e-4f) >= 0) {
    for (int j = 0; j < kNumJoints; ++j) {
      if (degenerate_theta_block(p.theta.data(), 1e-4f) != j) continue;
      p.theta[6 * j + 0] += 0.01f;
      p.theta[6 * j + 4] += 0.01f;
    }
    int bad = degenerate_theta_block(p.theta.data(), 1e-8f);
    if (bad >= 0) {
      throw DegeneracyError("predict: rotation block for " + std::string(joint_name(bad)) +
                            " is degenerate even after perturbation");
    }
  }
  return p;
}

Tensor regressor_loss(const Tensor& theta, const Tensor& beta, const Tensor& trans,
                      const SceneRecord& scene, const BodyTemplate& tmpl,
                      const RegressorConfig& cfg, bool* reproj_masked) {
  if (reproj_masked) *reproj_masked = false;
  const PoseParams& gt = scene.gt_params;
  Tensor gt_theta = Tensor::constant(Array({kThetaDim}, {gt.theta.begin(), gt.theta.end()}));
  Tensor gt_beta = Tensor::constant(Array({kBetaDim}, {gt.beta.begin(), gt.beta.end()}));

  Tensor l_smpl = add(sumsq(sub(beta, gt_beta)), sumsq(sub(theta, gt_theta)));

  FkOut fk = forward_kinematics(theta, beta, trans, tmpl);
  JointSet gt_js = fk_joints(gt, tmpl);
  Tensor gt_joints = Tensor::constant(Array({kNumJoints, 3}, {gt_js.xyz.begin(), gt_js.xyz.end()}));
  Tensor l_joint = sumsq(sub(fk.joints, gt_joints));

  Tensor total = add(scale(l_smpl, cfg.lambda_smpl), scale(l_joint, cfg.lambda_joint));

  // Reprojection against noiseless ground-truth projections; dropped when
  // the prediction puts any joint behind the camera.
  bool behind = false;
  const Array& jv = fk.joints.value();
  for (int j = 0; j < kNumJoints; ++j) behind = behind || !(jv[3 * j + 2] > kMinDepth);
  if (behind) {
    if (reproj_masked) *reproj_masked = true;
    return total;
  }
  auto gt_uv = project(scene.camera, gt_js);
  Tensor gt_uv_t = Tensor::constant(Array({kNumJoints, 2}, {gt_uv.begin(), gt_uv.end()}));
  Tensor l_reproj = sumsq(sub(project_graph(scene.camera, fk.joints), gt_uv_t));
  return add(total, scale(l_reproj, cfg.lambda_reproj));
}

RegressorNet train_regressor(const std::vector<SceneRecord>& corpus, const BodyTemplate& tmpl,
                             const RegressorConfig& cfg, RngBase& rng,
                             RegressorTrainReport* report) {
  if (corpus.empty()) throw ContractError("train_regressor: empty corpus");
  Rng base(rng.next_u64());
  Rng init = base.derive("init");
  RegressorNet net = make_regressor(init);
  Adam opt(net.mlp.params(), cfg.lr);

  int n = static_cast<int>(corpus.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuf = base.derive("shuffle", static_cast<uint64_t>(epoch));
    shuf.shuffle(order);
    double epoch_loss = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      int bs = std::min(cfg.batch, n - start);
      Array feats({bs, kFeatureDim});
      for (int i = 0; i < bs; ++i) {
        const auto& f = corpus[static_cast<size_t>(order[start + i])].feature_vec;
        std::memcpy(feats.data.data() + static_cast<size_t>(i) * kFeatureDim, f.data(),
                    kFeatureDim * sizeof(float));
      }
      Tensor out = net.mlp.forward(Tensor::constant(std::move(feats)));
      std::vector<Tensor> losses;
      losses.reserve(static_cast<size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        const SceneRecord& scene = corpus[static_cast<size_t>(order[start + i])];
        Tensor row = slice(out, i * kRegressorOut, kRegressorOut);
        Tensor theta = slice(row, 0, kThetaDim);
        Tensor beta = slice(row, kThetaDim, kBetaDim);
        Tensor head = slice(row, kThetaDim + kBetaDim, 3);
        if (degenerate_theta_block(theta.value().data.data(), 1e-6f) >= 0) {
          // Keep only the parameter term; it pulls the block back toward a
          // valid rotation.
          if (report) ++report->degenerate_skipped;
          Tensor gt_theta = Tensor::constant(
              Array({kThetaDim}, {scene.gt_params.theta.begin(), scene.gt_params.theta.end()}));
          Tensor gt_beta = Tensor::constant(
              Array({kBetaDim}, {scene.gt_params.beta.begin(), scene.gt_params.beta.end()}));
          losses.push_back(scale(
              add(sumsq(sub(beta, gt_beta)), sumsq(sub(theta, gt_theta))), cfg.lambda_smpl));
          continue;
        }
        Tensor trans = trans_graph(head, scene.bbox, scene.camera);
        bool masked = false;
        losses.push_back(regressor_loss(theta, beta, trans, scene, tmpl, cfg, &masked));
        if (masked && report) ++report->reproj_masked;
      }
      Tensor batch_loss = scale(sum(concat(losses)), 1.0f / static_cast<float>(bs));
      float lv = batch_loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train_regressor: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(steps));
      }
      opt.zero_grad();
      backward(batch_loss);
      opt.step();
      epoch_loss += lv;
      ++steps;
    }
    if (report) report->epoch_loss.push_back(static_cast<float>(epoch_loss / steps));
  }
  return net;
}

Checkpoint regressor_checkpoint(const RegressorNet& net) {
  Checkpoint ck;
  ck.module = "regressor";
  for (const auto& nt : named_mlp("mlp", net.mlp)) ck.add(nt.name, nt.t.value());
  return ck;
}

RegressorNet regressor_from_checkpoint(const Checkpoint& ck) {
  if (ck.module != "regressor") {
    throw IntegrityError("expected a regressor checkpoint, found module \"" + ck.module + "\"");
  }
  RegressorNet net;
  load_mlp(net.mlp, "mlp", [&](const std::string& name) { return ck.find(name); });
  if (net.mlp.in_dim() != kFeatureDim || net.mlp.out_dim() != kRegressorOut) {
    throw IntegrityError("regressor checkpoint has wrong layer dimensions");
  }
  return net;
}

}  // namespace vlfa
