#include "vlfa/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace vlfa {

namespace {

constexpr int kDenoiserIn = kStateDim + kCondDim + kTimeEmbedDim;

// Blow-up guard in per-dimension rms units; the initial residual sample sits
// near rms 1.
constexpr float kDivergenceRms = 10.0f;

float abar(const NoiseSchedule& sched, int t) { return sched.alpha_bars[static_cast<size_t>(t - 1)]; }

float rms(const float* x, int dim) {
  double s = 0.0;
  for (int i = 0; i < dim; ++i) s += static_cast<double>(x[i]) * x[i];
  return static_cast<float>(std::sqrt(s / dim));
}

struct CondEval {
  Condition cond;
  PoseParams pose;
  bool reproj_valid = false;
  float reproj = 0.0f;
};

CondEval eval_state(const float* r, const PoseParams& init, const SceneRecord& scene,
                    const GuidanceContext& ctx, const float* z_text, const ConditionMask& mask) {
  CondEval ev;
  ev.pose = decode_residual(r, init, ctx.sigma);

  if (mask.image) {
    std::memcpy(ev.cond.c.data(), scene.feature_vec.data(), kFeatureDim * sizeof(float));
  }

  try {
    JointSet js = fk_joints(ev.pose, *ctx.tmpl);
    ev.reproj = reproj_objective(scene.camera, js, scene.obs_keypoints);
    ev.reproj_valid = true;
    if (mask.keypoints) {
      KeypointGrad kg = keypoint_gradient(scene.camera, js, scene.obs_keypoints);
      float* seg = ev.cond.c.data() + kFeatureDim;
      for (int j = 0; j < kNumJoints; ++j) {
        for (int a = 0; a < 3; ++a) {
          seg[3 * j + a] = std::clamp(kKeypGradScale * kg.g[j][a], -kCondClamp, kCondClamp);
        }
      }
    }
  } catch (const BehindCameraError&) {
    ev.cond.keyp_zeroed = mask.keypoints;
  } catch (const DegeneracyError&) {
    ev.cond.keyp_zeroed = mask.keypoints;
  }

  if (mask.text) {
    CosineLossOut cl = cosine_text_loss(*ctx.vqvae, ev.pose.theta.data(), z_text,
                                        ctx.cosine_squared);
    float* seg = ev.cond.c.data() + kFeatureDim + 3 * kNumJoints;
    for (int i = 0; i < kThetaDim; ++i) {
      seg[i] = std::clamp(cl.grad[static_cast<size_t>(i)], -kCondClamp, kCondClamp);
    }
  }
  return ev;
}

void fill_input_row(float* row, const float* r, const Condition& cond, int t) {
  std::memcpy(row, r, kStateDim * sizeof(float));
  std::memcpy(row + kStateDim, cond.c.data(), kCondDim * sizeof(float));
  auto te = timestep_embedding(t);
  std::memcpy(row + kStateDim + kCondDim, te.data(), kTimeEmbedDim * sizeof(float));
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int timesteps, float beta_min, float beta_max) {
  if (timesteps < 1) throw ContractError("noise schedule needs at least one timestep");
  if (!(beta_min > 0.0f) || !(beta_max < 1.0f) || beta_min > beta_max) {
    throw ContractError("noise schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.betas.resize(static_cast<size_t>(timesteps));
  s.alphas.resize(static_cast<size_t>(timesteps));
  s.alpha_bars.resize(static_cast<size_t>(timesteps));
  double cum = 1.0;
  for (int t = 0; t < timesteps; ++t) {
    float frac = timesteps == 1 ? 0.0f : static_cast<float>(t) / static_cast<float>(timesteps - 1);
    float beta = beta_min + (beta_max - beta_min) * frac;
    s.betas[static_cast<size_t>(t)] = beta;
    s.alphas[static_cast<size_t>(t)] = 1.0f - beta;
    cum *= 1.0 - static_cast<double>(beta);
    s.alpha_bars[static_cast<size_t>(t)] = static_cast<float>(cum);
  }
  return s;
}

ConditionMask ConditionMask::from_name(const std::string& name) {
  ConditionMask m;
  if (name == "all") return m;
  m.image = m.keypoints = m.text = false;
  if (name == "image") {
    m.image = true;
  } else if (name == "keypoints") {
    m.keypoints = true;
  } else if (name == "text") {
    m.text = true;
  } else if (name == "no-image") {
    m.keypoints = m.text = true;
  } else if (name == "no-keypoints") {
    m.image = m.text = true;
  } else if (name == "no-text") {
    m.image = m.keypoints = true;
  } else {
    throw ConfigError("unknown condition mask \"" + name + "\"");
  }
  return m;
}

DenoiserNet make_denoiser(RngBase& rng) {
  DenoiserNet net;
  net.mlp = make_mlp({kDenoiserIn, 512, 512, kStateDim}, rng);
  return net;
}

std::array<float, kTimeEmbedDim> timestep_embedding(int t) {
  std::array<float, kTimeEmbedDim> e;
  constexpr int half = kTimeEmbedDim / 2;
  for (int k = 0; k < half; ++k) {
    float omega = std::pow(10000.0f, -static_cast<float>(k) / half);
    e[static_cast<size_t>(2 * k)] = std::sin(omega * static_cast<float>(t));
    e[static_cast<size_t>(2 * k + 1)] = std::cos(omega * static_cast<float>(t));
  }
  return e;
}

void encode_residual(const PoseParams& x, const PoseParams& init, float sigma, float* r147) {
  for (int i = 0; i < kThetaDim; ++i) {
    r147[i] = (x.theta[static_cast<size_t>(i)] - init.theta[static_cast<size_t>(i)]) / sigma;
  }
  for (int i = 0; i < 3; ++i) {
    r147[kThetaDim + i] =
        kTransResidualScale * (x.trans[static_cast<size_t>(i)] - init.trans[static_cast<size_t>(i)]) / sigma;
  }
}

PoseParams decode_residual(const float* r147, const PoseParams& init, float sigma) {
  PoseParams p;
  p.beta = init.beta;
  for (int i = 0; i < kThetaDim; ++i) {
    p.theta[static_cast<size_t>(i)] = init.theta[static_cast<size_t>(i)] + sigma * r147[i];
  }
  for (int i = 0; i < 3; ++i) {
    p.trans[static_cast<size_t>(i)] =
        init.trans[static_cast<size_t>(i)] + sigma * r147[kThetaDim + i] / kTransResidualScale;
  }
  return p;
}

Condition build_condition(const float* r147, const PoseParams& init, const SceneRecord& scene,
                          const GuidanceContext& ctx, const float* z_text64,
                          const ConditionMask& mask) {
  static const std::array<float, kLatentDim> kZeroText{};
  const float* zt = z_text64 ? z_text64 : kZeroText.data();
  return eval_state(r147, init, scene, ctx, zt, mask).cond;
}

void reverse_step(float* x, const float* eps, int dim, const NoiseSchedule& sched, int t,
                  const float* z) {
  float beta = sched.betas[static_cast<size_t>(t - 1)];
  float score_coef = -beta / std::sqrt(1.0f - abar(sched, t));
  float keep = 1.0f - 0.5f * beta;
  float noise_coef = std::sqrt(beta);
  for (int i = 0; i < dim; ++i) {
    x[i] = keep * x[i] + score_coef * eps[i] + (z ? noise_coef * z[i] : 0.0f);
  }
}

void forward_noise(const float* r0, const float* eps, int dim, const NoiseSchedule& sched, int t,
                   float* rt) {
  float a = std::sqrt(abar(sched, t));
  float b = std::sqrt(1.0f - abar(sched, t));
  for (int i = 0; i < dim; ++i) rt[i] = a * r0[i] + b * eps[i];
}

std::vector<float> reverse_sample(const NoiseSchedule& sched, int dim,
                                  const std::function<void(const float* x, int t, float* eps)>& eps_fn,
                                  RngBase& rng) {
  std::vector<float> x(static_cast<size_t>(dim));
  for (float& v : x) v = rng.normal();
  std::vector<float> eps(static_cast<size_t>(dim));
  std::vector<float> z(static_cast<size_t>(dim));
  for (int t = sched.timesteps(); t >= 1; --t) {
    eps_fn(x.data(), t, eps.data());
    if (t > 1) {
      for (float& v : z) v = rng.normal();
      reverse_step(x.data(), eps.data(), dim, sched, t, z.data());
    } else {
      reverse_step(x.data(), eps.data(), dim, sched, t, nullptr);
    }
  }
  return x;
}

DenoiserNet train_diffusion(const std::vector<SceneRecord>& corpus, const RegressorNet& reg,
                            const GuidanceContext& ctx, const DiffusionTrainConfig& cfg,
                            RngBase& rng, DiffusionTrainReport* report) {
  if (corpus.empty()) throw ContractError("train_diffusion: empty corpus");
  NoiseSchedule sched = NoiseSchedule::linear(cfg.timesteps, cfg.beta_min, cfg.beta_max);
  int n = static_cast<int>(corpus.size());

  Rng base(rng.next_u64());
  Rng init_rng = base.derive("init");
  DenoiserNet net = make_denoiser(init_rng);
  Adam opt(net.mlp.params(), cfg.lr);

  std::vector<PoseParams> inits(static_cast<size_t>(n));
  std::vector<std::array<float, kStateDim>> r0(static_cast<size_t>(n));
  std::vector<std::array<float, kLatentDim>> ztext(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    inits[static_cast<size_t>(i)] = predict(reg, corpus[static_cast<size_t>(i)]);
    encode_residual(corpus[static_cast<size_t>(i)].gt_params, inits[static_cast<size_t>(i)],
                    ctx.sigma, r0[static_cast<size_t>(i)].data());
    ztext[static_cast<size_t>(i)] = text_latent_values(*ctx.text, corpus[static_cast<size_t>(i)].tokens);
  }

  ConditionMask all;
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  int timesteps = sched.timesteps();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuf = base.derive("shuffle", static_cast<uint64_t>(epoch));
    shuf.shuffle(order);
    Rng noise = base.derive("noise", static_cast<uint64_t>(epoch));
    double epoch_loss = 0.0;
    long steps = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      int bs = std::min(cfg.batch, n - start);
      Array in({bs, kDenoiserIn});
      Array target({bs, kStateDim});
      for (int b = 0; b < bs; ++b) {
        int i = order[static_cast<size_t>(start + b)];
        int t = 1 + noise.uniform_int(timesteps);
        float eps[kStateDim];
        for (float& v : eps) v = noise.normal();
        float rt[kStateDim];
        forward_noise(r0[static_cast<size_t>(i)].data(), eps, kStateDim, sched, t, rt);
        CondEval ev = eval_state(rt, inits[static_cast<size_t>(i)], corpus[static_cast<size_t>(i)],
                                 ctx, ztext[static_cast<size_t>(i)].data(), all);
        if (ev.cond.keyp_zeroed && report) report->keyp_zeroed += 1;
        fill_input_row(in.data.data() + static_cast<size_t>(b) * kDenoiserIn, rt, ev.cond, t);
        std::memcpy(target.data.data() + static_cast<size_t>(b) * kStateDim, eps,
                    kStateDim * sizeof(float));
      }
      Tensor out = net.mlp.forward(Tensor::constant(std::move(in)));
      Tensor loss = scale(sumsq(sub(out, Tensor::constant(std::move(target)))),
                          1.0f / static_cast<float>(bs * kStateDim));
      float lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train_diffusion: non-finite loss at epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      epoch_loss += lv;
      ++steps;
    }
    if (report) report->epoch_loss.push_back(static_cast<float>(epoch_loss / steps));
  }
  return net;
}

RefineResult refine(const SceneRecord& scene, const PoseParams& init, const GuidanceContext& ctx,
                    const DenoiserNet& net, const NoiseSchedule& sched, const RefineOptions& opt,
                    uint64_t seed) {
  std::vector<RefineResult> out;
  refine_batch({&scene}, {init}, ctx, net, sched, opt, seed, &out);
  return std::move(out[0]);
}

void refine_batch(const std::vector<const SceneRecord*>& scenes,
                  const std::vector<PoseParams>& inits, const GuidanceContext& ctx,
                  const DenoiserNet& net, const NoiseSchedule& sched, const RefineOptions& opt,
                  uint64_t seed, std::vector<RefineResult>* out) {
  size_t ns = scenes.size();
  if (inits.size() != ns) throw ContractError("refine_batch: one init per scene required");
  out->assign(ns, RefineResult{});
  if (ns == 0) return;

  Rng root(seed);
  struct SceneState {
    std::array<float, kStateDim> r;
    Rng stream{0};
    std::array<float, kLatentDim> ztext{};
    bool active = true;
    bool has_best = false;
    float best_reproj = std::numeric_limits<float>::infinity();
    std::array<float, kStateDim> best_r{};
  };
  std::vector<SceneState> st(ns);
  for (size_t i = 0; i < ns; ++i) {
    st[i].stream = root.derive("scene", static_cast<uint64_t>(scenes[i]->id));
    for (float& v : st[i].r) v = st[i].stream.normal();
    if (opt.mask.text) st[i].ztext = text_latent_values(*ctx.text, scenes[i]->tokens);
    if (opt.record_trajectory) (*out)[i].trajectory.push_back(st[i].r);
  }

  std::vector<size_t> live;
  std::vector<CondEval> evals(ns);
  for (int t = sched.timesteps(); t >= 1; --t) {
    live.clear();
    for (size_t i = 0; i < ns; ++i) {
      if (!st[i].active) continue;
      evals[i] = eval_state(st[i].r.data(), inits[i], *scenes[i], ctx, st[i].ztext.data(), opt.mask);
      if (evals[i].cond.keyp_zeroed) (*out)[i].keyp_zeroed = true;
      if (evals[i].reproj_valid && evals[i].reproj < st[i].best_reproj) {
        st[i].best_reproj = evals[i].reproj;
        st[i].best_r = st[i].r;
        st[i].has_best = true;
      }
      live.push_back(i);
    }
    if (live.empty()) break;

    Array in({static_cast<int>(live.size()), kDenoiserIn});
    for (size_t k = 0; k < live.size(); ++k) {
      size_t i = live[k];
      fill_input_row(in.data.data() + k * kDenoiserIn, st[i].r.data(), evals[i].cond, t);
    }
    Array eps;
    {
      NoGradGuard ng;
      eps = net.mlp.forward(Tensor::constant(std::move(in))).value();
    }

    for (size_t k = 0; k < live.size(); ++k) {
      size_t i = live[k];
      const float* eps_i = eps.data.data() + k * kStateDim;
      if (t > 1) {
        float z[kStateDim];
        for (float& v : z) v = st[i].stream.normal();
        reverse_step(st[i].r.data(), eps_i, kStateDim, sched, t, z);
      } else {
        reverse_step(st[i].r.data(), eps_i, kStateDim, sched, t, nullptr);
      }
      if (opt.record_trajectory) (*out)[i].trajectory.push_back(st[i].r);
      if (rms(st[i].r.data(), kStateDim) > kDivergenceRms) {
        (*out)[i].diverged = true;
        st[i].active = false;
      }
    }
  }

  for (size_t i = 0; i < ns; ++i) {
    const float* final_r = st[i].r.data();
    if ((*out)[i].diverged && st[i].has_best) final_r = st[i].best_r.data();
    (*out)[i].pose = decode_residual(final_r, inits[i], ctx.sigma);
    try {
      JointSet js = fk_joints((*out)[i].pose, *ctx.tmpl);
      (*out)[i].reproj = reproj_objective(scenes[i]->camera, js, scenes[i]->obs_keypoints);
      (*out)[i].reproj_valid = true;
    } catch (const BehindCameraError&) {
    } catch (const DegeneracyError&) {
    }
  }
}

Checkpoint denoiser_checkpoint(const DenoiserNet& net) {
  Checkpoint ck;
  ck.module = "diffusion";
  for (const auto& nt : named_mlp("denoiser", net.mlp)) ck.add(nt.name, nt.t.value());
  return ck;
}

DenoiserNet denoiser_from_checkpoint(const Checkpoint& ck) {
  if (ck.module != "diffusion") {
    throw IntegrityError("expected a diffusion checkpoint, found module \"" + ck.module + "\"");
  }
  DenoiserNet net;
  load_mlp(net.mlp, "denoiser", [&](const std::string& n) { return ck.find(n); });
  if (net.mlp.layers.empty() || net.mlp.layers.front().W.shape()[0] != kDenoiserIn ||
      net.mlp.layers.back().W.shape()[1] != kStateDim) {
    throw IntegrityError("diffusion checkpoint has wrong network dimensions");
  }
  return net;
}

}  // namespace vlfa
