#include "vlfa/vqvae.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "vlfa/metrics.hpp"

namespace vlfa {

PoseVqvae make_vqvae(RngBase& rng, float alpha) {
  PoseVqvae m;
  m.encoder = make_mlp({kThetaDim, 128, kLatentDim}, rng);
  m.decoder = make_mlp({kLatentDim, 128, kThetaDim}, rng);
  Array cb({kCodebookSize, kLatentDim});
  for (float& v : cb.data) v = 0.1f * rng.normal();
  m.codebook = Tensor::param(std::move(cb));
  m.codebook.set_requires_grad(false);
  m.ema_count = Array::full({kCodebookSize}, 1.0f);
  m.ema_sum = Array({kCodebookSize, kLatentDim});
  std::memcpy(m.ema_sum.data.data(), m.codebook.value().data.data(),
              m.ema_sum.data.size() * sizeof(float));
  m.alpha = alpha;
  return m;
}

int quantize(const float* z, int dim, const Array& codebook) {
  if (codebook.shape.size() != 2 || codebook.shape[1] != dim) {
    throw DimensionError("quantize: codebook must be [K, " + std::to_string(dim) + "]");
  }
  int k = codebook.shape[0];
  int best = 0;
  double best_d = -1.0;
  for (int c = 0; c < k; ++c) {
    const float* row = codebook.data.data() + static_cast<size_t>(c) * dim;
    double d = 0.0;
    for (int i = 0; i < dim; ++i) {
      double diff = static_cast<double>(z[i]) - row[i];
      d += diff * diff;
    }
    if (best_d < 0.0 || d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

VqLossOut vq_loss(const PoseVqvae& model, const Tensor& theta, float alpha) {
  bool flat = theta.shape().size() == 1;
  Tensor input = flat ? reshape(theta, {1, kThetaDim}) : theta;
  if (input.shape().size() != 2 || input.shape()[1] != kThetaDim) {
    throw DimensionError("vq_loss: theta must be [144] or [B, 144]");
  }
  int bs = input.shape()[0];

  VqLossOut out;
  out.z = model.encoder.forward(input);
  const Array& zv = out.z.value();

  Array q({bs, kLatentDim});
  out.codes.resize(static_cast<size_t>(bs));
  const Array& cb = model.codebook.value();
  for (int i = 0; i < bs; ++i) {
    const float* zrow = zv.data.data() + static_cast<size_t>(i) * kLatentDim;
    int code = quantize(zrow, kLatentDim, cb);
    out.codes[static_cast<size_t>(i)] = code;
    std::memcpy(q.data.data() + static_cast<size_t>(i) * kLatentDim,
                cb.data.data() + static_cast<size_t>(code) * kLatentDim,
                kLatentDim * sizeof(float));
  }

  // Straight-through: the forward value is the quantized latent, the
  // gradient passes to z unchanged.
  Array jump(q.shape);
  for (size_t i = 0; i < jump.data.size(); ++i) jump.data[i] = q.data[i] - zv.data[i];
  Tensor z_st = add(out.z, Tensor::constant(std::move(jump)));

  Tensor recon2d = model.decoder.forward(z_st);
  Tensor l_rec = scale(sumsq(sub(recon2d, input)), 1.0f / static_cast<float>(bs));
  Tensor l_commit = scale(sumsq(sub(out.z, Tensor::constant(std::move(q)))),
                          alpha / static_cast<float>(bs));
  out.loss = add(l_rec, l_commit);
  out.recon = flat ? reshape(recon2d, {kThetaDim}) : recon2d;
  return out;
}

void ema_update(PoseVqvae& model, const Array& z_values, const std::vector<int>& codes,
                float decay) {
  if (z_values.shape.size() != 2 || z_values.shape[1] != kLatentDim ||
      z_values.shape[0] != static_cast<int>(codes.size())) {
    throw DimensionError("ema_update: latents and assignments disagree");
  }
  std::vector<int> hits(kCodebookSize, 0);
  std::vector<float> batch_sum(static_cast<size_t>(kCodebookSize) * kLatentDim, 0.0f);
  for (size_t i = 0; i < codes.size(); ++i) {
    int c = codes[i];
    if (c < 0 || c >= kCodebookSize) throw ContractError("ema_update: code index out of range");
    ++hits[static_cast<size_t>(c)];
    const float* zrow = z_values.data.data() + i * kLatentDim;
    float* srow = batch_sum.data() + static_cast<size_t>(c) * kLatentDim;
    for (int d = 0; d < kLatentDim; ++d) srow[d] += zrow[d];
  }
  Array& cb = model.codebook.mutable_value();
  for (int c = 0; c < kCodebookSize; ++c) {
    if (hits[static_cast<size_t>(c)] == 0) continue;  // untouched codes stay bit-identical
    float& n = model.ema_count[c];
    n = decay * n + (1.0f - decay) * static_cast<float>(hits[static_cast<size_t>(c)]);
    float* sum = model.ema_sum.data.data() + static_cast<size_t>(c) * kLatentDim;
    const float* bsum = batch_sum.data() + static_cast<size_t>(c) * kLatentDim;
    float* crow = cb.data.data() + static_cast<size_t>(c) * kLatentDim;
    for (int d = 0; d < kLatentDim; ++d) {
      sum[d] = decay * sum[d] + (1.0f - decay) * bsum[d];
      crow[d] = sum[d] / n;
    }
  }
}

float usage_perplexity(const std::vector<long>& counts) {
  long total = 0;
  for (long c : counts) total += c;
  if (total <= 0) return 0.0f;
  double h = 0.0;
  for (long c : counts) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return static_cast<float>(std::exp(h));
}

namespace {

Array theta_matrix(const std::vector<SceneRecord>& corpus, const std::vector<int>& order,
                   int start, int bs) {
  Array m({bs, kThetaDim});
  for (int i = 0; i < bs; ++i) {
    const auto& th = corpus[static_cast<size_t>(order[start + i])].gt_params.theta;
    std::memcpy(m.data.data() + static_cast<size_t>(i) * kThetaDim, th.data(),
                kThetaDim * sizeof(float));
  }
  return m;
}

}  // namespace

PoseVqvae train_vqvae(const std::vector<SceneRecord>& corpus, const BodyTemplate& tmpl,
                      const VqvaeConfig& cfg, RngBase& rng, VqvaeTrainReport* report) {
  if (corpus.empty()) throw ContractError("train_vqvae: empty corpus");
  Rng base(rng.next_u64());
  Rng init = base.derive("init");
  PoseVqvae model = make_vqvae(init, cfg.alpha);

  int n = static_cast<int>(corpus.size());

  // Seed the codebook with encodings of real poses so the first assignments
  // are spread over the data manifold.
  {
    NoGradGuard ng;
    Rng pick = base.derive("codebook-init");
    Array& cb = model.codebook.mutable_value();
    for (int c = 0; c < kCodebookSize; ++c) {
      const auto& th = corpus[static_cast<size_t>(pick.uniform_int(n))].gt_params.theta;
      auto z = encode_values(model, th.data());
      std::memcpy(cb.data.data() + static_cast<size_t>(c) * kLatentDim, z.data(),
                  kLatentDim * sizeof(float));
      std::memcpy(model.ema_sum.data.data() + static_cast<size_t>(c) * kLatentDim, z.data(),
                  kLatentDim * sizeof(float));
      model.ema_count[c] = 1.0f;
    }
  }

  std::vector<Tensor> params = model.encoder.params();
  for (const Tensor& p : model.decoder.params()) params.push_back(p);
  Adam opt(params, cfg.lr);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<long> usage;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuf = base.derive("shuffle", static_cast<uint64_t>(epoch));
    shuf.shuffle(order);
    usage.assign(kCodebookSize, 0);
    double epoch_loss = 0.0;
    int steps = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      int bs = std::min(cfg.batch, n - start);
      Tensor theta = Tensor::constant(theta_matrix(corpus, order, start, bs));
      VqLossOut lo = vq_loss(model, theta, cfg.alpha);
      float lv = lo.loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train_vqvae: non-finite loss at epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      backward(lo.loss);
      opt.step();
      ema_update(model, lo.z.value(), lo.codes, cfg.ema_decay);
      for (int c : lo.codes) ++usage[static_cast<size_t>(c)];
      epoch_loss += lv;
      ++steps;
    }
    if (report) report->epoch_loss.push_back(static_cast<float>(epoch_loss / steps));

    float perp = usage_perplexity(usage);
    if (perp < cfg.reseed_below_perplexity) {
      // Collapsed codebook: move dead codes onto encodings of random poses.
      Rng reseed = base.derive("reseed", static_cast<uint64_t>(epoch));
      NoGradGuard ng;
      Array& cb = model.codebook.mutable_value();
      int moved = 0;
      for (int c = 0; c < kCodebookSize; ++c) {
        if (usage[static_cast<size_t>(c)] != 0) continue;
        const auto& th = corpus[static_cast<size_t>(reseed.uniform_int(n))].gt_params.theta;
        auto z = encode_values(model, th.data());
        std::memcpy(cb.data.data() + static_cast<size_t>(c) * kLatentDim, z.data(),
                    kLatentDim * sizeof(float));
        std::memcpy(model.ema_sum.data.data() + static_cast<size_t>(c) * kLatentDim, z.data(),
                    kLatentDim * sizeof(float));
        model.ema_count[c] = 1.0f;
        ++moved;
      }
      if (moved > 0) {
        std::fprintf(stderr,
                     "train_vqvae: epoch %d perplexity %.1f below %.1f, reseeded %d dead codes\n",
                     epoch, perp, cfg.reseed_below_perplexity, moved);
      }
      if (report) report->reseeded += moved;
    }
    if (report && epoch + 1 == cfg.epochs) {
      report->perplexity = perp;
      report->used_codes = 0;
      for (long u : usage) report->used_codes += u > 0 ? 1 : 0;
    }
  }

  if (report) {
    // Reconstruction quality in joint space, decoding at the true shape and
    // translation: once through the codebook, once skipping it.
    NoGradGuard ng;
    double mq = 0.0, mc = 0.0;
    for (const SceneRecord& rec : corpus) {
      auto z = encode_values(model, rec.gt_params.theta.data());
      int code = quantize(z.data(), kLatentDim, model.codebook.value());
      const float* crow =
          model.codebook.value().data.data() + static_cast<size_t>(code) * kLatentDim;
      PoseParams pq = rec.gt_params;
      pq.theta = decode_values(model, crow);
      PoseParams pc = rec.gt_params;
      pc.theta = decode_values(model, z.data());
      JointSet gt = fk_joints(rec.gt_params, tmpl);
      mq += mpjpe_mm(fk_joints(pq, tmpl), gt);
      mc += mpjpe_mm(fk_joints(pc, tmpl), gt);
    }
    report->recon_mpjpe_quantized_mm = static_cast<float>(mq / corpus.size());
    report->recon_mpjpe_continuous_mm = static_cast<float>(mc / corpus.size());
  }
  return model;
}

std::array<float, kLatentDim> encode_values(const PoseVqvae& model, const float* theta144) {
  NoGradGuard ng;
  Tensor t = Tensor::constant(Array({kThetaDim}, std::vector<float>(theta144, theta144 + kThetaDim)));
  Tensor z = model.encoder.forward(t);
  std::array<float, kLatentDim> out;
  std::memcpy(out.data(), z.value().data.data(), kLatentDim * sizeof(float));
  return out;
}

std::array<float, kThetaDim> decode_values(const PoseVqvae& model, const float* z64) {
  NoGradGuard ng;
  Tensor z = Tensor::constant(Array({kLatentDim}, std::vector<float>(z64, z64 + kLatentDim)));
  Tensor th = model.decoder.forward(z);
  std::array<float, kThetaDim> out;
  std::memcpy(out.data(), th.value().data.data(), kThetaDim * sizeof(float));
  return out;
}

void freeze_vqvae(PoseVqvae& model) {
  for (Tensor& p : model.encoder.params()) p.set_requires_grad(false);
  for (Tensor& p : model.decoder.params()) p.set_requires_grad(false);
}

Checkpoint vqvae_checkpoint(const PoseVqvae& model) {
  Checkpoint ck;
  ck.module = "vqvae";
  for (const auto& nt : named_mlp("encoder", model.encoder)) ck.add(nt.name, nt.t.value());
  for (const auto& nt : named_mlp("decoder", model.decoder)) ck.add(nt.name, nt.t.value());
  ck.add("codebook", model.codebook.value());
  ck.add("ema_count", model.ema_count);
  ck.add("ema_sum", model.ema_sum);
  ck.meta["alpha"] = model.alpha;
  return ck;
}

PoseVqvae vqvae_from_checkpoint(const Checkpoint& ck) {
  if (ck.module != "vqvae") {
    throw IntegrityError("expected a vqvae checkpoint, found module \"" + ck.module + "\"");
  }
  PoseVqvae m;
  load_mlp(m.encoder, "encoder", [&](const std::string& n) { return ck.find(n); });
  load_mlp(m.decoder, "decoder", [&](const std::string& n) { return ck.find(n); });
  m.codebook = Tensor::param(ck.get("codebook"));
  m.codebook.set_requires_grad(false);
  m.ema_count = ck.get("ema_count");
  m.ema_sum = ck.get("ema_sum");
  m.alpha = ck.meta.value("alpha", 0.25f);
  if (m.codebook.shape() != Shape{kCodebookSize, kLatentDim}) {
    throw IntegrityError("vqvae checkpoint codebook has wrong shape");
  }
  return m;
}

}  // namespace vlfa
