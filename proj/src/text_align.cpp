#include "vlfa/text_align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace vlfa {

namespace {

void require_frozen(const PoseVqvae& vq, const char* who) {
  for (const Tensor& p : vq.encoder.params()) {
    if (p.requires_grad()) {
      throw ContractError(std::string(who) + ": the pose encoder must be frozen");
    }
  }
  for (const Tensor& p : vq.decoder.params()) {
    if (p.requires_grad()) {
      throw ContractError(std::string(who) + ": the pose decoder must be frozen");
    }
  }
}

// Normalizes each row of a [B, 64] latent block in-graph; the epsilon keeps
// the division defined for a zero row while leaving unit rows untouched in
// practice.
Tensor normalize_rows(const Tensor& z, int rows) {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    Tensor zi = slice(z, i * kLatentDim, kLatentDim);
    out.push_back(div(zi, shift(l2norm(zi), 1e-12f)));
  }
  return reshape(concat(out), {rows, kLatentDim});
}

}  // namespace

TextEncoder make_text_encoder(RngBase& rng, float tau) {
  if (!(tau > 0.0f)) throw ContractError("text encoder temperature must be positive");
  TextEncoder enc;
  int vocab = DescriptionVocab::instance().size();
  Array table({vocab, kTokenEmbedDim});
  for (float& v : table.data) v = 0.02f * rng.normal();
  enc.token_table = Tensor::param(std::move(table));
  enc.e_t = make_mlp({kTokenEmbedDim, 128, kLatentDim}, rng);
  enc.tau = tau;
  return enc;
}

Tensor pool_tokens(const TextEncoder& enc, const std::vector<int>& tokens) {
  if (tokens.empty()) throw ContractError("pool_tokens: empty token list");
  int vocab = enc.token_table.shape()[0];
  // Accumulating in sorted order makes the mean bit-identical under any
  // permutation of the caller's list.
  std::vector<int> sorted = tokens;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Tensor> rows;
  rows.reserve(sorted.size());
  for (int t : sorted) {
    if (t < 0 || t >= vocab) {
      throw VocabularyError("token id " + std::to_string(t) + " outside the embedding table");
    }
    rows.push_back(slice(enc.token_table, t * kTokenEmbedDim, kTokenEmbedDim));
  }
  Tensor acc = rows[0];
  for (size_t i = 1; i < rows.size(); ++i) acc = add(acc, rows[i]);
  return scale(acc, 1.0f / static_cast<float>(tokens.size()));
}

Tensor text_latent_graph(const TextEncoder& enc, const std::vector<int>& tokens) {
  return enc.e_t.forward(pool_tokens(enc, tokens));
}

std::array<float, kLatentDim> text_latent_values(const TextEncoder& enc,
                                                 const std::vector<int>& tokens) {
  NoGradGuard ng;
  Tensor z = text_latent_graph(enc, tokens);
  std::array<float, kLatentDim> out;
  std::memcpy(out.data(), z.value().data.data(), kLatentDim * sizeof(float));
  return out;
}

AlignLossOut align_loss(const TextEncoder& enc, const PoseVqvae& frozen,
                        const std::vector<const SceneRecord*>& batch, const AlignConfig& cfg) {
  require_frozen(frozen, "align_loss");
  int bs = static_cast<int>(batch.size());
  if (bs == 0) throw ContractError("align_loss: empty batch");
  bool contrastive_on = bs >= 2;
  if (!contrastive_on) {
    std::fprintf(stderr, "align_loss: single-scene batch, contrastive term skipped\n");
  }

  // Pose side: frozen encoder, unit-normalized, constants in the graph.
  Array zp({bs, kLatentDim});
  Array theta_gt({bs, kThetaDim});
  for (int i = 0; i < bs; ++i) {
    auto z = encode_values(frozen, batch[static_cast<size_t>(i)]->gt_params.theta.data());
    double n2 = 0.0;
    for (float v : z) n2 += static_cast<double>(v) * v;
    float inv = n2 > 0.0 ? static_cast<float>(1.0 / (std::sqrt(n2) + 1e-12)) : 0.0f;
    for (int d = 0; d < kLatentDim; ++d) {
      zp.data[static_cast<size_t>(i) * kLatentDim + d] = z[static_cast<size_t>(d)] * inv;
    }
    std::memcpy(theta_gt.data.data() + static_cast<size_t>(i) * kThetaDim,
                batch[static_cast<size_t>(i)]->gt_params.theta.data(), kThetaDim * sizeof(float));
  }

  // Text side stays in the graph.
  std::vector<Tensor> pooled;
  pooled.reserve(static_cast<size_t>(bs));
  for (int i = 0; i < bs; ++i) {
    pooled.push_back(pool_tokens(enc, batch[static_cast<size_t>(i)]->tokens));
  }
  Tensor zt_raw = enc.e_t.forward(reshape(concat(pooled), {bs, kTokenEmbedDim}));
  Tensor zt = normalize_rows(zt_raw, bs);

  // Text-to-rotation reconstruction through the frozen decoder.
  Tensor recon = frozen.decoder.forward(zt_raw);
  Tensor l_rec = scale(sumsq(sub(recon, Tensor::constant(std::move(theta_gt)))),
                       1.0f / static_cast<float>(bs));

  AlignLossOut out;
  out.rec = l_rec.item();
  if (!contrastive_on) {
    out.loss = l_rec;
    return out;
  }

  // Similarity logits S[i][j] = <pose_i, text_j> / tau.
  Tensor s = scale(matmul(Tensor::constant(std::move(zp)), transpose(zt)), 1.0f / enc.tau);

  auto nce_rows = [&](const Tensor& logits) {
    std::vector<Tensor> terms;
    terms.reserve(static_cast<size_t>(bs));
    for (int i = 0; i < bs; ++i) {
      Tensor row = slice(logits, i * bs, bs);
      float m = *std::max_element(row.value().data.begin(), row.value().data.end());
      Tensor lse = shift(log(sum(exp(shift(row, -m)))), m);
      terms.push_back(sub(lse, slice(logits, i * bs + i, 1)));
    }
    return scale(sum(concat(terms)), 1.0f / static_cast<float>(bs));
  };

  Tensor contra = nce_rows(s);
  if (cfg.symmetric) {
    contra = scale(add(contra, nce_rows(transpose(s))), 0.5f);
  }

  out.contrastive = contra.item();
  out.loss = add(contra, l_rec);
  return out;
}

TextEncoder train_alignment(const std::vector<SceneRecord>& corpus, const PoseVqvae& frozen,
                            const AlignConfig& cfg, RngBase& rng, AlignTrainReport* report) {
  require_frozen(frozen, "train_alignment");
  if (static_cast<int>(corpus.size()) < cfg.batch) {
    throw ContractError("train_alignment: corpus smaller than one batch");
  }
  Rng base(rng.next_u64());
  Rng init = base.derive("init");
  TextEncoder enc = make_text_encoder(init, cfg.tau);

  std::vector<Tensor> params = enc.e_t.params();
  params.push_back(enc.token_table);
  Adam opt(params, cfg.lr);

  int n = static_cast<int>(corpus.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuf = base.derive("shuffle", static_cast<uint64_t>(epoch));
    shuf.shuffle(order);
    double epoch_loss = 0.0;
    int steps = 0;
    // Contrastive batches must be full-size; the remainder carries over to
    // the next epoch's shuffle.
    for (int start = 0; start + cfg.batch <= n; start += cfg.batch) {
      std::vector<const SceneRecord*> batch;
      batch.reserve(static_cast<size_t>(cfg.batch));
      for (int i = 0; i < cfg.batch; ++i) {
        batch.push_back(&corpus[static_cast<size_t>(order[start + i])]);
      }
      AlignLossOut lo = align_loss(enc, frozen, batch, cfg);
      float lv = lo.loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train_alignment: non-finite loss at epoch " + std::to_string(epoch));
      }
      opt.zero_grad();
      backward(lo.loss);
      opt.step();
      epoch_loss += lv;
      ++steps;
    }
    if (report) report->epoch_loss.push_back(static_cast<float>(epoch_loss / steps));
  }
  if (report) {
    report->retrieval = retrieval_top1(enc, frozen, corpus, 32, base.derive("retrieval").next_u64());
  }
  return enc;
}

float retrieval_top1(const TextEncoder& enc, const PoseVqvae& vq,
                     const std::vector<SceneRecord>& records, int group, uint64_t seed) {
  if (group < 2) throw ContractError("retrieval_top1: group must be at least 2");
  int n = static_cast<int>(records.size());
  if (n < 2) throw ContractError("retrieval_top1: need at least two records");

  NoGradGuard ng;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng shuf(seed);
  shuf.shuffle(order);

  int groups = n / group;
  if (groups == 0) {
    groups = 1;
    group = n;
  }
  long correct = 0, total = 0;
  std::vector<std::array<float, kLatentDim>> zp(static_cast<size_t>(group));
  std::vector<std::array<float, kLatentDim>> zt(static_cast<size_t>(group));
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < group; ++i) {
      const SceneRecord& rec = records[static_cast<size_t>(order[g * group + i])];
      zp[static_cast<size_t>(i)] = encode_values(vq, rec.gt_params.theta.data());
      zt[static_cast<size_t>(i)] = text_latent_values(enc, rec.tokens);
    }
    auto cosine = [](const std::array<float, kLatentDim>& a,
                     const std::array<float, kLatentDim>& b) {
      double d = 0.0, na = 0.0, nb = 0.0;
      for (int k = 0; k < kLatentDim; ++k) {
        d += static_cast<double>(a[static_cast<size_t>(k)]) * b[static_cast<size_t>(k)];
        na += static_cast<double>(a[static_cast<size_t>(k)]) * a[static_cast<size_t>(k)];
        nb += static_cast<double>(b[static_cast<size_t>(k)]) * b[static_cast<size_t>(k)];
      }
      double den = std::sqrt(na) * std::sqrt(nb);
      return den > 0.0 ? d / den : 0.0;
    };
    for (int i = 0; i < group; ++i) {
      int best = 0;
      double best_s = cosine(zp[0], zt[static_cast<size_t>(i)]);
      for (int j = 1; j < group; ++j) {
        double sj = cosine(zp[static_cast<size_t>(j)], zt[static_cast<size_t>(i)]);
        if (sj > best_s) {
          best_s = sj;
          best = j;
        }
      }
      correct += best == i ? 1 : 0;
      ++total;
    }
  }
  return static_cast<float>(static_cast<double>(correct) / static_cast<double>(total));
}

CosineLossOut cosine_text_loss(const PoseVqvae& frozen, const float* theta144,
                               const float* z_text64, bool squared, float text_scale) {
  require_frozen(frozen, "cosine_text_loss");
  if (!grad_enabled()) {
    throw ContractError("cosine_text_loss needs gradients enabled to differentiate in theta");
  }
  CosineLossOut out;

  std::vector<float> zt(z_text64, z_text64 + kLatentDim);
  double nt2 = 0.0;
  for (float& v : zt) {
    v *= text_scale;
    nt2 += static_cast<double>(v) * v;
  }
  float nt = static_cast<float>(std::sqrt(nt2));
  if (nt < 1e-12f) {
    out.zero_norm = true;
    return out;
  }

  Tensor theta = Tensor::param(Array({kThetaDim}, std::vector<float>(theta144, theta144 + kThetaDim)));
  Tensor zp = frozen.encoder.forward(theta);
  Tensor np = l2norm(zp);
  if (np.item() < 1e-12f) {
    out.zero_norm = true;
    return out;
  }
  Tensor cosine = div(dot(zp, Tensor::constant(Array({kLatentDim}, std::move(zt)))),
                      scale(np, nt));
  Tensor loss = squared ? mul(cosine, cosine) : neg(cosine);
  backward(loss);
  out.loss = loss.item();
  std::memcpy(out.grad.data(), theta.grad().data.data(), kThetaDim * sizeof(float));
  return out;
}

CosineLossOut cosine_loss(const PoseVqvae& frozen, const TextEncoder& enc, const float* theta144,
                          const std::vector<int>& tokens, bool squared) {
  auto zt = text_latent_values(enc, tokens);
  return cosine_text_loss(frozen, theta144, zt.data(), squared);
}

Checkpoint text_encoder_checkpoint(const TextEncoder& enc) {
  Checkpoint ck;
  ck.module = "text_align";
  ck.add("token_table", enc.token_table.value());
  for (const auto& nt : named_mlp("e_t", enc.e_t)) ck.add(nt.name, nt.t.value());
  ck.meta["tau"] = enc.tau;
  return ck;
}

TextEncoder text_encoder_from_checkpoint(const Checkpoint& ck) {
  if (ck.module != "text_align") {
    throw IntegrityError("expected a text_align checkpoint, found module \"" + ck.module + "\"");
  }
  TextEncoder enc;
  enc.token_table = Tensor::param(ck.get("token_table"));
  load_mlp(enc.e_t, "e_t", [&](const std::string& n) { return ck.find(n); });
  enc.tau = ck.meta.value("tau", 0.07f);
  if (enc.token_table.shape() !=
      Shape{DescriptionVocab::instance().size(), kTokenEmbedDim}) {
    throw IntegrityError("text_align checkpoint token table has wrong shape");
  }
  return enc;
}

}  // namespace vlfa
