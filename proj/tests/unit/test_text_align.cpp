#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "test_util.hpp"
#include "vlfa/text_align.hpp"

using namespace vlfa;

namespace {

std::vector<SceneRecord> scene_corpus(uint64_t seed, int count) {
  Camera cam;
  return gen_corpus(seed, count, cam, BodyTemplate::canonical(), NoiseConfig{});
}

// Rewires a two-layer MLP into an exact linear map: the first layer scales
// the leading components and shifts them by a large bias so every ReLU stays
// on its linear branch, the second selects them back and removes the shift.
// Inputs bounded by ~1000/in_scale come through as round(in_scale * x) with
// only the float rounding of the scale multiply.
void make_affine(Mlp& m, float in_scale) {
  REQUIRE(m.layers.size() == 2);
  int in = m.layers[0].in_dim();
  int hid = m.layers[0].out_dim();
  int out = m.layers[1].out_dim();
  REQUIRE(out <= hid);
  for (auto& layer : m.layers) {
    for (auto& v : layer.W.mutable_value().data) v = 0.0f;
    for (auto& v : layer.b.mutable_value().data) v = 0.0f;
  }
  for (int k = 0; k < hid && k < in; ++k) {
    m.layers[0].W.mutable_value()[k * hid + k] = in_scale;
  }
  for (auto& v : m.layers[0].b.mutable_value().data) v = 100.0f;
  for (int o = 0; o < out; ++o) m.layers[1].W.mutable_value()[o * out + o] = 1.0f;
  for (auto& v : m.layers[1].b.mutable_value().data) v = -100.0f;
}

// Frozen pose model whose encoder computes exactly 0.1 * theta[0:64].
PoseVqvae linear_pose_model(uint64_t seed) {
  Rng rng(seed);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  make_affine(model.encoder, 0.1f);
  freeze_vqvae(model);
  return model;
}

SceneRecord scene_with(const std::array<float, kThetaDim>& theta, std::vector<int> tokens) {
  SceneRecord rec;
  rec.gt_params.theta = theta;
  rec.tokens = std::move(tokens);
  return rec;
}

std::array<float, kThetaDim> unit_theta(int index, float value) {
  std::array<float, kThetaDim> t{};
  t[size_t(index)] = value;
  return t;
}

}  // namespace

TEST_CASE("token pooling is a mean over the multiset") {
  Rng rng(1);
  TextEncoder enc = make_text_encoder(rng, 0.07f);

  Tensor one = pool_tokens(enc, {4});
  Tensor twice = pool_tokens(enc, {4, 4});
  bool same = true;
  for (int i = 0; i < kTokenEmbedDim; ++i) same = same && one.value()[i] == twice.value()[i];
  CHECK(same);

  Tensor fwd = pool_tokens(enc, {1, 4, 7});
  Tensor perm = pool_tokens(enc, {7, 1, 4});
  for (int i = 0; i < kTokenEmbedDim; ++i) same = same && fwd.value()[i] == perm.value()[i];
  CHECK(same);

  CHECK_THROWS_AS(pool_tokens(enc, {}), ContractError);
  CHECK_THROWS_AS(pool_tokens(enc, {-1}), VocabularyError);
  CHECK_THROWS_AS(pool_tokens(enc, {DescriptionVocab::instance().size()}), VocabularyError);
}

TEST_CASE("temperature must be positive") {
  Rng rng(2);
  CHECK_THROWS_AS(make_text_encoder(rng, 0.0f), ContractError);
  CHECK_THROWS_AS(make_text_encoder(rng, -1.0f), ContractError);
}

TEST_CASE("alignment loss requires a frozen pose model and a non-empty batch") {
  Rng rng(3);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  TextEncoder enc = make_text_encoder(rng, 0.07f);
  auto corpus = scene_corpus(4, 2);
  std::vector<const SceneRecord*> batch = {&corpus[0], &corpus[1]};
  AlignConfig cfg;
  CHECK_THROWS_AS(align_loss(enc, model, batch, cfg), ContractError);
  freeze_vqvae(model);
  CHECK_THROWS_AS(align_loss(enc, model, {}, cfg), ContractError);
}

TEST_CASE("a single-scene batch reduces to the reconstruction term") {
  Rng rng(5);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  TextEncoder enc = make_text_encoder(rng, 0.07f);
  auto corpus = scene_corpus(6, 1);
  AlignConfig cfg;
  AlignLossOut out = align_loss(enc, model, {&corpus[0]}, cfg);
  CHECK(out.contrastive == 0.0f);
  CHECK(out.loss.item() == out.rec);

  // The term is the squared distance between the decoded text latent and the
  // scene's rotations.
  auto zt = text_latent_values(enc, corpus[0].tokens);
  auto dec = decode_values(model, zt.data());
  double expect = 0.0;
  for (int i = 0; i < kThetaDim; ++i) {
    double d = double(dec[size_t(i)]) - double(corpus[0].gt_params.theta[size_t(i)]);
    expect += d * d;
  }
  CHECK(out.rec == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("perfectly aligned orthogonal latents drive the contrastive term to zero") {
  PoseVqvae model = linear_pose_model(7);
  Rng rng(8);
  TextEncoder enc = make_text_encoder(rng, 0.07f);
  make_affine(enc.e_t, 0.1f);
  // Scene i carries pose latent e_i and, via its single token, text latent
  // e_i: an exact identity similarity matrix.
  std::vector<SceneRecord> scenes;
  for (int i = 0; i < 3; ++i) {
    scenes.push_back(scene_with(unit_theta(i, 10.0f), {i}));
    float* row = enc.token_table.mutable_value().data.data() + size_t(i) * kTokenEmbedDim;
    for (int d = 0; d < kTokenEmbedDim; ++d) row[d] = 0.0f;
    row[i] = 10.0f;
  }
  std::vector<const SceneRecord*> batch = {&scenes[0], &scenes[1], &scenes[2]};
  AlignConfig cfg;
  AlignLossOut out = align_loss(enc, model, batch, cfg);
  CHECK(out.contrastive >= 0.0f);
  CHECK(out.contrastive < 1e-4f);
  CHECK(out.loss.item() == doctest::Approx(out.contrastive + out.rec).epsilon(1e-5));
}

TEST_CASE("contrastive term matches a hand-rolled evaluation for three scenes") {
  Rng rng(9);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  TextEncoder enc = make_text_encoder(rng, 0.07f);
  auto corpus = scene_corpus(10, 3);
  corpus[0].tokens = {0, 5, 9};
  corpus[1].tokens = {1, 6};
  corpus[2].tokens = {2, 7, 11, 13};
  std::vector<const SceneRecord*> batch = {&corpus[0], &corpus[1], &corpus[2]};

  auto unit = [](std::array<float, kLatentDim> v) {
    double n2 = 0.0;
    for (float x : v) n2 += double(x) * x;
    double inv = 1.0 / std::sqrt(n2);
    std::array<double, kLatentDim> out;
    for (int i = 0; i < kLatentDim; ++i) out[size_t(i)] = double(v[size_t(i)]) * inv;
    return out;
  };
  std::array<std::array<double, kLatentDim>, 3> zp, zt;
  for (int i = 0; i < 3; ++i) {
    zp[size_t(i)] = unit(encode_values(model, batch[size_t(i)]->gt_params.theta.data()));
    zt[size_t(i)] = unit(text_latent_values(enc, batch[size_t(i)]->tokens));
  }
  double s[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < kLatentDim; ++k) d += zp[size_t(i)][size_t(k)] * zt[size_t(j)][size_t(k)];
      s[i][j] = d / 0.07;
    }
  }
  auto nce = [&](bool transpose) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
      double lse = 0.0;
      for (int j = 0; j < 3; ++j) lse += std::exp(transpose ? s[j][i] : s[i][j]);
      acc += std::log(lse) - s[i][i];
    }
    return acc / 3.0;
  };

  AlignConfig cfg;
  AlignLossOut fwd = align_loss(enc, model, batch, cfg);
  CHECK(fwd.contrastive == doctest::Approx(nce(false)).epsilon(1e-5));

  cfg.symmetric = true;
  AlignLossOut sym = align_loss(enc, model, batch, cfg);
  CHECK(sym.contrastive == doctest::Approx(0.5 * (nce(false) + nce(true))).epsilon(1e-5));
}

TEST_CASE("cosine loss hits its analytic values at parallel and orthogonal latents") {
  PoseVqvae model = linear_pose_model(11);

  auto theta = unit_theta(5, 10.0f);  // pose latent e_5
  std::array<float, kLatentDim> text{};
  text[5] = 1.0f;
  CosineLossOut parallel = cosine_text_loss(model, theta.data(), text.data(), false);
  CHECK(!parallel.zero_norm);
  CHECK(parallel.loss == doctest::Approx(-1.0).epsilon(1e-5));
  // The cosine is stationary at perfect alignment, so the whole gradient
  // collapses.
  float gmax = 0.0f;
  for (float g : parallel.grad) gmax = std::max(gmax, std::fabs(g));
  CHECK(gmax < 1e-5f);

  std::array<float, kLatentDim> ortho{};
  ortho[7] = 1.0f;
  CosineLossOut right_angle = cosine_text_loss(model, theta.data(), ortho.data(), false);
  CHECK(right_angle.loss == doctest::Approx(0.0));
  float gsum = 0.0f;
  for (float g : right_angle.grad) gsum += std::fabs(g);
  CHECK(gsum > 1e-4f);

  CosineLossOut squared = cosine_text_loss(model, theta.data(), ortho.data(), true);
  CHECK(squared.loss == doctest::Approx(0.0));
}

TEST_CASE("zero-norm latents are flagged with zero loss and gradient") {
  PoseVqvae model = linear_pose_model(12);
  std::array<float, kThetaDim> zero_theta{};
  std::array<float, kLatentDim> text{};
  text[0] = 1.0f;
  CosineLossOut a = cosine_text_loss(model, zero_theta.data(), text.data(), false);
  CHECK(a.zero_norm);
  CHECK(a.loss == 0.0f);
  for (float g : a.grad) CHECK(g == 0.0f);

  auto theta = unit_theta(0, 10.0f);
  std::array<float, kLatentDim> zero_text{};
  CosineLossOut b = cosine_text_loss(model, theta.data(), zero_text.data(), false);
  CHECK(b.zero_norm);
  CHECK(b.loss == 0.0f);
}

TEST_CASE("cosine loss ignores the scale of the text latent") {
  Rng rng(13);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  PoseParams p = vlfa_test::random_pose(14);
  std::array<float, kLatentDim> text;
  for (auto& v : text) v = rng.normal();

  CosineLossOut base = cosine_text_loss(model, p.theta.data(), text.data(), false, 1.0f);
  CosineLossOut scaled = cosine_text_loss(model, p.theta.data(), text.data(), false, 3.0f);
  CHECK(scaled.loss == doctest::Approx(base.loss).epsilon(1e-5));
  for (int i = 0; i < kThetaDim; ++i) {
    CHECK(scaled.grad[size_t(i)] == doctest::Approx(base.grad[size_t(i)]).epsilon(1e-3));
  }

  CosineLossOut sq = cosine_text_loss(model, p.theta.data(), text.data(), true);
  CHECK(sq.loss == doctest::Approx(double(base.loss) * base.loss).epsilon(1e-4));
}

TEST_CASE("text gradient matches central differences over theta") {
  Rng rng(15);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  for (int inst = 0; inst < 5; ++inst) {
    PoseParams p = vlfa_test::random_pose(16 + uint64_t(inst));
    std::array<float, kLatentDim> text;
    for (auto& v : text) v = rng.normal();
    CosineLossOut out = cosine_text_loss(model, p.theta.data(), text.data(), false);
    REQUIRE(!out.zero_norm);

    const float h = 1e-3f;
    double diff_sq = 0.0, g_sq = 0.0, fd_sq = 0.0;
    for (int i = 0; i < kThetaDim; ++i) {
      auto up = p.theta, down = p.theta;
      up[size_t(i)] += h;
      down[size_t(i)] -= h;
      float lu = cosine_text_loss(model, up.data(), text.data(), false).loss;
      float ld = cosine_text_loss(model, down.data(), text.data(), false).loss;
      float fd = (lu - ld) / (2.0f * h);
      diff_sq += double(out.grad[size_t(i)] - fd) * double(out.grad[size_t(i)] - fd);
      g_sq += double(out.grad[size_t(i)]) * double(out.grad[size_t(i)]);
      fd_sq += double(fd) * double(fd);
    }
    double denom = std::max({std::sqrt(g_sq), std::sqrt(fd_sq), 1e-4});
    CHECK(std::sqrt(diff_sq) / denom < 1e-3);
  }
}

TEST_CASE("cosine loss refuses to run without gradients or with a live model") {
  Rng rng(20);
  PoseVqvae frozen = make_vqvae(rng, 0.25f);
  freeze_vqvae(frozen);
  PoseParams p = vlfa_test::random_pose(21);
  std::array<float, kLatentDim> text{};
  text[0] = 1.0f;
  {
    NoGradGuard ng;
    CHECK_THROWS_AS(cosine_text_loss(frozen, p.theta.data(), text.data(), false), ContractError);
  }
  PoseVqvae live = make_vqvae(rng, 0.25f);
  CHECK_THROWS_AS(cosine_text_loss(live, p.theta.data(), text.data(), false), ContractError);
}

TEST_CASE("one alignment epoch runs with finite loss") {
  Rng rng(22);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  auto corpus = scene_corpus(23, 64);
  AlignConfig cfg;
  cfg.epochs = 1;
  Rng tr(24);
  AlignTrainReport report;
  train_alignment(corpus, model, cfg, tr, &report);
  REQUIRE(report.epoch_loss.size() == 1);
  CHECK(std::isfinite(report.epoch_loss[0]));
  CHECK(report.retrieval >= 0.0f);
  CHECK(report.retrieval <= 1.0f);
}

TEST_CASE("alignment training rejects a corpus smaller than one batch") {
  Rng rng(25);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  auto corpus = scene_corpus(26, 8);
  AlignConfig cfg;
  Rng tr(27);
  CHECK_THROWS_AS(train_alignment(corpus, model, cfg, tr), ContractError);
}

TEST_CASE("same seed trains identical text weights") {
  Rng rng(28);
  PoseVqvae model = make_vqvae(rng, 0.25f);
  freeze_vqvae(model);
  auto corpus = scene_corpus(29, 64);
  AlignConfig cfg;
  cfg.epochs = 2;
  Rng t1(30), t2(30);
  TextEncoder a = train_alignment(corpus, model, cfg, t1);
  TextEncoder b = train_alignment(corpus, model, cfg, t2);
  bool same = true;
  for (size_t i = 0; i < a.token_table.value().data.size(); ++i) {
    same = same && a.token_table.value().data[i] == b.token_table.value().data[i];
  }
  CHECK(same);
}

TEST_CASE("trained alignment retrieves held-out poses well above chance") {
  auto train_set = scene_corpus(32, 2400);
  auto held_out = scene_corpus(33, 640);
  VqvaeConfig vcfg;
  Rng vr(31);
  PoseVqvae vq = train_vqvae(train_set, BodyTemplate::canonical(), vcfg, vr);
  freeze_vqvae(vq);

  AlignConfig cfg;
  cfg.epochs = 60;
  Rng tr(34);
  AlignTrainReport report;
  TextEncoder enc = train_alignment(train_set, vq, cfg, tr, &report);
  CHECK(report.retrieval > 0.10f);

  // The rule-based descriptions pin down only a slice of the articulation, so
  // top-1 at groups of 32 lands far above the 3.1% chance rate without
  // approaching a perfect match.
  float held_ret = retrieval_top1(enc, vq, held_out, 32, 35);
  MESSAGE("held-out retrieval ", held_ret);
  CHECK(held_ret > 0.08f);

  auto unit = [](std::array<float, kLatentDim> v) {
    double n2 = 0.0;
    for (float x : v) n2 += double(x) * x;
    double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
    std::array<double, kLatentDim> out;
    for (int i = 0; i < kLatentDim; ++i) out[size_t(i)] = double(v[size_t(i)]) * inv;
    return out;
  };

  // Matched pairs beat the off-diagonal mean similarity on held-out batches.
  int n = 64;
  std::vector<std::array<double, kLatentDim>> zp, zt;
  for (int i = 0; i < n; ++i) {
    zp.push_back(unit(encode_values(vq, held_out[size_t(i)].gt_params.theta.data())));
    zt.push_back(unit(text_latent_values(enc, held_out[size_t(i)].tokens)));
  }
  double diag = 0.0, off = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double d = 0.0;
      for (int k = 0; k < kLatentDim; ++k) d += zp[size_t(i)][size_t(k)] * zt[size_t(j)][size_t(k)];
      if (i == j) {
        diag += d;
      } else {
        off += d;
      }
    }
  }
  diag /= n;
  off /= double(n) * (n - 1);
  CHECK(diag > off);

  // Scenes sharing a full token set sit closer in pose latent space than the
  // average pair.
  std::vector<std::array<double, kLatentDim>> z;
  std::map<std::vector<int>, std::vector<int>> by_tokens;
  for (int i = 0; i < int(train_set.size()); ++i) {
    z.push_back(unit(encode_values(vq, train_set[size_t(i)].gt_params.theta.data())));
    auto key = train_set[size_t(i)].tokens;
    std::sort(key.begin(), key.end());
    by_tokens[key].push_back(i);
  }
  auto cosz = [&](int i, int j) {
    double d = 0.0;
    for (int k = 0; k < kLatentDim; ++k) d += z[size_t(i)][size_t(k)] * z[size_t(j)][size_t(k)];
    return d;
  };
  double same_acc = 0.0, all_acc = 0.0;
  long same_n = 0, all_n = 0;
  for (int i = 0; i < int(train_set.size()); ++i) {
    for (int j = i + 1; j < int(train_set.size()); ++j) {
      all_acc += cosz(i, j);
      ++all_n;
    }
  }
  for (const auto& [key, ids] : by_tokens) {
    for (size_t a = 0; a < ids.size(); ++a) {
      for (size_t b = a + 1; b < ids.size(); ++b) {
        same_acc += cosz(ids[int(a)], ids[int(b)]);
        ++same_n;
      }
    }
  }
  REQUIRE(same_n >= 50);
  CHECK(same_acc / double(same_n) > all_acc / double(all_n));

  // Disjoint token sets land measurably apart in text latent space, while
  // identical sets collapse to the same point.
  double disjoint_acc = 0.0;
  long disjoint_n = 0;
  for (int i = 0; i < n; ++i) {
    auto ki = held_out[size_t(i)].tokens;
    std::sort(ki.begin(), ki.end());
    for (int j = i + 1; j < n; ++j) {
      auto kj = held_out[size_t(j)].tokens;
      std::sort(kj.begin(), kj.end());
      std::vector<int> inter;
      std::set_intersection(ki.begin(), ki.end(), kj.begin(), kj.end(),
                            std::back_inserter(inter));
      if (!inter.empty()) continue;
      double d = 0.0;
      for (int k = 0; k < kLatentDim; ++k) d += zt[size_t(i)][size_t(k)] * zt[size_t(j)][size_t(k)];
      disjoint_acc += d;
      ++disjoint_n;
    }
  }
  if (disjoint_n > 0) CHECK(disjoint_acc / double(disjoint_n) < 0.99);
}

TEST_CASE("checkpoint round trip preserves the text encoder") {
  Rng rng(37);
  TextEncoder enc = make_text_encoder(rng, 0.11f);
  Checkpoint ck = text_encoder_checkpoint(enc);
  CHECK(ck.module == "text_align");
  TextEncoder back = text_encoder_from_checkpoint(ck);
  CHECK(back.tau == doctest::Approx(0.11f));
  auto za = text_latent_values(enc, {2, 8, 3});
  auto zb = text_latent_values(back, {2, 8, 3});
  bool same = true;
  for (int i = 0; i < kLatentDim; ++i) same = same && za[size_t(i)] == zb[size_t(i)];
  CHECK(same);

  Checkpoint wrong;
  wrong.module = "vqvae";
  CHECK_THROWS_AS(text_encoder_from_checkpoint(wrong), IntegrityError);
}
