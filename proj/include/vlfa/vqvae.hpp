#pragma once

#include "vlfa/body_model.hpp"
#include "vlfa/checkpoint.hpp"
#include "vlfa/config.hpp"
#include "vlfa/nn.hpp"
#include "vlfa/scene.hpp"

namespace vlfa {

inline constexpr int kLatentDim = 64;
inline constexpr int kCodebookSize = 512;

// Discrete pose latent space: an encoder to 64-d, a 512-entry codebook kept
// fresh by exponential moving averages, and a decoder back to rotation
// parameters.
struct PoseVqvae {
  Mlp encoder;     // 144 -> 128 -> 64
  Mlp decoder;     // 64 -> 128 -> 144
  Tensor codebook; // [512, 64]
  Array ema_count; // [512]
  Array ema_sum;   // [512, 64]
  float alpha = 0.25f;
};

PoseVqvae make_vqvae(RngBase& rng, float alpha);

// Exact nearest codebook entry by Euclidean distance; ties resolve to the
// lowest index.
int quantize(const float* z, int dim, const Array& codebook);

struct VqLossOut {
  Tensor loss;
  Tensor recon;           // decoded rotations, same arity as the input
  Tensor z;               // continuous encodings [B, 64]
  std::vector<int> codes; // one codebook index per row
};

// Straight-through objective: alpha-weighted commitment |z - sg(q)|^2 plus
// reconstruction |D(q + sg-passthrough) - theta|^2, batch-averaged. theta is
// [144] or [B, 144]. The codebook itself receives no gradient; it moves via
// ema_update.
VqLossOut vq_loss(const PoseVqvae& model, const Tensor& theta, float alpha);

// Moving-average codebook update from one batch of encodings. Codes not
// assigned in the batch are left bit-identical.
void ema_update(PoseVqvae& model, const Array& z_values, const std::vector<int>& codes,
                float decay);

struct VqvaeTrainReport {
  std::vector<float> epoch_loss;
  float perplexity = 0.0f;
  int used_codes = 0;
  int reseeded = 0;
  float recon_mpjpe_quantized_mm = 0.0f;
  float recon_mpjpe_continuous_mm = 0.0f;
};

PoseVqvae train_vqvae(const std::vector<SceneRecord>& corpus, const BodyTemplate& tmpl,
                      const VqvaeConfig& cfg, RngBase& rng, VqvaeTrainReport* report = nullptr);

// Perplexity of a code-usage histogram: exp of its entropy.
float usage_perplexity(const std::vector<long>& counts);

// Value-only helpers.
std::array<float, kLatentDim> encode_values(const PoseVqvae& model, const float* theta144);
std::array<float, kThetaDim> decode_values(const PoseVqvae& model, const float* z64);

void freeze_vqvae(PoseVqvae& model);

Checkpoint vqvae_checkpoint(const PoseVqvae& model);
PoseVqvae vqvae_from_checkpoint(const Checkpoint& ck);

}  // namespace vlfa
