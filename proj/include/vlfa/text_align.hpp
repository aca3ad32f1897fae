#pragma once

#include "vlfa/vqvae.hpp"

namespace vlfa {

inline constexpr int kTokenEmbedDim = 128;

// Learned text side of the latent space: an embedding row per vocabulary
// token, mean pooling, and a projector into the 64-d pose latent space.
struct TextEncoder {
  Tensor token_table;  // [vocab, 128]
  Mlp e_t;             // 128 -> 128 -> 64
  float tau = 0.07f;
};

TextEncoder make_text_encoder(RngBase& rng, float tau);

// Mean of the embedding rows for a token list; [128]. Empty token lists are
// a ContractError, unknown ids a VocabularyError.
Tensor pool_tokens(const TextEncoder& enc, const std::vector<int>& tokens);

Tensor text_latent_graph(const TextEncoder& enc, const std::vector<int>& tokens);
std::array<float, kLatentDim> text_latent_values(const TextEncoder& enc,
                                                 const std::vector<int>& tokens);

struct AlignLossOut {
  Tensor loss;
  float contrastive = 0.0f;
  float rec = 0.0f;
};

// Batch alignment objective: temperature-scaled InfoNCE between normalized
// pose latents (through the frozen pose encoder) and text latents, plus
// reconstruction of the rotations from the text latent through the frozen
// pose decoder. cfg.symmetric adds the text->pose direction. A single-scene
// batch has no negatives, so the contrastive term is skipped with a warning.
AlignLossOut align_loss(const TextEncoder& enc, const PoseVqvae& frozen,
                        const std::vector<const SceneRecord*>& batch, const AlignConfig& cfg);

struct AlignTrainReport {
  std::vector<float> epoch_loss;
  float retrieval = 0.0f;  // top-1 at groups of 32 on the training corpus
};

TextEncoder train_alignment(const std::vector<SceneRecord>& corpus, const PoseVqvae& frozen,
                            const AlignConfig& cfg, RngBase& rng,
                            AlignTrainReport* report = nullptr);

// Fraction of scenes whose own pose latent is the nearest (by cosine) to
// their text latent within shuffled groups of `group` scenes.
float retrieval_top1(const TextEncoder& enc, const PoseVqvae& vq,
                     const std::vector<SceneRecord>& records, int group, uint64_t seed);

struct CosineLossOut {
  float loss = 0.0f;
  std::array<float, kThetaDim> grad{};
  bool zero_norm = false;
};

// Text-pose agreement for guidance: loss = -cos(E_p(theta), z_text), or
// +cos^2 when squared is set, with the gradient taken in theta. A zero-norm
// latent on either side yields zero loss and gradient plus the flag.
// text_scale multiplies z_text (the loss is invariant to it; test hook).
CosineLossOut cosine_text_loss(const PoseVqvae& frozen, const float* theta144,
                               const float* z_text64, bool squared, float text_scale = 1.0f);

// Token-list convenience wrapper over cosine_text_loss.
CosineLossOut cosine_loss(const PoseVqvae& frozen, const TextEncoder& enc, const float* theta144,
                          const std::vector<int>& tokens, bool squared = false);

Checkpoint text_encoder_checkpoint(const TextEncoder& enc);
TextEncoder text_encoder_from_checkpoint(const Checkpoint& ck);

}  // namespace vlfa
