#pragma once

#include <string>
#include <vector>

#include "vlfa/body_model.hpp"
#include "vlfa/camera.hpp"
#include "vlfa/rng.hpp"

namespace vlfa {

// Fixed description vocabulary. Token ids are stable: they are the index in
// this table, and serialized corpora store the strings.
class DescriptionVocab {
 public:
  static const DescriptionVocab& instance();
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // VocabularyError on unknown tokens

 private:
  DescriptionVocab();
  std::vector<std::string> tokens_;
};

struct NoiseConfig {
  float sigma_px = 3.0f;
  float p_occ = 0.15f;
};

struct SceneRecord {
  int id = 0;
  PoseParams gt_params;
  Camera camera;
  Keypoints2D obs_keypoints;
  float bbox[4] = {0, 0, 0, 0};  // min u, min v, width, height; may exceed the image
  std::array<float, 64> feature_vec{};
  std::vector<int> tokens;
};

// Draws a plausible pose: per-joint rotations inside articulation limits,
// shape within [-2, 2], translation in front of the camera. A zero draw from
// every rng call yields the rest pose at (0, 0, 3).
PoseParams sample_pose(RngBase& rng);

struct Observation {
  Keypoints2D kp;
  float bbox[4] = {0, 0, 0, 0};
  std::array<float, 64> feature_vec{};
};

// Projects ground truth, perturbs with pixel noise, occludes joints with
// probability p_occ (confidence 0, uv snapped to the box centre), and packs
// the 64-float feature vector fed to the initial regressor.
Observation observe(const PoseParams& gt, const Camera& cam, const BodyTemplate& tmpl,
                    const NoiseConfig& noise, RngBase& rng);

// Rule-based pose description on the canonical body (shape zeroed, root at
// the origin, root yaw removed): one token per body part plus optional
// stance, at most 12 tokens, deterministic.
std::vector<int> describe(const PoseParams& p, const BodyTemplate& tmpl);

std::vector<SceneRecord> gen_corpus(uint64_t seed, int count, const Camera& cam,
                                    const BodyTemplate& tmpl, const NoiseConfig& noise);

// One JSON object per line. Tokens serialize as strings and are validated
// against the vocabulary on load.
void save_corpus(const std::string& path, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> load_corpus(const std::string& path);

}  // namespace vlfa
