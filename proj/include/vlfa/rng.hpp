#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "vlfa/common.hpp"

namespace vlfa {

// Random source interface. All samplers take an RngBase& so tests can swap in
// deterministic stubs (e.g. one that returns zero from every draw).
class RngBase {
 public:
  virtual ~RngBase() = default;
  virtual float uniform(float lo, float hi) = 0;
  virtual float normal() = 0;
  virtual float u01() = 0;
  virtual uint64_t next_u64() = 0;

  // Uniform integer in [0, n).
  int uniform_int(int n);
  void shuffle(std::vector<int>& v);
};

// mt19937_64 plus Box-Muller normals. Streams are identified by the seed they
// were constructed with; derive() mixes a name and an index into a child seed
// so per-scene / per-stage streams are independent of draw order elsewhere.
class Rng final : public RngBase {
 public:
  explicit Rng(uint64_t seed);

  float uniform(float lo, float hi) override;
  float normal() override;
  float u01() override;
  uint64_t next_u64() override;

  Rng derive(std::string_view name, uint64_t index = 0) const;
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

// Stub returning zero from every draw. Samplers are written so that a zero
// draw selects their documented neutral value.
class ZeroRng final : public RngBase {
 public:
  float uniform(float, float) override { return 0.0f; }
  float normal() override { return 0.0f; }
  float u01() override { return 0.0f; }
  uint64_t next_u64() override { return 0; }
};

}  // namespace vlfa
