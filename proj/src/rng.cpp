#include "vlfa/rng.hpp"

#include <cmath>

namespace vlfa {

int RngBase::uniform_int(int n) {
  if (n <= 0) throw ContractError("uniform_int: n must be positive");
  // Rejection sampling avoids modulo bias.
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

void RngBase::shuffle(std::vector<int>& v) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    int j = uniform_int(i + 1);
    std::swap(v[i], v[j]);
  }
}

Rng::Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

uint64_t Rng::next_u64() { return gen_(); }

float Rng::u01() {
  // 53 random bits mapped to [0, 1).
  return static_cast<float>((gen_() >> 11) * 0x1.0p-53);
}

float Rng::uniform(float lo, float hi) {
  if (!(lo <= hi)) throw ContractError("uniform: lo must not exceed hi");
  return lo + (hi - lo) * u01();
}

float Rng::normal() {
  // Box-Muller; u1 is kept away from zero so the log stays finite.
  double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<float>(r * std::cos(2.0 * M_PI * u2));
}

Rng Rng::derive(std::string_view name, uint64_t index) const {
  uint64_t h = fnv1a64(&seed_, sizeof(seed_));
  h = fnv1a64(name, h);
  h = fnv1a64(&index, sizeof(index), h);
  return Rng(h);
}

}  // namespace vlfa
