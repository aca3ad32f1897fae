#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vlfa {

// Error taxonomy. Every failure mode surfaces as one of these so callers can
// distinguish caller bugs (Dimension/Contract), bad data (Domain/Degeneracy/
// BehindCamera/Vocabulary), bad files (Format/Integrity/Config) and numeric
// blow-ups (Numeric).
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegeneracyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BehindCameraError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VocabularyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Worker pool size: VLFA_THREADS if set, else hardware_concurrency.
int worker_count();
void set_worker_count(int n);

// Runs fn(i) for i in [0, n). Splits the range over the worker pool; falls
// back to a plain loop when already inside a parallel region or when the
// pool has a single worker. fn must not touch shared mutable state.
void parallel_for(int n, const std::function<void(int)>& fn);
bool in_parallel_region();

// FNV-1a, used for seed derivation and file hashing.
uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a64_file(const std::string& path);

std::string hex64(uint64_t v);

}  // namespace vlfa
