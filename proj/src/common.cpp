#include "vlfa/common.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <vector>

namespace vlfa {

namespace {

std::atomic<int> g_workers{0};
thread_local bool t_in_worker = false;

int detect_workers() {
  if (const char* env = std::getenv("VLFA_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace

int worker_count() {
  int n = g_workers.load(std::memory_order_relaxed);
  if (n == 0) {
    n = detect_workers();
    g_workers.store(n, std::memory_order_relaxed);
  }
  return n;
}

void set_worker_count(int n) {
  if (n < 1) throw ContractError("set_worker_count: need at least one worker");
  g_workers.store(n, std::memory_order_relaxed);
}

bool in_parallel_region() { return t_in_worker; }

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int workers = worker_count();
  if (workers <= 1 || n == 1 || t_in_worker) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = n;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<bool> failed{false};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      t_in_worker = true;
      // Static block partition keeps the work assignment deterministic.
      int lo = static_cast<int>(static_cast<long long>(n) * w / workers);
      int hi = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (const std::exception& e) {
        if (!failed.exchange(true)) {
          std::fprintf(stderr, "parallel_for worker failed: %s\n", e.what());
        }
      }
      t_in_worker = false;
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) throw NumericError("parallel_for: a worker threw; see stderr");
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t fnv1a64(std::string_view s, uint64_t h) { return fnv1a64(s.data(), s.size(), h); }

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<size_t>(got), h);
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace vlfa
