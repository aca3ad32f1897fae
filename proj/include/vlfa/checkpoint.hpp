#pragma once

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "vlfa/tensor.hpp"

namespace vlfa {

// Binary weight container: a 5-byte magic "VLFA1", a little-endian u32 with
// the manifest length, the manifest JSON (module name, tensor directory,
// metadata) and a packed little-endian float32 payload.
class Checkpoint {
 public:
  std::string module;
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const Array& a);
  const Array* find(const std::string& name) const;
  const Array& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Array>>& tensors() const { return tensors_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Array>> tensors_;
};

}  // namespace vlfa
