#include "vlfa/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vlfa {

namespace {

constexpr char kMagic[5] = {'V', 'L', 'F', 'A', '1'};

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void Checkpoint::add(const std::string& name, const Array& a) {
  if (find(name)) throw ContractError("checkpoint already has a tensor named " + name);
  tensors_.emplace_back(name, a);
}

const Array* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, a] : tensors_) {
    if (n == name) return &a;
  }
  return nullptr;
}

const Array& Checkpoint::get(const std::string& name) const {
  const Array* a = find(name);
  if (!a) throw IntegrityError("checkpoint has no tensor named " + name);
  return *a;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json manifest;
  manifest["module"] = module;
  manifest["meta"] = meta;
  nlohmann::json dir = nlohmann::json::array();
  long long offset = 0;
  for (const auto& [name, a] : tensors_) {
    if (!a.finite()) throw NumericError("refusing to save non-finite tensor " + name);
    dir.push_back({{"name", name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.numel();
  }
  manifest["tensors"] = dir;
  std::string mjson = manifest.dump();

  std::string blob;
  blob.reserve(9 + mjson.size() + static_cast<size_t>(offset) * 4);
  blob.append(kMagic, sizeof(kMagic));
  put_u32le(blob, static_cast<uint32_t>(mjson.size()));
  blob += mjson;
  for (const auto& [name, a] : tensors_) {
    static_assert(sizeof(float) == 4);
    size_t at = blob.size();
    blob.resize(at + a.data.size() * 4);
    std::memcpy(blob.data() + at, a.data.data(), a.data.size() * 4);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw FormatError("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (blob.size() < 9 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path + ": not a VLFA1 checkpoint");
  }
  uint32_t mlen = get_u32le(reinterpret_cast<const unsigned char*>(blob.data() + 5));
  if (9ull + mlen > blob.size()) {
    throw FormatError(path + ": manifest extends past end of file");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(blob.substr(9, mlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  }

  Checkpoint ck;
  const char* payload = blob.data() + 9 + mlen;
  size_t payload_floats = (blob.size() - 9 - mlen) / 4;
  if ((blob.size() - 9 - mlen) % 4 != 0) {
    throw IntegrityError(path + ": payload is not a whole number of float32 values");
  }
  try {
    ck.module = manifest.at("module").get<std::string>();
    ck.meta = manifest.value("meta", nlohmann::json::object());
    long long expected = 0;
    for (const auto& e : manifest.at("tensors")) {
      std::string name = e.at("name").get<std::string>();
      Shape shape = e.at("shape").get<Shape>();
      long long off = e.at("offset").get<long long>();
      int n = shape_numel(shape);
      if (off != expected) {
        throw IntegrityError(path + ": tensor " + name + " has offset " + std::to_string(off) +
                             ", expected " + std::to_string(expected));
      }
      if (static_cast<size_t>(off + n) > payload_floats) {
        throw IntegrityError(path + ": truncated payload, tensor " + name + " needs floats [" +
                             std::to_string(off) + ", " + std::to_string(off + n) + ") of " +
                             std::to_string(payload_floats));
      }
      Array a(shape);
      std::memcpy(a.data.data(), payload + off * 4, static_cast<size_t>(n) * 4);
      if (!a.finite()) {
        throw IntegrityError(path + ": non-finite values in tensor " + name);
      }
      ck.tensors_.emplace_back(std::move(name), std::move(a));
      expected = off + n;
    }
    if (static_cast<size_t>(expected) != payload_floats) {
      throw IntegrityError(path + ": payload has " + std::to_string(payload_floats) +
                           " floats but the manifest accounts for " + std::to_string(expected));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad manifest: " + e.what());
  }
  return ck;
}

}  // namespace vlfa
