#include "f2v/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <openssl/evp.h>

namespace f2v {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

using nlohmann::json;

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header = ckpt.meta;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    table.push_back({{"name", a.name}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size();
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : ckpt.arrays)
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    if (!out) throw IoError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::string magic(sizeof(kCheckpointMagic) - 1, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic)
    throw LoadError("not a Fundus2Video checkpoint (bad magic): " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 30)) throw LoadError("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("truncated checkpoint header: " + path.string());

  Checkpoint ckpt;
  try {
    ckpt.meta = json::parse(text);
  } catch (const json::exception& e) {
    throw LoadError("checkpoint header is not valid JSON (" + std::string(e.what()) + "): " + path.string());
  }
  const json table = ckpt.meta.value("tensors", json::array());
  ckpt.meta.erase("tensors");
  for (const auto& entry : table) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.values.resize(entry.at("count").get<std::size_t>());
    in.read(reinterpret_cast<char*>(a.values.data()),
            static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    if (!in) throw LoadError("truncated checkpoint payload at '" + a.name + "': " + path.string());
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, const nn::ParamRefs& params, const std::string& context) {
  std::unordered_map<std::string, const NamedArray*> index;
  for (const auto& a : ckpt.arrays) index.emplace(a.name, &a);
  for (auto* p : params) {
    auto it = index.find(p->name);
    if (it == index.end()) throw LoadError(context + ": checkpoint lacks parameter '" + p->name + "'");
    if (it->second->values.size() != p->value.size())
      throw LoadError(context + ": parameter '" + p->name + "' has " +
                      std::to_string(it->second->values.size()) + " values, architecture expects " +
                      std::to_string(p->value.size()));
    p->value = it->second->values;
  }
}

void append_params(Checkpoint& ckpt, const nn::ParamRefs& params) {
  for (const auto* p : params) ckpt.arrays.push_back({p->name, p->value});
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx, digest, &n);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace f2v
