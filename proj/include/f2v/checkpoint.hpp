#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "f2v/nn.hpp"

namespace f2v {

/// Archive layout: magic line, 8-byte little-endian header length, JSON
/// header, then the float64 little-endian arrays back to back. The header's
/// "tensors" list gives name, element offset and count of each array.
inline constexpr char kCheckpointMagic[] = "FUNDUS2VIDEO-CKPT-v1\n";

struct NamedArray {
  std::string name;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta;  // everything but the tensor table
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies arrays into parameters by name. Missing names or size mismatches
/// raise LoadError.
void restore_params(const Checkpoint& ckpt, const nn::ParamRefs& params, const std::string& context);
void append_params(Checkpoint& ckpt, const nn::ParamRefs& params);

/// Lower-case hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace f2v
