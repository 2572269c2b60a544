#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fefa/tensor.hpp"

namespace fefa::nn {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// A checkpoint directory holds `manifest.json` (name, shape, dtype, byte
/// offset per entry plus free-form metadata) and `params.bin`, one
/// little-endian float64 blob.
struct Checkpoint {
  std::vector<NamedArray> arrays;
  nlohmann::json metadata = nlohmann::json::object();

  const NamedArray* find(const std::string& name) const;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "params.bin";

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace fefa::nn
