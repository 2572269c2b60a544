#include "fefa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fefa::nn {
namespace {

void put_le64(std::vector<char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& a : ckpt.arrays) {
    if (numel(a.shape) != a.data.size())
      throw std::invalid_argument("checkpoint entry '" + a.name + "' has inconsistent shape");
    entries.push_back({{"name", a.name}, {"shape", a.shape}, {"dtype", "float64"}, {"offset", blob.size()}});
    for (double v : a.data) put_le64(blob, v);
  }
  nlohmann::json manifest = {{"format", "fefa-checkpoint"},
                             {"version", 1},
                             {"blob", kBlobFile},
                             {"byte_order", "little"},
                             {"entries", entries},
                             {"metadata", ckpt.metadata}};

  // Blob first so a complete manifest always points at a complete blob.
  {
    std::ofstream out(dir / kBlobFile, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / kBlobFile).string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / kManifestFile).string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream min(dir / kManifestFile);
  if (!min) throw std::runtime_error("cannot open checkpoint manifest " + (dir / kManifestFile).string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "fefa-checkpoint")
    throw std::runtime_error("not a fefa checkpoint: " + dir.string());

  const auto blob_path = dir / manifest.value("blob", std::string(kBlobFile));
  std::ifstream bin(blob_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open checkpoint blob " + blob_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& e : manifest.at("entries")) {
    if (e.value("dtype", "") != "float64")
      throw std::runtime_error("unsupported checkpoint dtype for '" + e.value("name", "") + "'");
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t n = numel(a.shape);
    if (offset + 8 * n > blob.size())
      throw std::runtime_error("checkpoint entry '" + a.name + "' exceeds blob size");
    a.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.data[i] = get_le64(blob.data() + offset + 8 * i);
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace fefa::nn
