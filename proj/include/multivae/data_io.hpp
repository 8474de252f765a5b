#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multivae/model.hpp"
#include "multivae/scenegen.hpp"

namespace multivae::data {

/// Typed binary blob: magic "MMVAEBLB", u8 dtype code (1=f32, 2=u16, 3=u8),
/// u8 rank, rank x u32 little-endian shape, then row-major payload.
enum class BlobType : std::uint8_t { f32 = 1, u16 = 2, u8 = 3 };

struct Blob {
  BlobType dtype;
  std::vector<Index> shape;
  std::vector<float> f32;
  std::vector<std::uint16_t> u16;
  std::vector<std::uint8_t> u8;

  Index numel() const { return Tensor::count(shape); }
};

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

struct Manifest {
  scene::DatasetConfig config;
  std::uint64_t seed = 0;
  Index n = 0;
  std::vector<std::string> vocabulary;
  scene::Thresholds thresholds;
  Index t_max = kDefaultTMax;
  Index l_max = kDefaultLMax;
  Index image_size = kImageSize;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
};

/// Generates n seeded episodes into out_dir (manifest.json + one blob per
/// modality) and returns the manifest. Byte-for-byte reproducible from
/// (config, seed); every written demonstration passes check_success.
Manifest generate_dataset(const scene::DatasetConfig& config, Index n, std::uint64_t seed,
                          const std::filesystem::path& out_dir);

struct Dataset {
  Manifest manifest;
  std::vector<model::Episode> episodes;
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace multivae::data
