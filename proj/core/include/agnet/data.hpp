#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agnet/losses.hpp"
#include "agnet/tensor.hpp"

namespace agnet {

// One labeled image. color_id / type_id may be kUnlabeled.
struct VehicleRecord {
  std::string image_path;
  int vehicle_id = 0;
  int camera_id = 0;
  int color_id = kUnlabeled;
  int type_id = kUnlabeled;

  Attributes attributes() const { return {color_id, type_id}; }
  friend bool operator==(const VehicleRecord&, const VehicleRecord&) = default;
};

struct Dataset {
  std::vector<VehicleRecord> records;
  int num_identities = 0;
  int num_colors = 0;
  int num_types = 0;
  int num_cameras = 0;

  // Label-space sizes are 1 + max observed label (at least 1).
  static Dataset from_records(std::vector<VehicleRecord> records);

  std::size_t size() const { return records.size(); }
  // Sorted distinct vehicle ids.
  std::vector<int> identities() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

inline constexpr const char* kManifestHeader = "image_path,vehicle_id,camera_id,color_id,type_id";

Dataset load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const VehicleRecord> records);

// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(int x, int y, int channel) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
  }
  std::uint8_t at(int x, int y, int channel) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + channel];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Binary PPM (P6), maxval 255.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// 3 x H x W tensor with values pixel / 255 - 0.5.
Tensor<float> to_tensor(const Image& image);

// Loads every record's image, resolving relative paths against base_dir.
std::vector<Image> load_images(const Dataset& dataset, const std::filesystem::path& base_dir);

struct SyntheticSpec {
  int num_identities = 8;
  int images_per_identity = 4;
  int num_colors = 3;
  int num_types = 2;
  int num_cameras = 4;
  int image_side = 32;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<Image> images;  // aligned with dataset.records
};

// Renders vehicles whose color_id fixes the body hue, type_id the silhouette
// and vehicle_id a 4x4 glyph on the body. Each camera adds a uniform
// brightness offset; noise_std adds per-pixel Gaussian noise.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Brightness shift applied by a camera, in 8-bit units.
int camera_brightness_offset(int camera_id, int num_cameras);

// Writes images/ plus manifest.csv under `dir`.
void write_synthetic(const std::filesystem::path& dir, const SyntheticData& data);

struct PairSample {
  VehicleRecord a;
  VehicleRecord b;
  std::size_t a_index = 0;  // row in the sampled dataset
  std::size_t b_index = 0;
  bool same_id = false;

  PairContext context() const {
    return PairContext{a.vehicle_id, b.vehicle_id, a.attributes(), b.attributes()};
  }
};

std::vector<PairSample> sample_pairs(const Dataset& dataset, int batch_size,
                                     double positive_fraction, std::uint64_t seed);

// Identity-disjoint split; the first dataset holds the training identities.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double train_identity_fraction,
                                             std::uint64_t seed);

}  // namespace agnet
