#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "agnet/data.hpp"
#include "agnet/model.hpp"

namespace agnet {

// N x D row-major feature matrix with one record per row.
struct FeatureSet {
  int dim = 0;
  std::vector<float> values;
  std::vector<VehicleRecord> meta;

  std::size_t size() const { return meta.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
  }
  void validate() const;
  FeatureSet select(std::span<const std::size_t> rows) const;
};

struct FusionConfig {
  double alpha = 0.5;  // category half is scaled by (1 - alpha)
  void validate() const;
};

// Which embedding(s) form the retrieval descriptor.
enum class FeatureMode { kFused, kCategory, kAttribute };

FeatureMode parse_feature_mode(const std::string& name);
std::string to_string(FeatureMode mode);

// [attr_embedding, (1 - alpha) * cat_embedding]
std::vector<float> fuse_features(const BranchOutputs<float>& outputs, const FusionConfig& fusion);

FeatureSet extract_features(const Model& model, std::span<const Tensor<float>> images,
                            std::span<const VehicleRecord> meta, const FusionConfig& fusion,
                            FeatureMode mode = FeatureMode::kFused);

// Q x G Euclidean distances, row-major, computed in double.
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t q, std::size_t g) const { return values[q * cols + g]; }
};

DistanceMatrix distance_matrix(const FeatureSet& queries, const FeatureSet& gallery,
                               bool l2_normalize = false);

// true = usable; gallery rows sharing both identity and camera with the query
// are junk.
std::vector<bool> filter_junk(const VehicleRecord& query, std::span<const VehicleRecord> gallery);

// Sum over ranks k of precision@k * rel(k), divided by n_gt.
double average_precision(const std::vector<bool>& ranked_relevance, int n_gt);

double mean_ap(std::span<const double> per_query_ap);

// cmc[k] = fraction of queries whose first match is at rank <= k + 1.
std::vector<double> cmc_curve(std::span<const int> first_match_ranks, int max_rank);

inline constexpr std::array<int, 4> kVehicleIdGallerySizes = {800, 1600, 2400, 3200};

struct ProtocolSplit {
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> gallery_rows;
};

// Draws gallery_size identities, one random image of each into the gallery;
// every other image of those identities becomes a probe.
ProtocolSplit vehicleid_protocol(std::span<const VehicleRecord> test_records, int gallery_size,
                                 std::uint64_t seed);

enum class Protocol { kVeRi, kVehicleId };

Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol protocol);

struct EvalOptions {
  Protocol protocol = Protocol::kVeRi;
  bool l2_normalize = false;
  std::uint64_t seed = 0;
  bool keep_rankings = false;
};

struct EvalReport {
  double map = 0.0;
  std::vector<double> cmc;
  std::vector<double> per_query_ap;      // valid queries only
  std::vector<std::size_t> query_index;  // query row of each per_query_ap entry
  std::vector<int> first_match_rank;     // aligned with per_query_ap
  std::vector<std::vector<std::size_t>> rankings;  // usable gallery rows, best first
  std::string protocol;
  std::uint64_t seed = 0;
  int num_queries = 0;  // queries entering the mean
  int num_excluded = 0;  // queries without usable ground truth
  int num_gallery = 0;

  double rank(int k) const { return k >= 1 && static_cast<std::size_t>(k) <= cmc.size() ? cmc[k - 1] : 1.0; }
};

// Gallery rows ordered by ascending distance, ties by row index.
std::vector<std::size_t> rank_gallery(std::span<const double> distances);

EvalReport evaluate(const FeatureSet& queries, const FeatureSet& gallery, const EvalOptions& options);

// "AGNF" | u32 version=1 | u32 N | u32 D | N*D f32, little-endian. The
// companion CSV (same stem, .csv) lists the records in row order.
inline constexpr std::uint32_t kFeatureFileVersion = 1;
void write_features(const std::filesystem::path& path, const FeatureSet& features);
FeatureSet read_features(const std::filesystem::path& path);
std::filesystem::path companion_manifest(const std::filesystem::path& feature_path);

void write_report_text(const std::filesystem::path& path, const EvalReport& report);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

}  // namespace agnet
