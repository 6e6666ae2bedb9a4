#include "agnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>

#include "agnet/error.hpp"
#include "binary_io.hpp"

namespace agnet {

namespace fs = std::filesystem;

void FeatureSet::validate() const {
  if (meta.empty()) throw ShapeError("feature set is empty");
  if (dim <= 0) throw ShapeError("feature set has non-positive dimension");
  if (values.size() != meta.size() * static_cast<std::size_t>(dim)) {
    throw ShapeError("feature set: " + std::to_string(values.size()) + " values for " +
                     std::to_string(meta.size()) + " rows of dimension " + std::to_string(dim));
  }
  if (!all_finite<float>(values)) throw NumericError("feature set contains non-finite values");
}

FeatureSet FeatureSet::select(std::span<const std::size_t> rows) const {
  FeatureSet out;
  out.dim = dim;
  out.values.reserve(rows.size() * static_cast<std::size_t>(dim));
  for (std::size_t r : rows) {
    const auto src = row(r);
    out.values.insert(out.values.end(), src.begin(), src.end());
    out.meta.push_back(meta.at(r));
  }
  return out;
}

void FusionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("fusion.alpha must lie in [0, 1]");
}

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "all" || name == "fused") return FeatureMode::kFused;
  if (name == "category" || name == "id") return FeatureMode::kCategory;
  if (name == "attribute" || name == "attr") return FeatureMode::kAttribute;
  throw ConfigError("unknown feature mode '" + name + "' (expected all, category or attribute)");
}

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kFused: return "all";
    case FeatureMode::kCategory: return "category";
    case FeatureMode::kAttribute: return "attribute";
  }
  return "all";
}

std::vector<float> fuse_features(const BranchOutputs<float>& outputs, const FusionConfig& fusion) {
  if (outputs.attr_embedding.size() != outputs.cat_embedding.size()) {
    throw ShapeError("fuse_features: attribute and category embeddings differ in length");
  }
  const auto keep = static_cast<float>(1.0 - fusion.alpha);
  std::vector<float> fused(outputs.attr_embedding);
  fused.reserve(2 * outputs.cat_embedding.size());
  for (float v : outputs.cat_embedding) fused.push_back(v * keep);
  return fused;
}

FeatureSet extract_features(const Model& model, std::span<const Tensor<float>> images,
                            std::span<const VehicleRecord> meta, const FusionConfig& fusion,
                            FeatureMode mode) {
  fusion.validate();
  if (images.size() != meta.size()) {
    throw ShapeError("extract_features: " + std::to_string(images.size()) + " images for " +
                     std::to_string(meta.size()) + " records");
  }
  FeatureSet set;
  const int d = model.config().embedding_dim;
  set.dim = mode == FeatureMode::kFused ? 2 * d : d;
  set.values.reserve(images.size() * static_cast<std::size_t>(set.dim));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const BranchOutputs<float> out = model.forward_branch(images[i]);
    std::vector<float> v;
    switch (mode) {
      case FeatureMode::kFused: v = fuse_features(out, fusion); break;
      case FeatureMode::kCategory: v = out.cat_embedding; break;
      case FeatureMode::kAttribute: v = out.attr_embedding; break;
    }
    set.values.insert(set.values.end(), v.begin(), v.end());
    set.meta.push_back(meta[i]);
  }
  return set;
}

DistanceMatrix distance_matrix(const FeatureSet& queries, const FeatureSet& gallery,
                               bool l2_normalize) {
  if (queries.dim != gallery.dim) {
    throw ShapeError("distance_matrix: query dim " + std::to_string(queries.dim) +
                     " vs gallery dim " + std::to_string(gallery.dim));
  }
  const auto dim = static_cast<std::size_t>(queries.dim);
  auto prepared = [&](const FeatureSet& set) {
    std::vector<double> out(set.values.begin(), set.values.end());
    if (l2_normalize) {
      for (std::size_t r = 0; r < set.size(); ++r) {
        double norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) norm += out[r * dim + j] * out[r * dim + j];
        norm = std::sqrt(norm);
        if (norm > 0.0) {
          for (std::size_t j = 0; j < dim; ++j) out[r * dim + j] /= norm;
        }
      }
    }
    return out;
  };
  const std::vector<double> q = prepared(queries);
  const std::vector<double> g = prepared(gallery);
  DistanceMatrix m{queries.size(), gallery.size(), std::vector<double>(queries.size() * gallery.size())};
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      double sum = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = q[i * dim + k] - g[j * dim + k];
        sum += diff * diff;
      }
      m.values[i * m.cols + j] = std::sqrt(sum);
    }
  }
  return m;
}

std::vector<bool> filter_junk(const VehicleRecord& query, std::span<const VehicleRecord> gallery) {
  std::vector<bool> usable(gallery.size(), true);
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].vehicle_id == query.vehicle_id && gallery[i].camera_id == query.camera_id) {
      usable[i] = false;
    }
  }
  return usable;
}

double average_precision(const std::vector<bool>& ranked_relevance, int n_gt) {
  if (n_gt <= 0) throw ProtocolError("average_precision: n_gt must be positive");
  if (ranked_relevance.empty()) throw ProtocolError("average_precision: empty ranking");
  double sum = 0.0;
  int hits = 0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (!ranked_relevance[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits > n_gt) throw ProtocolError("average_precision: more relevant results than n_gt");
  return sum / n_gt;
}

double mean_ap(std::span<const double> per_query_ap) {
  if (per_query_ap.empty()) throw ProtocolError("mean_ap: no valid queries");
  return std::accumulate(per_query_ap.begin(), per_query_ap.end(), 0.0) /
         static_cast<double>(per_query_ap.size());
}

std::vector<double> cmc_curve(std::span<const int> first_match_ranks, int max_rank) {
  if (first_match_ranks.empty()) throw ProtocolError("cmc_curve: no queries");
  if (max_rank < 1) throw ProtocolError("cmc_curve: max_rank must be >= 1");
  std::vector<double> counts(static_cast<std::size_t>(max_rank), 0.0);
  for (int r : first_match_ranks) {
    if (r < 1) throw ProtocolError("cmc_curve: ranks are 1-based");
    if (r <= max_rank) counts[static_cast<std::size_t>(r - 1)] += 1.0;
  }
  const auto n = static_cast<double>(first_match_ranks.size());
  std::vector<double> cmc(counts.size());
  double running = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    running += counts[k];
    cmc[k] = running / n;
  }
  return cmc;
}

ProtocolSplit vehicleid_protocol(std::span<const VehicleRecord> test_records, int gallery_size,
                                 std::uint64_t seed) {
  if (gallery_size < 1) throw ProtocolError("vehicleid_protocol: gallery_size must be >= 1");
  std::map<int, std::vector<std::size_t>> rows_by_id;
  for (std::size_t i = 0; i < test_records.size(); ++i) rows_by_id[test_records[i].vehicle_id].push_back(i);
  if (rows_by_id.size() < static_cast<std::size_t>(gallery_size)) {
    throw ProtocolError("vehicleid_protocol: gallery of " + std::to_string(gallery_size) +
                        " needs that many identities, test set has " +
                        std::to_string(rows_by_id.size()));
  }
  std::vector<int> ids;
  for (const auto& entry : rows_by_id) ids.push_back(entry.first);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(gallery_size));
  std::sort(ids.begin(), ids.end());

  ProtocolSplit split;
  std::vector<bool> is_gallery(test_records.size(), false);
  std::vector<bool> chosen(test_records.size(), false);
  for (int id : ids) {
    const auto& rows = rows_by_id[id];
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng);
    split.gallery_rows.push_back(rows[pick]);
    is_gallery[rows[pick]] = true;
    for (std::size_t r : rows) chosen[r] = true;
  }
  for (std::size_t i = 0; i < test_records.size(); ++i) {
    if (chosen[i] && !is_gallery[i]) split.query_rows.push_back(i);
  }
  return split;
}

Protocol parse_protocol(const std::string& name) {
  if (name == "veri") return Protocol::kVeRi;
  if (name == "vehicleid") return Protocol::kVehicleId;
  throw ConfigError("unknown protocol '" + name + "' (expected veri or vehicleid)");
}

std::string to_string(Protocol protocol) {
  return protocol == Protocol::kVeRi ? "veri" : "vehicleid";
}

std::vector<std::size_t> rank_gallery(std::span<const double> distances) {
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  return order;
}

EvalReport evaluate(const FeatureSet& queries, const FeatureSet& gallery, const EvalOptions& options) {
  queries.validate();
  gallery.validate();
  const DistanceMatrix dist = distance_matrix(queries, gallery, options.l2_normalize);

  EvalReport report;
  report.protocol = to_string(options.protocol);
  report.seed = options.seed;
  report.num_gallery = static_cast<int>(gallery.size());

  for (std::size_t q = 0; q < queries.size(); ++q) {
    const std::span<const double> row(dist.values.data() + q * dist.cols, dist.cols);
    const std::vector<std::size_t> order = rank_gallery(row);
    const VehicleRecord& query = queries.meta[q];
    std::vector<bool> usable(gallery.size(), true);
    if (options.protocol == Protocol::kVeRi) usable = filter_junk(query, gallery.meta);

    std::vector<std::size_t> ranking;
    std::vector<bool> relevance;
    int n_gt = 0;
    int first = 0;
    for (std::size_t g : order) {
      if (!usable[g]) continue;
      const bool match = gallery.meta[g].vehicle_id == query.vehicle_id;
      ranking.push_back(g);
      relevance.push_back(match);
      if (match) {
        ++n_gt;
        if (first == 0) first = static_cast<int>(ranking.size());
      }
    }
    if (n_gt == 0) {
      ++report.num_excluded;
      continue;
    }
    report.per_query_ap.push_back(average_precision(relevance, n_gt));
    report.query_index.push_back(q);
    report.first_match_rank.push_back(first);
    if (options.keep_rankings) report.rankings.push_back(std::move(ranking));
  }
  report.num_queries = static_cast<int>(report.per_query_ap.size());
  report.map = mean_ap(report.per_query_ap);
  report.cmc = cmc_curve(report.first_match_rank, report.num_gallery);
  return report;
}

// ---------------------------------------------------------------------------
// Files

fs::path companion_manifest(const fs::path& feature_path) {
  fs::path p = feature_path;
  p.replace_extension(".csv");
  return p;
}

void write_features(const fs::path& path, const FeatureSet& features) {
  features.validate();
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write features " + path.string());
    out.write("AGNF", 4);
    io::write_u32(out, kFeatureFileVersion);
    io::write_u32(out, static_cast<std::uint32_t>(features.size()));
    io::write_u32(out, static_cast<std::uint32_t>(features.dim));
    for (float v : features.values) io::write_f32(out, v);
    if (!out) throw IoError("failed writing features " + path.string());
  }
  write_manifest(companion_manifest(path), features.meta);
}

FeatureSet read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open features " + path.string());
  io::expect_magic(in, "AGNF", path.string());
  const std::uint32_t version = io::read_u32(in, "feature version");
  if (version != kFeatureFileVersion) {
    throw FormatError(path.string() + ": unsupported feature file version " + std::to_string(version));
  }
  const std::uint32_t n = io::read_u32(in, "row count");
  const std::uint32_t d = io::read_u32(in, "dimension");
  FeatureSet set;
  set.dim = static_cast<int>(d);
  set.values.resize(static_cast<std::size_t>(n) * d);
  for (auto& v : set.values) v = io::read_f32(in, "feature values");
  set.meta = load_manifest(companion_manifest(path)).records;
  if (set.meta.size() != n) {
    throw FormatError(path.string() + ": companion manifest has " + std::to_string(set.meta.size()) +
                      " rows, feature file has " + std::to_string(n));
  }
  set.validate();
  return set;
}

void write_report_text(const fs::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << std::setprecision(10);
  out << "protocol: " << report.protocol << '\n'
      << "seed: " << report.seed << '\n'
      << "num_queries: " << report.num_queries << '\n'
      << "num_excluded: " << report.num_excluded << '\n'
      << "num_gallery: " << report.num_gallery << '\n'
      << "mAP: " << report.map << '\n'
      << "rank1: " << report.rank(1) << '\n'
      << "rank5: " << report.rank(5) << '\n'
      << "rank10: " << report.rank(10) << '\n'
      << "cmc: ";
  for (std::size_t k = 0; k < report.cmc.size(); ++k) out << (k ? "," : "") << report.cmc[k];
  out << '\n';
}

void write_report_csv(const fs::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << std::setprecision(17);
  out << "section,key,value\n";
  out << "summary,protocol," << report.protocol << '\n'
      << "summary,seed," << report.seed << '\n'
      << "summary,num_queries," << report.num_queries << '\n'
      << "summary,num_excluded," << report.num_excluded << '\n'
      << "summary,num_gallery," << report.num_gallery << '\n'
      << "summary,map," << report.map << '\n';
  for (std::size_t k = 0; k < report.cmc.size(); ++k) out << "cmc," << k + 1 << ',' << report.cmc[k] << '\n';
  for (std::size_t i = 0; i < report.per_query_ap.size(); ++i) {
    out << "query_ap," << report.query_index[i] << ',' << report.per_query_ap[i] << '\n';
  }
}

}  // namespace agnet
