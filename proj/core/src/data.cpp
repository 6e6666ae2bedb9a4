#include "agnet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "agnet/error.hpp"

namespace agnet {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 5> kColumns = {"image_path", "vehicle_id", "camera_id",
                                                 "color_id", "type_id"};

// Splits one CSV line; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

int parse_label(const std::string& text, const char* column, std::size_t line_no, int minimum) {
  int value = 0;
  try {
    std::size_t used = 0;
    value = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + column +
                     " is not an integer ('" + text + "')");
  }
  if (value < minimum) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + column + " = " +
                     std::to_string(value) + " is below " + std::to_string(minimum));
  }
  return value;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double hue_deg, double sat, double val) {
  const double c = val * sat;
  const double h = std::fmod(hue_deg, 360.0) / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  Rgb rgb{0, 0, 0};
  if (h < 1) rgb = {c, x, 0};
  else if (h < 2) rgb = {x, c, 0};
  else if (h < 3) rgb = {0, c, x};
  else if (h < 4) rgb = {0, x, c};
  else if (h < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = val - c;
  return {255.0 * (rgb.r + m), 255.0 * (rgb.g + m), 255.0 * (rgb.b + m)};
}

// Whether pixel centre (x, y) lies on the silhouette of the given type.
bool inside_silhouette(int type_id, double x, double y, int side) {
  const double u = (x + 0.5) / side;
  const double v = (y + 0.5) / side;
  const double shrink = 0.08 * (type_id / 4);
  switch (type_id % 4) {
    case 0:  // low wide body
      return u >= 0.12 + shrink && u <= 0.88 - shrink && v >= 0.34 && v <= 0.74;
    case 1:  // tall box
      return u >= 0.22 + shrink && u <= 0.78 - shrink && v >= 0.16 && v <= 0.84;
    case 2: {  // rounded body
      const double du = (u - 0.5) / (0.40 - shrink);
      const double dv = (v - 0.52) / 0.26;
      return du * du + dv * dv <= 1.0;
    }
    default:  // wedge
      return v >= 0.22 && v <= 0.80 && std::abs(u - 0.5) <= (0.12 + 0.55 * (v - 0.22)) - shrink * 0.5;
  }
}

// 16-bit glyph unique per identity (odd multiplier is a bijection mod 2^16).
std::uint16_t identity_glyph(int vehicle_id, std::uint64_t seed) {
  const std::uint32_t mixed = (static_cast<std::uint32_t>(vehicle_id) ^ static_cast<std::uint32_t>(seed & 0xFFFF));
  return static_cast<std::uint16_t>((mixed * 40503u + 12345u) & 0xFFFFu);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::from_records(std::vector<VehicleRecord> records) {
  if (records.empty()) throw EmptyDatasetError("dataset has no records");
  Dataset d;
  int max_id = 0, max_cam = 0, max_color = -1, max_type = -1;
  for (const auto& r : records) {
    max_id = std::max(max_id, r.vehicle_id);
    max_cam = std::max(max_cam, r.camera_id);
    max_color = std::max(max_color, r.color_id);
    max_type = std::max(max_type, r.type_id);
  }
  d.records = std::move(records);
  d.num_identities = max_id + 1;
  d.num_cameras = max_cam + 1;
  d.num_colors = std::max(1, max_color + 1);
  d.num_types = std::max(1, max_type + 1);
  return d;
}

std::vector<int> Dataset::identities() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.vehicle_id);
  return {ids.begin(), ids.end()};
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  std::vector<VehicleRecord> out;
  out.reserve(rows.size());
  for (std::size_t row : rows) out.push_back(records.at(row));
  return from_records(std::move(out));
}

Dataset load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw EmptyDatasetError("manifest " + path.string() + " is empty");
  ++line_no;
  strip_cr(line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const std::vector<std::string> header = split_csv(line);
  std::array<std::size_t, kColumns.size()> column_index{};
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) {
      throw FormatError("manifest " + path.string() + ": missing column '" + kColumns[c] + "'");
    }
    column_index[c] = static_cast<std::size_t>(it - header.begin());
  }
  if (header.size() != kColumns.size()) {
    throw FormatError("manifest " + path.string() + ": header must be exactly '" +
                      std::string(kManifestHeader) + "'");
  }

  std::vector<VehicleRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != kColumns.size()) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected " +
                       std::to_string(kColumns.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    VehicleRecord r;
    r.image_path = fields[column_index[0]];
    if (r.image_path.empty()) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": image_path is empty");
    }
    r.vehicle_id = parse_label(fields[column_index[1]], "vehicle_id", line_no, 0);
    r.camera_id = parse_label(fields[column_index[2]], "camera_id", line_no, 0);
    r.color_id = parse_label(fields[column_index[3]], "color_id", line_no, kUnlabeled);
    r.type_id = parse_label(fields[column_index[4]], "type_id", line_no, kUnlabeled);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw EmptyDatasetError("manifest " + path.string() + " has no data rows");
  return Dataset::from_records(std::move(records));
}

void write_manifest(const fs::path& path, std::span<const VehicleRecord> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    out << csv_escape(r.image_path) << ',' << r.vehicle_id << ',' << r.camera_id << ','
        << r.color_id << ',' << r.type_id << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

// ---------------------------------------------------------------------------
// Images

void write_ppm(const fs::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  auto next_token = [&]() {
    std::string token;
    char ch = 0;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!token.empty()) break;
      } else {
        token += ch;
      }
    }
    return token;
  };
  if (next_token() != "P6") throw FormatError(path.string() + " is not a binary PPM (P6)");
  Image image;
  try {
    image.width = std::stoi(next_token());
    image.height = std::stoi(next_token());
    if (std::stoi(next_token()) != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  if (image.width <= 0 || image.height <= 0) throw FormatError(path.string() + ": bad PPM size");
  image.rgb.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  in.read(reinterpret_cast<char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.rgb.size())) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return image;
}

Tensor<float> to_tensor(const Image& image) {
  Tensor<float> t({3, image.height, image.width});
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) t(c, y, x) = image.at(x, y, c) / 255.0f - 0.5f;
    }
  }
  return t;
}

std::vector<Image> load_images(const Dataset& dataset, const fs::path& base_dir) {
  std::vector<Image> images;
  images.reserve(dataset.size());
  for (const auto& r : dataset.records) {
    fs::path p(r.image_path);
    if (p.is_relative()) p = base_dir / p;
    images.push_back(read_ppm(p));
  }
  return images;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  auto positive = [](int v, const char* key) {
    if (v < 1) throw ConfigError(std::string("synthetic spec: ") + key + " must be >= 1");
  };
  positive(num_identities, "num_identities");
  positive(images_per_identity, "images_per_identity");
  positive(num_colors, "num_colors");
  positive(num_types, "num_types");
  positive(num_cameras, "num_cameras");
  if (image_side < 8) throw ConfigError("synthetic spec: image_side must be >= 8");
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic spec: noise_std must be >= 0");
}

int camera_brightness_offset(int camera_id, int num_cameras) {
  return static_cast<int>(std::lround(((camera_id + 0.5) / num_cameras - 0.5) * 40.0));
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int side = spec.image_side;
  const int cell = std::max(1, side / 16);
  const int glyph_extent = 4 * cell;
  const int glyph_x0 = (side - glyph_extent) / 2;
  const int glyph_y0 = (side - glyph_extent) / 2 + side / 32;
  constexpr double kBackground = 110.0;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);

  SyntheticData data;
  std::vector<VehicleRecord> records;
  for (int id = 0; id < spec.num_identities; ++id) {
    const int color = id % spec.num_colors;
    const int type = (id / spec.num_colors) % spec.num_types;
    const Rgb body = hsv_to_rgb(360.0 * color / spec.num_colors, 0.75, 0.8);
    const std::uint16_t glyph = identity_glyph(id, spec.seed);

    // Noise-free render shared by every image of this identity.
    std::vector<double> base(static_cast<std::size_t>(side) * side * 3, kBackground);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        if (!inside_silhouette(type, x, y, side)) continue;
        Rgb px = body;
        const int gx = x - glyph_x0, gy = y - glyph_y0;
        if (gx >= 0 && gy >= 0 && gx < glyph_extent && gy < glyph_extent) {
          const int bit = (gy / cell) * 4 + gx / cell;
          if ((glyph >> bit) & 1u) {
            px = {body.r * 0.5, body.g * 0.5, body.b * 0.5};
          } else {
            px = {body.r + (255.0 - body.r) * 0.5, body.g + (255.0 - body.g) * 0.5,
                  body.b + (255.0 - body.b) * 0.5};
          }
        }
        double* dst = &base[(static_cast<std::size_t>(y) * side + x) * 3];
        dst[0] = px.r;
        dst[1] = px.g;
        dst[2] = px.b;
      }
    }

    for (int j = 0; j < spec.images_per_identity; ++j) {
      const int camera = (id + j) % spec.num_cameras;
      const double offset = camera_brightness_offset(camera, spec.num_cameras);
      Image image{side, side, std::vector<std::uint8_t>(base.size())};
      for (std::size_t i = 0; i < base.size(); ++i) {
        double v = std::round(base[i]) + offset;
        if (spec.noise_std > 0) v = std::round(v + noise(rng));
        image.rgb[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
      std::ostringstream name;
      name << "images/v" << id << "_c" << camera << "_" << j << ".ppm";
      records.push_back(VehicleRecord{name.str(), id, camera, color, type});
      data.images.push_back(std::move(image));
    }
  }
  data.dataset = Dataset::from_records(std::move(records));
  return data;
}

void write_synthetic(const fs::path& dir, const SyntheticData& data) {
  fs::create_directories(dir / "images");
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    write_ppm(dir / data.dataset.records[i].image_path, data.images[i]);
  }
  write_manifest(dir / "manifest.csv", data.dataset.records);
}

// ---------------------------------------------------------------------------
// Pair sampling and splitting

std::vector<PairSample> sample_pairs(const Dataset& dataset, int batch_size,
                                     double positive_fraction, std::uint64_t seed) {
  if (batch_size < 1) throw SamplingError("sample_pairs: batch_size must be >= 1");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw SamplingError("sample_pairs: positive_fraction must lie in [0, 1]");
  }
  const int num_pos = static_cast<int>(std::lround(batch_size * positive_fraction));
  const int num_neg = batch_size - num_pos;

  std::map<int, std::vector<std::size_t>> rows_by_id;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    rows_by_id[dataset.records[i].vehicle_id].push_back(i);
  }
  std::vector<const std::vector<std::size_t>*> groups;
  std::vector<const std::vector<std::size_t>*> multi;
  for (const auto& [id, rows] : rows_by_id) {
    groups.push_back(&rows);
    if (rows.size() >= 2) multi.push_back(&rows);
  }
  if (num_pos > 0 && multi.empty()) {
    throw SamplingError("sample_pairs: positives requested but no identity has two images");
  }
  if (num_neg > 0 && groups.size() < 2) {
    throw SamplingError("sample_pairs: negatives requested but the dataset has one identity");
  }

  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  auto make = [&](std::size_t a, std::size_t b) {
    const auto& ra = dataset.records[a];
    const auto& rb = dataset.records[b];
    return PairSample{ra, rb, a, b, ra.vehicle_id == rb.vehicle_id};
  };

  std::vector<PairSample> pairs;
  pairs.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < num_pos; ++i) {
    const auto& rows = *multi[pick(multi.size())];
    const std::size_t first = pick(rows.size());
    std::size_t second = pick(rows.size() - 1);
    if (second >= first) ++second;
    pairs.push_back(make(rows[first], rows[second]));
  }
  for (int i = 0; i < num_neg; ++i) {
    const std::size_t ga = pick(groups.size());
    std::size_t gb = pick(groups.size() - 1);
    if (gb >= ga) ++gb;
    const auto& ra = *groups[ga];
    const auto& rb = *groups[gb];
    pairs.push_back(make(ra[pick(ra.size())], rb[pick(rb.size())]));
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  return pairs;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double train_identity_fraction,
                                             std::uint64_t seed) {
  if (!(train_identity_fraction > 0.0 && train_identity_fraction < 1.0)) {
    throw SplitError("split_train_test: fraction must lie in (0, 1)");
  }
  std::vector<int> ids = dataset.identities();
  const auto num_train =
      static_cast<std::size_t>(std::lround(train_identity_fraction * static_cast<double>(ids.size())));
  if (num_train == 0 || num_train >= ids.size()) {
    throw SplitError("split_train_test: fraction " + std::to_string(train_identity_fraction) +
                     " over " + std::to_string(ids.size()) + " identities leaves one side empty");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::set<int> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(num_train));

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    (train_ids.count(dataset.records[i].vehicle_id) ? train_rows : test_rows).push_back(i);
  }
  return {dataset.subset(train_rows), dataset.subset(test_rows)};
}

}  // namespace agnet
