#include "agnet/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "agnet/error.hpp"
#include "test_support.hpp"

namespace agnet {
namespace {

using testing::ScratchDir;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

TEST(ManifestTest, ThreeWellFormedRows) {
  ScratchDir dir("manifest");
  write_text(dir / "m.csv",
             "image_path,vehicle_id,camera_id,color_id,type_id\n"
             "a.ppm,0,1,2,0\n"
             "b.ppm,0,2,2,0\n"
             "c.ppm,3,1,-1,1\n");
  const Dataset d = load_manifest(dir / "m.csv");
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.records[2], (VehicleRecord{"c.ppm", 3, 1, kUnlabeled, 1}));
  EXPECT_EQ(d.num_identities, 4);
  EXPECT_EQ(d.num_colors, 3);
  EXPECT_EQ(d.num_types, 2);
  EXPECT_EQ(d.num_cameras, 3);
}

TEST(ManifestTest, IdentitySpaceIsOnePlusMax) {
  ScratchDir dir("manifest");
  write_text(dir / "m.csv", "image_path,vehicle_id,camera_id,color_id,type_id\na,0,0,0,0\nb,5,0,0,0\n");
  EXPECT_EQ(load_manifest(dir / "m.csv").num_identities, 6);
}

TEST(ManifestTest, MissingColumnIsNamed) {
  ScratchDir dir("manifest");
  write_text(dir / "m.csv", "image_path,vehicle_id,camera_id,type_id\na,0,0,0\n");
  try {
    load_manifest(dir / "m.csv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("color_id"), std::string::npos) << e.what();
  }
}

TEST(ManifestTest, BadValueReportsLine) {
  ScratchDir dir("manifest");
  write_text(dir / "m.csv", "image_path,vehicle_id,camera_id,color_id,type_id\na,0,0,0,0\nb,x,0,0,0\n");
  try {
    load_manifest(dir / "m.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST(ManifestTest, HeaderOnlyIsEmptyDataset) {
  ScratchDir dir("manifest");
  write_text(dir / "m.csv", "image_path,vehicle_id,camera_id,color_id,type_id\n");
  EXPECT_THROW(load_manifest(dir / "m.csv"), EmptyDatasetError);
}

TEST(ManifestTest, ColumnOrderQuotingAndCrlfAreTolerated) {
  ScratchDir dir("manifest");
  write_text(dir / "m.csv",
             "\xEF\xBB\xBFtype_id,color_id,camera_id,vehicle_id,image_path\r\n"
             "1,2,3,4,\"dir, with comma/a.ppm\"\r\n");
  const Dataset d = load_manifest(dir / "m.csv");
  EXPECT_EQ(d.records[0], (VehicleRecord{"dir, with comma/a.ppm", 4, 3, 2, 1}));
}

TEST(ManifestTest, WriteThenLoadRoundTrips) {
  ScratchDir dir("manifest");
  const std::vector<VehicleRecord> records{{"x,y.ppm", 2, 0, 1, kUnlabeled}, {"plain.ppm", 0, 5, 0, 0}};
  write_manifest(dir / "m.csv", records);
  EXPECT_EQ(load_manifest(dir / "m.csv").records, records);
}

TEST(PpmTest, RoundTripAndTensorScaling) {
  ScratchDir dir("ppm");
  Image img{3, 2, {0, 255, 51, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}};
  write_ppm(dir / "i.ppm", img);
  EXPECT_EQ(read_ppm(dir / "i.ppm"), img);
  const Tensor<float> t = to_tensor(img);
  EXPECT_EQ(t.shape(), (std::vector<int>{3, 2, 3}));
  EXPECT_FLOAT_EQ(t(0, 0, 0), -0.5f);
  EXPECT_FLOAT_EQ(t(1, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(t(2, 0, 0), 0.2f - 0.5f);
}

TEST(PpmTest, TruncatedFileIsFormatError) {
  ScratchDir dir("ppm");
  write_text(dir / "bad.ppm", "P6\n4 4\n255\nabc");
  EXPECT_THROW(read_ppm(dir / "bad.ppm"), FormatError);
  write_text(dir / "p3.ppm", "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_ppm(dir / "p3.ppm"), FormatError);
}

TEST(SyntheticTest, CountsAndLabelRules) {
  SyntheticSpec spec;
  const SyntheticData data = generate_synthetic(spec);
  ASSERT_EQ(data.dataset.size(), 32u);
  ASSERT_EQ(data.images.size(), 32u);
  for (const auto& r : data.dataset.records) {
    EXPECT_EQ(r.color_id, r.vehicle_id % spec.num_colors);
    EXPECT_EQ(r.type_id, (r.vehicle_id / spec.num_colors) % spec.num_types);
  }
  EXPECT_EQ(data.images[0].width, 32);
}

TEST(SyntheticTest, SameSeedIsBitIdentical) {
  SyntheticSpec spec;
  spec.noise_std = 6.0;
  spec.seed = 4;
  EXPECT_EQ(generate_synthetic(spec).images, generate_synthetic(spec).images);
  SyntheticSpec other = spec;
  other.seed = 5;
  EXPECT_NE(generate_synthetic(spec).images, generate_synthetic(other).images);
}

TEST(SyntheticTest, CamerasDifferOnlyByBrightnessOffset) {
  SyntheticSpec spec;
  const SyntheticData data = generate_synthetic(spec);
  // Independent restatement of the offset rule: 40 units spread over cameras.
  auto offset = [&](int cam) { return std::lround(((cam + 0.5) / spec.num_cameras - 0.5) * 40.0); };
  EXPECT_EQ(offset(0), -15);
  EXPECT_EQ(offset(3), 15);
  for (std::size_t a = 0; a < data.dataset.size(); ++a) {
    for (std::size_t b = 0; b < data.dataset.size(); ++b) {
      const auto& ra = data.dataset.records[a];
      const auto& rb = data.dataset.records[b];
      if (ra.vehicle_id != rb.vehicle_id || ra.camera_id == rb.camera_id) continue;
      const long delta = offset(rb.camera_id) - offset(ra.camera_id);
      EXPECT_EQ(delta, camera_brightness_offset(rb.camera_id, 4) - camera_brightness_offset(ra.camera_id, 4));
      for (std::size_t i = 0; i < data.images[a].rgb.size(); ++i) {
        ASSERT_EQ(static_cast<long>(data.images[b].rgb[i]) - data.images[a].rgb[i], delta) << "pixel " << i;
      }
    }
  }
}

TEST(SyntheticTest, IdentitiesRenderDistinctly) {
  SyntheticSpec spec;
  spec.num_identities = 24;
  spec.images_per_identity = 1;
  spec.num_cameras = 1;
  const SyntheticData data = generate_synthetic(spec);
  std::set<std::vector<std::uint8_t>> distinct;
  for (const auto& img : data.images) distinct.insert(img.rgb);
  EXPECT_EQ(distinct.size(), 24u);
}

// A nearest-mean-hue classifier over non-background pixels recovers color_id.
TEST(SyntheticTest, ColorIsRecoverableFromMeanHue) {
  SyntheticSpec spec;
  spec.num_identities = 12;
  spec.num_colors = 4;
  spec.num_types = 3;
  const SyntheticData data = generate_synthetic(spec);
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const Image& img = data.images[i];
    const int off = camera_brightness_offset(data.dataset.records[i].camera_id, spec.num_cameras);
    double sx = 0.0, sy = 0.0;
    for (std::size_t p = 0; p < img.rgb.size(); p += 3) {
      const double r = img.rgb[p] - off, g = img.rgb[p + 1] - off, b = img.rgb[p + 2] - off;
      if (r == 110 && g == 110 && b == 110) continue;
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      if (mx - mn < 1.0) continue;
      double h;
      if (mx == r) h = 60.0 * std::fmod((g - b) / (mx - mn) + 6.0, 6.0);
      else if (mx == g) h = 60.0 * ((b - r) / (mx - mn) + 2.0);
      else h = 60.0 * ((r - g) / (mx - mn) + 4.0);
      const double rad = h * M_PI / 180.0;
      sx += std::cos(rad);
      sy += std::sin(rad);
    }
    const double mean_hue = std::fmod(std::atan2(sy, sx) * 180.0 / M_PI + 360.0, 360.0);
    int best = 0;
    double best_d = 1e9;
    for (int c = 0; c < spec.num_colors; ++c) {
      double d = std::abs(mean_hue - 360.0 * c / spec.num_colors);
      d = std::min(d, 360.0 - d);
      if (d < best_d) best_d = d, best = c;
    }
    EXPECT_EQ(best, data.dataset.records[i].color_id) << "image " << i;
  }
}

TEST(SyntheticTest, WriteSyntheticProducesLoadableManifest) {
  ScratchDir dir("synth");
  SyntheticSpec spec;
  spec.num_identities = 3;
  spec.images_per_identity = 2;
  const SyntheticData data = generate_synthetic(spec);
  write_synthetic(dir.path(), data);
  const Dataset loaded = load_manifest(dir / "manifest.csv");
  EXPECT_EQ(loaded.records, data.dataset.records);
  EXPECT_EQ(load_images(loaded, dir.path()), data.images);
}

TEST(SyntheticTest, InvalidSpecIsConfigError) {
  SyntheticSpec spec;
  spec.num_colors = 0;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

Dataset synthetic_dataset(int ids, int per_id) {
  SyntheticSpec spec;
  spec.num_identities = ids;
  spec.images_per_identity = per_id;
  return generate_synthetic(spec).dataset;
}

TEST(PairSamplerTest, PositiveNegativeSplit) {
  const Dataset d = synthetic_dataset(8, 4);
  const auto pairs = sample_pairs(d, 32, 0.5, 1);
  ASSERT_EQ(pairs.size(), 32u);
  int pos = 0;
  for (const auto& p : pairs) pos += p.same_id ? 1 : 0;
  EXPECT_EQ(pos, 16);
}

TEST(PairSamplerTest, LabelsAreSoundAcrossSeeds) {
  const Dataset d = synthetic_dataset(6, 3);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const auto& p : sample_pairs(d, 17, 0.3 + 0.01 * static_cast<double>(seed), seed)) {
      EXPECT_EQ(p.same_id, p.a.vehicle_id == p.b.vehicle_id);
      EXPECT_NE(p.a_index, p.b_index);
      EXPECT_EQ(d.records[p.a_index], p.a);
      EXPECT_EQ(d.records[p.b_index], p.b);
    }
  }
}

TEST(PairSamplerTest, FixedSeedIsReproducible) {
  const Dataset d = synthetic_dataset(8, 4);
  const auto a = sample_pairs(d, 32, 0.5, 9);
  const auto b = sample_pairs(d, 32, 0.5, 9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].a_index, b[i].a_index);
    EXPECT_EQ(a[i].b_index, b[i].b_index);
  }
}

TEST(PairSamplerTest, ImpossibleRequestsAreSamplingErrors) {
  EXPECT_THROW(sample_pairs(synthetic_dataset(4, 1), 4, 0.5, 0), SamplingError);
  EXPECT_THROW(sample_pairs(synthetic_dataset(1, 4), 4, 0.5, 0), SamplingError);
  EXPECT_NO_THROW(sample_pairs(synthetic_dataset(1, 4), 4, 1.0, 0));
  EXPECT_THROW(sample_pairs(synthetic_dataset(4, 2), 0, 0.5, 0), SamplingError);
}

TEST(SplitTest, EightTwoIdentityDisjointPartition) {
  const Dataset d = synthetic_dataset(10, 3);
  const auto [train, test] = split_train_test(d, 0.8, 3);
  EXPECT_EQ(train.identities().size(), 8u);
  EXPECT_EQ(test.identities().size(), 2u);
  for (int id : test.identities()) {
    const auto ids = train.identities();
    EXPECT_EQ(std::count(ids.begin(), ids.end(), id), 0);
  }
  std::multiset<std::string> all, parts;
  for (const auto& r : d.records) all.insert(r.image_path);
  for (const auto* side : {&train, &test})
    for (const auto& r : side->records) parts.insert(r.image_path);
  EXPECT_EQ(all, parts);
}

TEST(SplitTest, DisjointForEverySeedAndReproducible) {
  const Dataset d = synthetic_dataset(13, 2);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto [train, test] = split_train_test(d, 0.6, seed);
    const auto again = split_train_test(d, 0.6, seed);
    EXPECT_EQ(train.records, again.first.records);
    const std::vector<int> train_ids = train.identities();
    const std::set<int> tr(train_ids.begin(), train_ids.end());
    for (int id : test.identities()) EXPECT_EQ(tr.count(id), 0u);
  }
}

TEST(SplitTest, EmptySideIsSplitError) {
  EXPECT_THROW(split_train_test(synthetic_dataset(2, 2), 0.1, 0), SplitError);
  EXPECT_THROW(split_train_test(synthetic_dataset(2, 2), 1.0, 0), SplitError);
}

}  // namespace
}  // namespace agnet
