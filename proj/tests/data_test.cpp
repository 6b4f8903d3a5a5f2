#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "drformer/data.hpp"
#include "drformer/errors.hpp"

using namespace drformer;

namespace {

std::string manifest_text(const DatasetManifest& m) {
  std::ostringstream os;
  write_manifest(os, m);
  return os.str();
}

double l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Synthetic, CountsAndDeterminism) {
  SyntheticSpec spec;
  spec.seed = 42;
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  EXPECT_EQ(a.records.size(), 128u);
  EXPECT_EQ(manifest_text(a), manifest_text(b));
  auto img1 = load_sample(a, 17).image, img2 = load_sample(b, 17).image;
  ASSERT_EQ(img1.shape(), (Shape{64, 32, 3}));
  for (std::size_t i = 0; i < img1.size(); ++i) ASSERT_EQ(img1[i], img2[i]);
  spec.seed = 43;
  EXPECT_NE(manifest_text(generate_synthetic(spec)), manifest_text(a));
}

TEST(Synthetic, PixelsInUnitRange) {
  SyntheticSpec spec;
  spec.occlusion_rate = 1.0;
  auto m = generate_synthetic(spec);
  for (std::size_t i = 0; i < m.records.size(); i += 9) {
    const Tensor img = load_sample(m, i).image;
    for (double v : img.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Synthetic, SamePidCloserThanDifferentPid) {
  SyntheticSpec spec;
  spec.seed = 7;
  auto m = generate_synthetic(spec);
  std::vector<Tensor> imgs;
  for (std::size_t i = 0; i < m.records.size(); ++i) imgs.push_back(load_sample(m, i).image);
  double same = 0.0, diff = 0.0;
  std::size_t n_same = 0, n_diff = 0;
  for (std::size_t i = 0; i < imgs.size(); ++i)
    for (std::size_t j = i + 1; j < imgs.size(); ++j) {
      const double d = l2(imgs[i], imgs[j]);
      if (m.records[i].pid == m.records[j].pid) {
        same += d;
        ++n_same;
      } else {
        diff += d;
        ++n_diff;
      }
    }
  EXPECT_LT(same / static_cast<double>(n_same), diff / static_cast<double>(n_diff));
}

TEST(Synthetic, SplitsAreDisjointWithCrossCameraMatches) {
  for (std::size_t ids : {4u, 8u, 13u})
    for (std::size_t cams : {2u, 3u, 6u})
      for (std::size_t per : {4u, 5u, 16u}) {
        SyntheticSpec spec;
        spec.num_ids = ids;
        spec.num_cams = cams;
        spec.per_id = per;
        auto m = generate_synthetic(spec);
        EXPECT_NO_THROW(m.validate());
        std::set<std::size_t> train, eval;
        for (const auto& r : m.records) (r.split == Split::train ? train : eval).insert(r.pid);
        for (auto pid : eval) EXPECT_EQ(train.count(pid), 0u);
        EXPECT_EQ(train.size(), ids / 2);
        EXPECT_FALSE(m.indices(Split::query).empty());
        for (auto qi : m.indices(Split::query)) {
          bool found = false;
          for (auto gi : m.indices(Split::gallery))
            found |= m.records[gi].pid == m.records[qi].pid && m.records[gi].camid != m.records[qi].camid;
          EXPECT_TRUE(found);
        }
      }
}

TEST(Synthetic, AllTrainingIdentitiesLeavesEvalEmpty) {
  SyntheticSpec spec;
  spec.train_ids = 8;
  auto m = generate_synthetic(spec);
  EXPECT_EQ(m.indices(Split::train).size(), 128u);
  EXPECT_EQ(m.train_pids().size(), 8u);
}

TEST(Synthetic, InfeasibleSpecsAreConfigErrors) {
  SyntheticSpec spec;
  spec.num_ids = 3;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.per_id = 3;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.num_cams = 1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.train_ids = 9;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(Manifest, RoundTrip) {
  SyntheticSpec spec;
  spec.num_ids = 6;
  spec.per_id = 5;
  spec.num_cams = 3;
  auto m = generate_synthetic(spec);
  std::istringstream in(manifest_text(m));
  auto back = read_manifest(in);
  EXPECT_EQ(manifest_text(back), manifest_text(m));
  EXPECT_EQ(back.num_identities, 6u);
  EXPECT_EQ(back.num_cameras, 3u);
}

TEST(Manifest, MalformedLinesNameTheLine) {
  std::istringstream bad_header("reid-manifest v2 ids=2 cams=2\n");
  EXPECT_THROW(read_manifest(bad_header), ParseError);
  std::istringstream bad_split("reid-manifest v1 ids=2 cams=2\ntrain\t0\t0\tx.ppm\nvalid\t1\t0\ty.ppm\n");
  try {
    read_manifest(bad_split);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream few_fields("reid-manifest v1 ids=2 cams=2\ntrain\t0\t0\n");
  EXPECT_THROW(read_manifest(few_fields), ParseError);
}

TEST(Manifest, ValidateRejectsOverlapAndMissingMatch) {
  DatasetManifest m;
  m.num_identities = 2;
  m.num_cameras = 2;
  m.records = {{Split::train, 0, 0, "a"}, {Split::query, 0, 1, "b"}, {Split::gallery, 0, 0, "c"}};
  EXPECT_THROW(m.validate(), ConfigError);
  m.records = {{Split::query, 1, 1, "b"}, {Split::gallery, 1, 1, "c"}};
  EXPECT_THROW(m.validate(), ConfigError);
  m.records = {{Split::query, 1, 1, "b"}, {Split::gallery, 1, 0, "c"}};
  EXPECT_NO_THROW(m.validate());
}

TEST(RetrievalSplit, KeepsCrossCameraCoverage) {
  // pid 0 (cams 0, 0, 1): both camera-0 samples query against the camera-1
  // one. pid 1 only has camera 1, so it contributes no query.
  std::vector<std::size_t> pids = {0, 0, 0, 1, 1, 1}, cams = {0, 0, 1, 1, 1, 1};
  auto rs = retrieval_split(pids, cams, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(rs.query, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(rs.gallery, (std::vector<std::size_t>{2, 3, 4, 5}));
}

TEST(Resample, ShapesAndExactCases) {
  SyntheticSpec spec;
  auto m = generate_synthetic(spec);
  Tensor master = load_sample(m, 0).image;
  Tensor d = resample_bilinear(master, 56, 28);
  EXPECT_EQ(d.shape(), (Shape{56, 28, 3}));
  Tensor same = resample_bilinear(master, 64, 32);
  for (std::size_t i = 0; i < same.size(); ++i) ASSERT_EQ(same[i], master[i]);
  Tensor flat = Tensor::full({16, 8, 3}, 0.37);
  const Tensor small = resample_bilinear(flat, 7, 5);
  for (double v : small.data()) EXPECT_NEAR(v, 0.37, 1e-15);
  // A horizontal ramp stays a ramp in the interior.
  std::vector<double> ramp(16 * 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) ramp[y * 16 + x] = static_cast<double>(x);
  Tensor r = resample_bilinear(Tensor({16, 16, 1}, ramp), 16, 8);
  for (std::size_t x = 1; x + 1 < 8; ++x) EXPECT_NEAR(r[x], 2.0 * static_cast<double>(x) + 0.5, 1e-12);
}

TEST(Ppm, RoundTripAndRelativePayload) {
  const auto dir = std::filesystem::temp_directory_path() / "drformer_ppm_test";
  std::filesystem::create_directories(dir);
  SyntheticSpec spec;
  Tensor img = load_sample(generate_synthetic(spec), 3).image;
  write_ppm(dir / "a.ppm", img);
  Tensor back = render_payload("a.ppm", dir);
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-12);
  EXPECT_THROW(render_payload("missing.ppm", dir), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(PkSample, SmallBatchInvariants) {
  SyntheticSpec spec;
  auto m = generate_synthetic(spec);
  auto b = pk_sample(m, 2, 2, 11);
  ASSERT_EQ(b.indices.size(), 4u);
  std::map<std::size_t, std::size_t> per_pid;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(m.records[b.indices[i]].split, Split::train);
    EXPECT_EQ(m.records[b.indices[i]].pid, b.pids[i]);
    ++per_pid[b.pids[i]];
  }
  EXPECT_EQ(per_pid.size(), 2u);
  for (const auto& kv : per_pid) EXPECT_EQ(kv.second, 2u);
  // Without replacement when enough samples exist.
  auto big = pk_sample(m, 4, 16, 3);
  std::set<std::size_t> distinct(big.indices.begin(), big.indices.end());
  EXPECT_EQ(distinct.size(), 64u);
}

TEST(PkSample, DeterministicPerSeed) {
  SyntheticSpec spec;
  auto m = generate_synthetic(spec);
  EXPECT_EQ(pk_sample(m, 3, 4, 99).indices, pk_sample(m, 3, 4, 99).indices);
  EXPECT_NE(pk_sample(m, 3, 4, 99).indices, pk_sample(m, 3, 4, 100).indices);
}

TEST(PkSample, PidFrequenciesUniform) {
  SyntheticSpec spec;
  spec.train_ids = 8;
  auto m = generate_synthetic(spec);
  const std::size_t draws = 10000, p = 2, n_pids = 8;
  std::map<std::size_t, double> counts;
  for (std::size_t s = 0; s < draws; ++s) {
    auto b = pk_sample(m, p, 2, derive_seed(5, s));
    for (std::size_t i = 0; i < b.pids.size(); i += 2) counts[b.pids[i]] += 1.0;
  }
  ASSERT_EQ(counts.size(), n_pids);
  const double prob = static_cast<double>(p) / static_cast<double>(n_pids);
  const double expected = static_cast<double>(draws) * prob;
  const double sigma = std::sqrt(static_cast<double>(draws) * prob * (1.0 - prob));
  for (const auto& kv : counts) EXPECT_LT(std::abs(kv.second - expected), 3.0 * sigma) << "pid " << kv.first;
}

TEST(PkSample, ReplacementAndErrors) {
  DatasetManifest m;
  m.num_identities = 3;
  m.num_cameras = 2;
  m.records = {{Split::train, 0, 0, "a"}, {Split::train, 0, 1, "b"}, {Split::train, 1, 0, "c"},
               {Split::train, 1, 1, "d"}, {Split::gallery, 2, 0, "e"}};
  auto b = pk_sample(m, 2, 5, 1);
  EXPECT_EQ(b.indices.size(), 10u);
  EXPECT_THROW(pk_sample(m, 3, 2, 1), ContractError);
  EXPECT_THROW(pk_sample(m, 1, 2, 1), ContractError);
  EXPECT_THROW(pk_sample(m, 2, 1, 1), ContractError);
}

TEST(Features, EmptyRecordListIsEmptyDataset) {
  std::istringstream in("reid-feat v1 n=2 dd=3 dc=4\n");
  auto set = import_features(in);
  EXPECT_EQ(set.n, 2u);
  EXPECT_TRUE(set.records.empty());
}

TEST(Features, RoundTripIsLossless) {
  std::mt19937_64 rng(1);
  FeatureSet set{2, 3, 5, {}};
  for (std::size_t i = 0; i < 6; ++i) {
    set.records.push_back({Tensor::randn({2, 3}, rng, 1.0), Tensor::randn({2, 5}, rng, 1e-9), i / 2, i % 2});
  }
  std::stringstream ss;
  write_features(ss, set);
  auto back = import_features(ss);
  ASSERT_EQ(back.records.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(back.records[i].pid, set.records[i].pid);
    EXPECT_EQ(back.records[i].camid, set.records[i].camid);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(back.records[i].f_t_d[j], set.records[i].f_t_d[j]);
    for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(back.records[i].f_t_c[j], set.records[i].f_t_c[j]);
  }
}

TEST(Features, DimensionMismatchNamesRecord) {
  std::string text = "reid-feat v1 n=1 dd=2 dc=1\n";
  text += "0 0 0.1 0.2 0.3\n";
  text += "0 1 0.1 0.2 0.3\n";
  text += "1 0 0.1 0.3\n";  // d_D short by one
  text += "1 1 0.1 0.2 0.3\n";
  std::istringstream in(text);
  try {
    import_features(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("record 3"), std::string::npos) << e.what();
  }
  std::istringstream bad_header("reid-feat v1 n=1 dd=2\n");
  EXPECT_THROW(import_features(bad_header), ParseError);
}

TEST(Features, ManifestViewSplitsByPid) {
  std::mt19937_64 rng(2);
  FeatureSet set{1, 2, 2, {}};
  for (std::size_t pid = 0; pid < 6; ++pid)
    for (std::size_t k = 0; k < 4; ++k)
      set.records.push_back({Tensor::randn({1, 2}, rng, 1.0), Tensor::randn({1, 2}, rng, 1.0), pid * 10, k % 2});
  auto m = manifest_from_features(set);
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.train_pids(), (std::vector<std::size_t>{0, 10, 20}));
  EXPECT_EQ(m.indices(Split::query).size(), 6u);
  EXPECT_THROW(render_payload(m.records[0].payload), ContractError);
}
