#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "pirt/error.hpp"
#include "pirt/synth.hpp"

using namespace pirt;

namespace {

SynthConfig small_config(std::uint64_t seed = 4) {
  SynthConfig c;
  c.n_identities = 6;
  c.images_per_identity = 5;
  c.seed = seed;
  return c;
}

std::vector<double> downsample(const SynthSample& s, std::size_t f) {
  std::size_t h = s.height / f, w = s.width / f;
  std::vector<double> out(h * w * 3, 0.0);
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      for (std::size_t k = 0; k < 3; ++k) out[((y / f) * w + x / f) * 3 + k] += s.image[(y * s.width + x) * 3 + k];
  for (auto& v : out) v /= static_cast<double>(f * f);
  return out;
}

}  // namespace

TEST(Generate, CountsAndLabels) {
  SynthConfig c;
  auto data = generate_dataset(c);
  ASSERT_EQ(data.size(), 256u);
  std::set<int> ids;
  for (const auto& s : data) {
    ids.insert(s.identity);
    EXPECT_EQ(s.image.size(), 64u * 32u * 3u);
    for (double v : s.image) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    for (const auto& r : s.occluders) {
      EXPECT_GE(r.x0, 0);
      EXPECT_GE(r.y0, 0);
      EXPECT_LE(r.x1, 32);
      EXPECT_LE(r.y1, 64);
    }
    for (const auto& k : s.keypoints) {
      bool inside = k.x >= 0 && k.y >= 0 && k.x < 32 && k.y < 64;
      EXPECT_TRUE(inside || !k.visible);
    }
  }
  EXPECT_EQ(ids.size(), 32u);
}

TEST(Generate, NoOcclusionMeansAllKeypointsVisible) {
  SynthConfig c = small_config();
  c.occlusion_prob = 0.0;
  for (const auto& s : generate_dataset(c)) {
    EXPECT_TRUE(s.occluders.empty());
    for (const auto& k : s.keypoints) {
      EXPECT_TRUE(k.visible);
      EXPECT_FALSE(k.occluded);
    }
  }
}

TEST(Generate, QueriesAreOccluded) {
  SynthConfig c = small_config();
  for (const auto& s : generate_dataset(c)) {
    if (s.split == Split::Query) EXPECT_FALSE(s.occluders.empty());
  }
}

TEST(Generate, SameSeedSameDataset) {
  EXPECT_EQ(generate_dataset(small_config(9)), generate_dataset(small_config(9)));
  EXPECT_NE(generate_dataset(small_config(9)), generate_dataset(small_config(10)));
}

TEST(Generate, EveryQueryHasCrossCameraGalleryMatch) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig c;
    c.seed = seed;
    auto data = generate_dataset(c);
    for (const auto& q : data) {
      if (q.split != Split::Query) continue;
      bool found = false;
      for (const auto& g : data) {
        found = found || (g.split == Split::Gallery && g.identity == q.identity && g.camera != q.camera);
      }
      EXPECT_TRUE(found) << "seed " << seed << " id " << q.identity;
    }
  }
}

TEST(Generate, InvalidConfigRejected) {
  SynthConfig c = small_config();
  c.height = 62;
  EXPECT_THROW(generate_dataset(c), ConfigError);
  c = small_config();
  c.max_coverage = 0.7;
  EXPECT_THROW(generate_dataset(c), ConfigError);
  c = small_config();
  c.n_identities = 0;
  EXPECT_THROW(generate_dataset(c), ConfigError);
}

TEST(Generate, NearestCentroidSeparatesIdentities) {
  SynthConfig c;
  c.occlusion_prob = 0.0;
  auto data = generate_dataset(c);
  std::map<int, std::vector<double>> centroid;
  std::map<int, int> count;
  std::vector<std::pair<int, std::vector<double>>> train;
  for (const auto& s : data) {
    if (s.split != Split::Train) continue;
    auto f = downsample(s, 4);
    auto& ct = centroid[s.identity];
    if (ct.empty()) ct.assign(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) ct[i] += f[i];
    ++count[s.identity];
    train.emplace_back(s.identity, std::move(f));
  }
  for (auto& [id, ct] : centroid)
    for (auto& v : ct) v /= count[id];
  int correct = 0;
  for (const auto& [label, f] : train) {
    int best = -1;
    double best_d = 1e300;
    for (const auto& [id, ct] : centroid) {
      double d = 0;
      for (std::size_t i = 0; i < f.size(); ++i) d += (f[i] - ct[i]) * (f[i] - ct[i]);
      if (d < best_d) best_d = d, best = id;
    }
    correct += best == label;
  }
  double acc = static_cast<double>(correct) / static_cast<double>(train.size());
  EXPECT_GE(acc, 0.9);
}

TEST(Augment, NoOpPlanIsIdentity) {
  auto data = generate_dataset(small_config());
  AugmentPlan plan;
  plan.pad = 2;
  EXPECT_EQ(apply_augment(data[0], plan), data[0]);
}

TEST(Augment, FlipMirrorsKeypointsAndIsAnInvolution) {
  auto data = generate_dataset(small_config());
  const SynthSample& s = data[1];
  AugmentPlan plan;
  plan.pad = 2;
  plan.flip = true;
  SynthSample once = apply_augment(s, plan);
  const double W = static_cast<double>(s.width);
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    EXPECT_DOUBLE_EQ(once.keypoints[mirror_keypoint(p)].x, W - 1 - s.keypoints[p].x);
    EXPECT_DOUBLE_EQ(once.keypoints[mirror_keypoint(p)].y, s.keypoints[p].y);
  }
  SynthSample twice = apply_augment(once, plan);
  EXPECT_EQ(twice.image, s.image);
  EXPECT_EQ(twice.occluders, s.occluders);
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    EXPECT_NEAR(twice.keypoints[p].x, s.keypoints[p].x, 1e-12);
    EXPECT_EQ(twice.keypoints[p].visible, s.keypoints[p].visible);
  }
}

TEST(Augment, ShiftMovesPixelsAndKeypoints) {
  auto data = generate_dataset(small_config());
  const SynthSample& s = data[2];
  AugmentPlan plan;
  plan.pad = 2;
  plan.shift_x = 2;
  plan.shift_y = -1;
  SynthSample out = apply_augment(s, plan);
  std::size_t W = s.width;
  for (std::size_t y = 1; y < s.height; ++y)
    for (std::size_t x = 0; x + 2 < W; ++x)
      EXPECT_EQ(out.image[(y * W + x) * 3], s.image[((y - 1) * W + x + 2) * 3]);
  EXPECT_EQ(out.image[(0 * W + 3) * 3], 0.0);
  EXPECT_DOUBLE_EQ(out.keypoints[0].x, s.keypoints[0].x - 2);
  EXPECT_DOUBLE_EQ(out.keypoints[0].y, s.keypoints[0].y + 1);
}

TEST(Augment, DrawnPlansRespectBounds) {
  auto data = generate_dataset(small_config());
  std::mt19937_64 rng(3);
  int flips = 0, erases = 0;
  for (int i = 0; i < 400; ++i) {
    AugmentPlan p = draw_augment(data[0], rng);
    EXPECT_EQ(p.pad, 2);
    EXPECT_LE(std::abs(p.shift_x), 2);
    EXPECT_LE(std::abs(p.shift_y), 2);
    flips += p.flip;
    erases += p.erase;
    if (p.erase) {
      double frac = p.erase_rect.area() / (64.0 * 32.0);
      EXPECT_GE(frac, 0.015);
      EXPECT_LE(frac, 0.42);
      EXPECT_LE(p.erase_rect.x1, 32);
      EXPECT_LE(p.erase_rect.y1, 64);
    }
  }
  EXPECT_GT(flips, 150);
  EXPECT_LT(flips, 250);
  EXPECT_GT(erases, 130);
  EXPECT_LT(erases, 250);
}

TEST(Augment, EvalSplitRejected) {
  auto data = generate_dataset(small_config());
  std::mt19937_64 rng(0);
  for (const auto& s : data) {
    if (s.split != Split::Train) {
      EXPECT_THROW(augment(s, rng), ContractError);
      return;
    }
  }
  FAIL() << "no eval sample";
}

TEST(Persistence, RoundTripAndCorruption) {
  auto dir = std::filesystem::temp_directory_path() / "pirt_test_dataset";
  std::filesystem::remove_all(dir);
  SynthConfig c = small_config();
  auto data = generate_dataset(c);
  save_dataset(data, dir, &c);
  EXPECT_EQ(load_dataset(dir), data);

  std::ifstream mf(dir / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(mf)), {});
  std::size_t records = 0;
  for (std::size_t p = text.find("\"offset\""); p != std::string::npos; p = text.find("\"offset\"", p + 1)) ++records;
  EXPECT_EQ(records, data.size());

  auto payload = dir / "payload.bin";
  auto size = std::filesystem::file_size(payload);
  std::filesystem::resize_file(payload, size / 2);
  EXPECT_THROW(load_dataset(dir), FormatError);

  {
    std::fstream f(payload, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_dataset(dir), FormatError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_dataset(dir), FormatError);
}

TEST(Persistence, SameSeedSameBytes) {
  auto a = std::filesystem::temp_directory_path() / "pirt_test_ds_a";
  auto b = std::filesystem::temp_directory_path() / "pirt_test_ds_b";
  SynthConfig c = small_config(21);
  save_dataset(generate_dataset(c), a, &c);
  save_dataset(generate_dataset(c), b, &c);
  for (const char* name : {"manifest.json", "payload.bin"}) {
    std::ifstream fa(a / name, std::ios::binary), fb(b / name, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb) << name;
  }
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Heatmaps, OnFeatureGrid) {
  auto data = generate_dataset(small_config());
  HeatmapStack h = sample_heatmaps(data[0]);
  EXPECT_EQ(h.height, 16u);
  EXPECT_EQ(h.width, 8u);
}
