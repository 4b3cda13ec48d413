#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pirt/config.hpp"
#include "pirt/error.hpp"
#include "pirt/harness.hpp"

using namespace pirt;

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_EQ(median({7.0}), 7.0);
  EXPECT_THROW(median({}), ContractError);
}

TEST(Gradcheck, CoversEveryComponentAndPasses) {
  GradcheckOptions opt;
  opt.seeds = {0};
  opt.negative_control = true;
  auto rows = run_gradcheck(opt);
  std::map<std::string, GradcheckRow> by_name;
  for (const auto& r : rows) by_name[r.name] = r;
  for (const char* need : {"IRM", "IRT (pose groups, shared stack)", "CSM + confidence weighting", "cross_entropy",
                           "hard_triplet", "full loss (4-image micro-batch)", "conv2d 3x3", "mhsa"}) {
    ASSERT_TRUE(by_name.count(need)) << need;
  }
  for (const auto& r : rows) {
    if (r.name.starts_with("negative control")) {
      EXPECT_FALSE(r.passed()) << r.error;
      EXPECT_GT(r.error, 0.1);
    } else {
      EXPECT_TRUE(r.passed()) << r.name << " " << r.error;
    }
  }
  std::ostringstream out;
  print_gradcheck(rows, out);
  EXPECT_NE(out.str().find("FAIL"), std::string::npos);
}

TEST(Ablation, TinyRunHasOneRowPerVariantAndSeed) {
  RunConfig c = parse_config(R"(
data.identities=8
data.images=6
model.c=16
model.ffn=32
sched.epochs=2
sched.warmup=1
sched.decay_start=1
batch.p=2
batch.k=4
)");
  auto data = generate_dataset(c.data);
  std::vector<std::uint64_t> seeds{0, 1};
  auto rows = run_ablation(c, data, {"components", "n_units", "score_mode"}, seeds);
  std::map<std::string, std::set<std::string>> variants;
  std::map<std::string, int> per_axis;
  for (const auto& r : rows) {
    variants[r.axis].insert(r.variant);
    ++per_axis[r.axis];
    EXPECT_GE(r.mAP, 0.0);
    EXPECT_LE(r.mAP, 1.0);
    EXPECT_GE(r.rank1, 0.0);
    EXPECT_LE(r.rank1, 1.0);
  }
  for (const char* axis : {"components", "n_units", "score_mode"}) {
    EXPECT_EQ(variants[axis].size(), 4u) << axis;
    EXPECT_EQ(per_axis[axis], 8) << axis;
  }
  // the full model appears under several axes and is trained once, so its
  // N=3 and score-mode QG rows agree with the components row
  auto find = [&](const std::string& axis, const std::string& variant, std::uint64_t seed) {
    for (const auto& r : rows)
      if (r.axis == axis && r.variant == variant && r.seed == seed) return r.mAP;
    ADD_FAILURE() << axis << "/" << variant;
    return -1.0;
  };
  for (auto s : seeds) {
    EXPECT_EQ(find("components", "+P+Intra+Inter (full)", s), find("score_mode", "QG", s));
    EXPECT_EQ(find("n_units", "N=3", s), find("score_mode", "QG", s));
  }

  auto summary = summarize(rows);
  EXPECT_EQ(summary.size(), 12u);
  auto dir = std::filesystem::temp_directory_path() / "pirt_test_ablation";
  std::filesystem::create_directories(dir);
  write_ablation_csv(rows, summary, dir / "ablation.csv");
  std::ifstream in(dir / "ablation.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "axis,variant,seed,mAP,rank1");
  std::filesystem::remove_all(dir);

  EXPECT_THROW(run_ablation(c, data, {"heads"}, seeds), ConfigError);
}
