#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pirt/error.hpp"
#include "pirt/grad_check.hpp"
#include "pirt/layers.hpp"
#include "util.hpp"

using namespace pirt;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

const ForwardContext kEval{Mode::Eval, nullptr};

// x [n,d] row-major; w [d,e]
std::vector<double> rows_times(const std::vector<double>& x, std::size_t n, std::size_t d, const Tensor& w) {
  std::size_t e = w.dim(1);
  std::vector<double> out(n * e, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < e; ++j)
      for (std::size_t p = 0; p < d; ++p) out[i * e + j] += x[i * d + p] * w.at(p * e + j);
  return out;
}

// Per-head scalar attention, written without any library op.
std::vector<double> naive_mhsa(const Tensor& x, const MhsaParams& p) {
  std::size_t n = x.dim(0), d = x.dim(1), dk = p.d_k();
  std::vector<double> xv(x.data().begin(), x.data().end());
  std::vector<double> merged(n * d, 0.0);
  for (std::size_t h = 0; h < p.heads; ++h) {
    auto q = rows_times(xv, n, d, p.wq[h]), k = rows_times(xv, n, d, p.wk[h]), v = rows_times(xv, n, d, p.wv[h]);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i * dk + c] * k[j * dk + c];
        logits[j] = dot / std::sqrt(static_cast<double>(dk));
      }
      double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += logits[j] / z * v[j * dk + c];
        merged[i * d + h * dk + c] = acc;
      }
    }
  }
  return rows_times(merged, n, d, p.wh);
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::size_t G = x.rank() == 3 ? x.dim(0) : 1, n = perm.size(), d = x.shape().back();
  std::vector<double> out(x.numel());
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) out[(g * n + i) * d + c] = x.at((g * n + perm[i]) * d + c);
  return Tensor(x.shape(), std::move(out));
}

Tensor identity(std::size_t d) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  return Tensor({d, d}, v);
}

}  // namespace

TEST(Linear, IdentityWeights) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({4, 3}, rng);
  EXPECT_EQ(max_abs_diff(linear(x, identity(3), Tensor::zeros({3})).data(), x.data()), 0.0);
}

TEST(Linear, ZeroInputGivesBias) {
  Tensor b({3}, {1, -2, 0.5});
  Tensor y = linear(Tensor::zeros({2, 4}), Tensor::full({4, 3}, 7.0), b);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(r * 3 + c), b.at(c));
}

TEST(Linear, MatchesLoopOverLeadingAxes) {
  std::mt19937_64 rng(2);
  LinearParams p = LinearParams::init(5, 3, rng);
  Tensor x = random_tensor({2, 4, 5}, rng);
  Tensor y = linear(x, p);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 3}));
  std::vector<double> xv(x.data().begin(), x.data().end());
  auto ref = rows_times(xv, 8, 5, p.weight);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y.at(i * 3 + c), ref[i * 3 + c] + p.bias.at(c), 1e-12);
}

TEST(Linear, InitIsBoundedByFanIn) {
  std::mt19937_64 rng(3);
  LinearParams p = LinearParams::init(16, 8, rng);
  for (double v : p.weight.data()) EXPECT_LE(std::abs(v), 0.25);
}

TEST(Mhsa, MatchesNaivePerHeadOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    MhsaParams p = MhsaParams::init(8, 2, rng);
    Tensor x = random_tensor({4, 8}, rng);
    EXPECT_LT(max_abs_diff(mhsa(x, p, kEval).data(), naive_mhsa(x, p)), 1e-10);
  }
}

TEST(Mhsa, SingleTokenAttendsToItself) {
  std::mt19937_64 rng(4);
  MhsaParams p = MhsaParams::init(6, 3, rng);
  Tensor x = random_tensor({1, 6}, rng);
  std::vector<Tensor> attn;
  Tensor y = mhsa(x, p, kEval, &attn);
  ASSERT_EQ(attn.size(), 3u);
  for (const auto& a : attn) EXPECT_EQ(a.at(0), 1.0);
  EXPECT_LT(max_abs_diff(y.data(), naive_mhsa(x, p)), 1e-12);
}

TEST(Mhsa, ZeroQueryKeyGivesTokenMean) {
  std::mt19937_64 rng(5);
  MhsaParams p;
  p.heads = 1;
  p.wq = {Tensor::zeros({4, 4})};
  p.wk = {Tensor::zeros({4, 4})};
  p.wv = {identity(4)};
  p.wh = identity(4);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor y = mhsa(x, p, kEval);
  for (std::size_t c = 0; c < 4; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 5; ++i) m += x.at(i * 4 + c);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y.at(i * 4 + c), m / 5.0, 1e-12);
  }
}

TEST(Mhsa, AttentionRowsAreADistribution) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    MhsaParams p = MhsaParams::init(8, 4, rng);
    Tensor x = random_tensor({3, 6, 8}, rng, 4.0);
    std::vector<Tensor> attn;
    mhsa(x, p, kEval, &attn);
    ASSERT_EQ(attn.size(), 4u);
    for (const auto& a : attn) {
      ASSERT_EQ(a.shape(), (Shape{3, 6, 6}));
      for (std::size_t r = 0; r < 18; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 6; ++c) {
          EXPECT_GE(a.at(r * 6 + c), 0.0);
          total += a.at(r * 6 + c);
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
    }
  }
}

TEST(Mhsa, PermutationEquivariant) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    MhsaParams p = MhsaParams::init(8, 2, rng);
    Tensor x = random_tensor({2, 7, 8}, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor a = mhsa(permute_rows(x, perm), p, kEval);
    Tensor b = permute_rows(mhsa(x, p, kEval), perm);
    EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-6);
  }
}

TEST(Mhsa, GroupsAreIndependent) {
  std::mt19937_64 rng(6);
  MhsaParams p = MhsaParams::init(4, 2, rng);
  Tensor x = random_tensor({3, 5, 4}, rng);
  Tensor y = mhsa(x, p, kEval);
  for (std::size_t g = 0; g < 3; ++g) {
    Tensor single = mhsa(reshape(slice(x, 0, g, g + 1), {5, 4}), p, kEval);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(y.at(g * 20 + i), single.at(i), 1e-12);
  }
}

TEST(Mhsa, RejectsWrongWidth) {
  std::mt19937_64 rng(7);
  MhsaParams p = MhsaParams::init(8, 2, rng);
  EXPECT_THROW(mhsa(Tensor::zeros({3, 6}), p, kEval), DimensionError);
}

TEST(Mhsa, GradCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    MhsaParams p = MhsaParams::init(6, 2, rng);
    Tensor x = random_tensor({2, 4, 6}, rng), r = random_tensor({2, 4, 6}, rng);
    ParamRegistry reg;
    p.collect("attn", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    EXPECT_LT(grad_check([&] { return sum(mul(mhsa(x, p, kEval), r)); }, leaves), 1e-4);
  }
}

TEST(Ffn, ZeroWeightsGiveOutputBias) {
  std::mt19937_64 rng(8);
  FfnParams p = FfnParams::init(4, 6, 0.1, rng);
  p.l1.weight = Tensor::zeros({4, 6});
  p.l2.weight = Tensor::zeros({6, 4});
  Tensor y = ffn(random_tensor({3, 4}, rng), p, kEval);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.at(r * 4 + c), p.l2.bias.at(c));
}

TEST(Ffn, MatchesTwoLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    FfnParams p = FfnParams::init(5, 9, 0.1, rng);
    Tensor x = random_tensor({4, 5}, rng);
    std::vector<double> xv(x.data().begin(), x.data().end());
    auto h = rows_times(xv, 4, 5, p.l1.weight);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, h[i] + p.l1.bias.at(i % 9));
    auto ref = rows_times(h, 4, 9, p.l2.weight);
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] += p.l2.bias.at(i % 5);
    EXPECT_LT(max_abs_diff(ffn(x, p, kEval).data(), ref), 1e-10);
    // eval mode is deterministic regardless of the dropout rate
    EXPECT_EQ(max_abs_diff(ffn(x, p, kEval).data(), ffn(x, p, kEval).data()), 0.0);
  }
}

TEST(Ffn, GradCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    FfnParams p = FfnParams::init(4, 7, 0.2, rng);
    Tensor x = random_tensor({3, 4}, rng), r = random_tensor({3, 4}, rng);
    ParamRegistry reg;
    p.collect("ffn", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    auto f = [&] {
      std::mt19937_64 drop(seed + 50);
      return sum(mul(ffn(x, p, ForwardContext{Mode::Train, &drop}), r));
    };
    EXPECT_LT(grad_check(f, leaves), 1e-4);
  }
}

TEST(LayerNorm, RowsAreStandardized) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({5, 8}, rng, 3.0);
  Tensor y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r * 8 + c);
    m /= 8.0;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at(r * 8 + c) - m) * (y.at(r * 8 + c) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 8.0, 1.0, 1e-3);
  }
}

TEST(Transformer, EmptyStackIsIdentity) {
  std::mt19937_64 rng(10);
  TransformerStack st = TransformerStack::init(0, 8, 2, 16, 0.1, rng);
  Tensor x = random_tensor({2, 5, 8}, rng);
  EXPECT_EQ(max_abs_diff(transformer_stack(x, st, kEval).data(), x.data()), 0.0);
}

TEST(Transformer, SingleTokenReducesToNormalizedFfnPath) {
  std::mt19937_64 rng(11);
  TransformerUnit u = TransformerUnit::init(6, 2, 10, 0.1, rng);
  Tensor x = random_tensor({1, 6}, rng);
  // attention weight is 1, so the attention output is x W^V W^H per head
  Tensor attn = mhsa(x, u.attn, kEval);
  Tensor h = layer_norm(add(x, attn), u.norm1);
  Tensor ref = layer_norm(add(h, ffn(h, u.ff, kEval)), u.norm2);
  EXPECT_LT(max_abs_diff(transformer_unit(x, u, kEval).data(), ref.data()), 1e-12);
  std::vector<double> xv(x.data().begin(), x.data().end()), merged(6);
  for (std::size_t hd = 0; hd < 2; ++hd) {
    auto v = rows_times(xv, 1, 6, u.attn.wv[hd]);
    std::copy(v.begin(), v.end(), merged.begin() + static_cast<std::ptrdiff_t>(hd * 3));
  }
  EXPECT_LT(max_abs_diff(attn.data(), rows_times(merged, 1, 6, u.attn.wh)), 1e-12);
}

TEST(Transformer, UnitIsPermutationEquivariant) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    TransformerStack st = TransformerStack::init(2, 8, 2, 12, 0.1, rng);
    Tensor x = random_tensor({2, 6, 8}, rng);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor a = transformer_stack(permute_rows(x, perm), st, kEval);
    Tensor b = permute_rows(transformer_stack(x, st, kEval), perm);
    EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-6);
  }
}

TEST(Transformer, GradCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    TransformerUnit u = TransformerUnit::init(4, 2, 6, 0.1, rng);
    Tensor x = random_tensor({2, 3, 4}, rng), r = random_tensor({2, 3, 4}, rng);
    ParamRegistry reg;
    u.collect("unit", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    EXPECT_LT(grad_check([&] { return sum(mul(transformer_unit(x, u, kEval), r)); }, leaves), 1e-4);
  }
}

TEST(Registry, NamesAreStableAndUnique) {
  std::mt19937_64 rng(12);
  TransformerStack st = TransformerStack::init(2, 8, 2, 12, 0.1, rng);
  ParamRegistry reg;
  st.collect("irt", reg);
  std::vector<std::string> names;
  for (const auto& p : reg.params) names.push_back(p.name);
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "irt.u1.ffn.w2"), names.end());
}
