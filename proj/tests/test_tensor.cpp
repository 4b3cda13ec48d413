#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pirt/error.hpp"
#include "pirt/grad_check.hpp"
#include "pirt/ops.hpp"
#include "util.hpp"

using namespace pirt;
using testutil::random_tensor;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a.at(i * k + p) * b.at(p * n + j);
  return out;
}

// Zero-padded direct convolution, NHWC input and [k,k,Cin,Cout] weights.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3), k = w.dim(0), Cout = w.dim(3);
  long pad = static_cast<long>(k / 2);
  std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t co = 0; co < Cout; ++co) {
          double acc = b.at(co);
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              long iy = static_cast<long>(oy * stride + ky) - pad, ix = static_cast<long>(ox * stride + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                acc += x.at(((n * H + iy) * W + ix) * Cin + ci) * w.at(((ky * k + kx) * Cin + ci) * Cout + co);
              }
            }
          out.push_back(acc);
        }
  return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, SmallKnownProduct) {
  Tensor r = matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ZerosGiveZeros) {
  std::mt19937_64 rng(1);
  Tensor r = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
  EXPECT_EQ(r.shape(), (Shape{2, 4}));
  for (double v : r.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = random_tensor({7, 13}, rng), b = random_tensor({13, 5}, rng);
    auto ref = naive_matmul(a, b);
    EXPECT_LT(testutil::max_abs_diff(matmul(a, b).data(), ref), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Bmm, MatchesPerBatchMatmul) {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({3, 4, 5}, rng), b = random_tensor({3, 5, 2}, rng);
  Tensor r = bmm(a, b);
  for (std::size_t g = 0; g < 3; ++g) {
    Tensor ag = reshape(slice(a, 0, g, g + 1), {4, 5}), bg = reshape(slice(b, 0, g, g + 1), {5, 2});
    auto ref = naive_matmul(ag, bg);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(r.at(g * 8 + i), ref[i], 1e-12);
  }
}

TEST(Softmax, ZerosAreUniform) {
  Tensor s = softmax(Tensor({3}, {0, 0, 0}), 0);
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, KnownValues) {
  Tensor s = softmax(Tensor({3}, {1, 2, 3}), 0);
  EXPECT_NEAR(s.at(0), 0.09003, 5e-6);
  EXPECT_NEAR(s.at(1), 0.24473, 5e-6);
  EXPECT_NEAR(s.at(2), 0.66524, 5e-6);
}

TEST(Softmax, SlicesSumToOneAndIgnoreShifts) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({4, 6}, rng, 10.0);
    Tensor s = softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 6; ++c) total += s.at(r * 6 + c);
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
    Tensor shifted = softmax(add_scalar(x, 123.5), 1);
    EXPECT_LT(testutil::max_abs_diff(s.data(), shifted.data()), 1e-6);
    Tensor cols = softmax(x, 0);
    for (std::size_t c = 0; c < 6; ++c) {
      double total = 0.0;
      for (std::size_t r = 0; r < 4; ++r) total += cols.at(r * 6 + c);
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, LogSoftmaxIsLogOfSoftmax) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({3, 5}, rng, 5.0);
  Tensor a = log_softmax(x, 1), b = softmax(x, 1);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(a.at(i), std::log(b.at(i)), 1e-12);
}

TEST(Elementwise, Relu) {
  Tensor r = relu(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, BroadcastTrailingAxes) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = add(a, Tensor({3}, {10, 20, 30}));
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  Tensor c = mul(a, Tensor({2, 1}, {2, 3}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{2, 4, 6, 12, 15, 18}));
  EXPECT_THROW(add(a, Tensor::zeros({2})), DimensionError);
}

TEST(Elementwise, LogOfNonPositiveIsNumericError) {
  EXPECT_THROW(pirt::log(Tensor({2}, {1.0, 0.0})), NumericError);
}

TEST(Pooling, GlobalAverageOfConstantMap) {
  Tensor g = global_avg_pool(Tensor::full({2, 4, 3, 5}, 2.5));
  EXPECT_EQ(g.shape(), (Shape{2, 5}));
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Pooling, MaxPoolKernelOneIsIdentity) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 5, 4, 3}, rng);
  Tensor y = max_pool2d(x, PoolWindow{});
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(testutil::max_abs_diff(x.data(), y.data()), 0.0);
}

TEST(Pooling, WindowedMaxDominatesCentre) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 6, 5, 3}, rng);
  Tensor y = max_pool2d(x, PoolWindow{3, 3, 1, 1, 1, 1});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_GE(y.at(i), x.at(i));
}

TEST(Pooling, AvgPoolMatchesLoop) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({1, 4, 4, 2}, rng);
  Tensor y = avg_pool2d(x, PoolWindow{2, 2, 2, 2, 0, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox)
      for (std::size_t c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) acc += x.at(((2 * oy + dy) * 4 + 2 * ox + dx) * 2 + c);
        EXPECT_NEAR(y.at((oy * 2 + ox) * 2 + c), acc / 4.0, 1e-15);
      }
}

TEST(Conv2d, MatchesDirectLoop) {
  for (std::size_t stride : {1, 2}) {
    std::mt19937_64 rng(stride);
    Tensor x = random_tensor({2, 7, 5, 3}, rng), w = random_tensor({3, 3, 3, 4}, rng), b = random_tensor({4}, rng);
    auto ref = naive_conv(x, w, b, stride);
    Tensor y = conv2d(x, w, b, stride);
    ASSERT_EQ(y.numel(), ref.size());
    EXPECT_LT(testutil::max_abs_diff(y.data(), ref), 1e-12);
  }
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({1, 3, 3, 4}, rng), w = random_tensor({1, 1, 4, 2}, rng), b = random_tensor({2}, rng);
  EXPECT_LT(testutil::max_abs_diff(conv2d(x, w, b, 1).data(), naive_conv(x, w, b, 1)), 1e-12);
}

TEST(Norm, BatchNormTrainStandardizesChannels) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({4, 3, 2, 5}, rng, 3.0);
  RunningStats st = RunningStats::init(5);
  Tensor y = batch_norm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}), st, Mode::Train);
  for (std::size_t c = 0; c < 5; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = c; i < y.numel(); i += 5) m += y.at(i);
    m /= 24.0;
    for (std::size_t i = c; i < y.numel(); i += 5) v += (y.at(i) - m) * (y.at(i) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 24.0, 1.0, 1e-3);  // eps = 1e-5 in the denominator
  }
}

TEST(Norm, RunningStatsFollowMomentum) {
  Tensor x({4, 1}, {1, 2, 3, 4});
  RunningStats st = RunningStats::init(1);
  batch_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st, Mode::Train);
  EXPECT_NEAR(st.mean.at(0), 0.1 * 2.5, 1e-15);
  // unbiased batch variance 5/3 blended into the initial 1
  EXPECT_NEAR(st.var.at(0), 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
  Tensor y = batch_norm(Tensor({1, 1}, {0.25}), Tensor::full({1}, 2.0), Tensor::full({1}, 1.0), st, Mode::Eval);
  EXPECT_NEAR(y.at(0), 2.0 * (0.25 - st.mean.at(0)) / std::sqrt(st.var.at(0) + 1e-5) + 1.0, 1e-12);
}

TEST(Norm, InstanceNormStandardizesEachImage) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({2, 3, 3, 2}, rng, 2.0);
  RunningStats st = RunningStats::init(2);
  Tensor y = instance_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), st, Mode::Train);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0.0;
      for (std::size_t p = 0; p < 9; ++p) m += y.at((b * 9 + p) * 2 + c);
      EXPECT_NEAR(m / 9.0, 0.0, 1e-12);
    }
}

TEST(Dropout, EvalModeIsExactIdentity) {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({5, 7}, rng);
  Tensor y = dropout(x, 0.1, ForwardContext{Mode::Eval, nullptr});
  EXPECT_EQ(testutil::max_abs_diff(x.data(), y.data()), 0.0);
}

TEST(Dropout, TrainModeIsDeterministicForAFixedSeed) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({50, 8}, rng);
  std::mt19937_64 r1(99), r2(99);
  Tensor a = dropout(x, 0.3, ForwardContext{Mode::Train, &r1});
  Tensor b = dropout(x, 0.3, ForwardContext{Mode::Train, &r2});
  EXPECT_EQ(testutil::max_abs_diff(a.data(), b.data()), 0.0);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.at(i) == 0.0) {
      ++zeros;
    } else {
      EXPECT_NEAR(a.at(i), x.at(i) / 0.7, 1e-12);
    }
  }
  EXPECT_GT(zeros, 60u);
  EXPECT_LT(zeros, 180u);
}

TEST(ShapeOps, ChunkThenConcatIsBitExact) {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({3, 8, 5}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    std::size_t pieces = axis == 0 ? 3 : (axis == 1 ? 4 : 5);
    auto parts = chunk(x, pieces, axis);
    Tensor y = concat(parts, axis);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_EQ(testutil::max_abs_diff(x.data(), y.data()), 0.0);
  }
}

TEST(ShapeOps, TransposeSwapsAxes) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose(x, 0, 1);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(Autodiff, SumHasUnitGradient) {
  Tensor x({3}, {0.5, -2, 7}, true);
  {
    Tape tape;
    TapeGuard guard(tape);
    backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, SquareHasLinearGradient) {
  Tensor x({2}, {1, 2}, true);
  {
    Tape tape;
    TapeGuard guard(tape);
    backward(sum(mul(x, x)));
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Autodiff, NothingIsRecordedWithoutATape) {
  Tensor x({2}, {1, 2}, true);
  Tensor y = mul(x, x);
  EXPECT_EQ(Tape::active(), nullptr);
  EXPECT_FALSE(y.has_grad());
}

TEST(Autodiff, ReusedInputAccumulates) {
  Tensor x({1}, {3.0}, true);
  {
    Tape tape;
    TapeGuard guard(tape);
    Tensor y = add(mul(x, x), mul_scalar(x, 5.0));
    backward(sum(y));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 11.0);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(15);
  Tensor x = random_tensor({4, 3}, rng);
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(t); }, x), 1e-10);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor logits = random_tensor({4, 6}, rng, 3.0);
    std::vector<double> onehot(24, 0.0);
    for (std::size_t i = 0; i < 4; ++i) onehot[i * 6 + (i * 5 + seed) % 6] = 1.0;
    Tensor target({4, 6}, onehot);
    auto f = [&](const Tensor& t) { return neg(mean(sum(mul(log_softmax(t, 1), target), 1))); };
    EXPECT_LT(grad_check(f, logits), 1e-6);
  }
}

TEST(Serialization, RoundTripAndTruncation) {
  std::mt19937_64 rng(16);
  Tensor x = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, x);
  std::string bytes = ss.str();
  EXPECT_EQ(bytes.size(), 8u + 3 * 8u + 24 * 8u);
  std::stringstream in(bytes);
  Tensor y = read_tensor(in);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(testutil::max_abs_diff(x.data(), y.data()), 0.0);
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_tensor(cut), FormatError);
}

TEST(Serialization, LittleEndianLayout) {
  std::stringstream ss;
  write_tensor(ss, Tensor({1}, {1.0}));
  std::string b = ss.str();
  ASSERT_EQ(b.size(), 24u);
  EXPECT_EQ(static_cast<unsigned char>(b[0]), 1u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);  // extent
  EXPECT_EQ(static_cast<unsigned char>(b[23]), 0x3fu);  // 1.0 = 0x3ff0000000000000
  EXPECT_EQ(static_cast<unsigned char>(b[22]), 0xf0u);
}
