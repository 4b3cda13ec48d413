#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pirt/tensor.hpp"

namespace pirt {

enum class Mode { Train, Eval };

/// Per-forward state: layer mode plus the generator consumed by dropout.
struct ForwardContext {
  Mode mode = Mode::Eval;
  std::mt19937_64* rng = nullptr;
  bool training() const { return mode == Mode::Train; }
};

/// Uniform double in [0, 1) with a platform-independent bit recipe.
double uniform01(std::mt19937_64& rng);

// Elementwise with numpy-style broadcasting (right-aligned, extent 1 expands).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// x * mask where mask never receives gradient.
Tensor masked_mul(const Tensor& x, const Tensor& mask);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched matmul: [G,m,k] x [G,k,n] -> [G,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);

/// NHWC convolution; weight is [k,k,Cin,Cout], bias [Cout]. Kernel 3 uses
/// "same" padding (1), kernel 1 uses none.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1);

struct PoolWindow {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};
/// NHWC windowed max pooling; padded cells never win.
Tensor max_pool2d(const Tensor& x, const PoolWindow& window);
/// NHWC windowed average over the in-bounds cells of each window.
Tensor avg_pool2d(const Tensor& x, const PoolWindow& window);
/// [B,H,W,C] -> [B,C]
Tensor global_avg_pool(const Tensor& x);

struct RunningStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
  double eps = 1e-5;
  static RunningStats init(std::size_t channels);
};

/// Normalizes over every axis but the last (channels).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode);
/// [B, ..., C]: normalizes each (sample, channel) over the middle axes.
/// Running statistics are the batch average of the per-instance ones.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode);
/// Normalizes each row over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Inverted dropout. Eval mode (or p == 0) returns x itself.
Tensor dropout(const Tensor& x, double p, const ForwardContext& ctx);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
std::vector<Tensor> chunk(const Tensor& x, std::size_t pieces, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> indices;  // position along the reduced axis
};
MaxResult max(const Tensor& x, std::size_t axis, bool keepdim = false);

/// out[i] = x.flat[index[i]], reshaped to `shape`.
Tensor gather(const Tensor& x, std::span<const std::size_t> index, Shape shape);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Names of every primitive the engine differentiates.
std::vector<std::string> primitive_set();

}  // namespace pirt
