#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pirt/ops.hpp"
#include "pirt/tensor.hpp"

namespace pirt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Flat, ordered view over a module tree: trainable parameters and
/// non-trainable buffers (running statistics), each under a stable dotted name.
struct ParamRegistry {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;

  void param(const std::string& name, const Tensor& t) { params.push_back({name, t}); }
  void buffer(const std::string& name, const Tensor& t) { buffers.push_back({name, t}); }
  std::vector<Tensor> param_tensors() const;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static LinearParams init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// X W + b over the last axis of X (leading axes are flattened and restored).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
inline Tensor linear(const Tensor& x, const LinearParams& p) { return linear(x, p.weight, p.bias); }

struct Conv2dParams {
  Tensor weight;  // [k, k, Cin, Cout]
  Tensor bias;    // [Cout]
  std::size_t stride = 1;

  static Conv2dParams init(std::size_t kernel, std::size_t in, std::size_t out, std::size_t stride,
                           std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

inline Tensor conv2d(const Tensor& x, const Conv2dParams& p) { return conv2d(x, p.weight, p.bias, p.stride); }

struct NormParams {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;  // unused by layer norm

  static NormParams init(std::size_t channels);
  void collect(const std::string& prefix, ParamRegistry& reg, bool with_stats = true) const;
};

inline Tensor batch_norm(const Tensor& x, NormParams& p, Mode mode) {
  return batch_norm(x, p.gamma, p.beta, p.stats, mode);
}
inline Tensor instance_norm(const Tensor& x, NormParams& p, Mode mode) {
  return instance_norm(x, p.gamma, p.beta, p.stats, mode);
}
inline Tensor layer_norm(const Tensor& x, const NormParams& p) { return layer_norm(x, p.gamma, p.beta); }

/// Multi-head self-attention with per-head projections W^Q_i, W^K_i, W^V_i
/// (d_model x d_k, d_k = d_model / heads) and a head-merge projection W^H.
struct MhsaParams {
  std::vector<Tensor> wq, wk, wv;
  Tensor wh;  // [d_model, d_model]
  std::size_t heads = 1;

  std::size_t d_model() const { return wh.dim(0); }
  std::size_t d_k() const { return d_model() / heads; }

  static MhsaParams init(std::size_t d_model, std::size_t heads, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// x is [n, d_model] or a batch of independent token sets [G, n, d_model].
/// When `attention` is given it receives one [G, n, n] weight tensor per head.
Tensor mhsa(const Tensor& x, const MhsaParams& params, const ForwardContext& ctx,
            std::vector<Tensor>* attention = nullptr);

struct FfnParams {
  LinearParams l1;  // d_model -> d_ff
  LinearParams l2;  // d_ff -> d_model
  double dropout = 0.1;

  static FfnParams init(std::size_t d_model, std::size_t d_ff, double dropout, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// Dropout(ReLU(X W1 + b1)) W2 + b2
Tensor ffn(const Tensor& x, const FfnParams& params, const ForwardContext& ctx);

/// Post-norm encoder unit: X <- LN(X + MHSA(X)); X <- LN(X + FFN(X)).
struct TransformerUnit {
  MhsaParams attn;
  FfnParams ff;
  NormParams norm1, norm2;

  static TransformerUnit init(std::size_t d_model, std::size_t heads, std::size_t d_ff, double dropout,
                              std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

Tensor transformer_unit(const Tensor& x, const TransformerUnit& unit, const ForwardContext& ctx);

struct TransformerStack {
  std::vector<TransformerUnit> units;

  static TransformerStack init(std::size_t n_units, std::size_t d_model, std::size_t heads, std::size_t d_ff,
                               double dropout, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

Tensor transformer_stack(const Tensor& x, const TransformerStack& stack, const ForwardContext& ctx);

}  // namespace pirt
