#include "pirt/layers.hpp"

#include <cmath>

#include "pirt/error.hpp"

namespace pirt {

std::vector<Tensor> ParamRegistry::param_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

Tensor uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return Tensor(shape, std::move(data), true);
}

// --- linear / conv / norms ---------------------------------------------------

LinearParams LinearParams::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return LinearParams{uniform_init({in, out}, in, rng), Tensor::zeros({out}, true)};
}

void LinearParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  reg.param(prefix + ".w", weight);
  reg.param(prefix + ".b", bias);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.shape().back() != weight.dim(0) || bias.numel() != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  std::size_t in = weight.dim(0), out = weight.dim(1);
  std::size_t rows = x.numel() / in;
  Tensor flat = x.rank() == 2 ? x : reshape(x, {rows, in});
  Tensor y = add(matmul(flat, weight), bias);
  if (x.rank() == 2) return y;
  Shape shape = x.shape();
  shape.back() = out;
  return reshape(y, shape);
}

Conv2dParams Conv2dParams::init(std::size_t kernel, std::size_t in, std::size_t out, std::size_t stride,
                                std::mt19937_64& rng) {
  return Conv2dParams{uniform_init({kernel, kernel, in, out}, kernel * kernel * in, rng), Tensor::zeros({out}, true),
                      stride};
}

void Conv2dParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  reg.param(prefix + ".w", weight);
  reg.param(prefix + ".b", bias);
}

NormParams NormParams::init(std::size_t channels) {
  return NormParams{Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true),
                    RunningStats::init(channels)};
}

void NormParams::collect(const std::string& prefix, ParamRegistry& reg, bool with_stats) const {
  reg.param(prefix + ".gamma", gamma);
  reg.param(prefix + ".beta", beta);
  if (with_stats) {
    reg.buffer(prefix + ".running_mean", stats.mean);
    reg.buffer(prefix + ".running_var", stats.var);
  }
}

// --- attention -----------------------------------------------------------------

MhsaParams MhsaParams::init(std::size_t d_model, std::size_t heads, std::mt19937_64& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  MhsaParams p;
  p.heads = heads;
  std::size_t dk = d_model / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    p.wq.push_back(uniform_init({d_model, dk}, d_model, rng));
    p.wk.push_back(uniform_init({d_model, dk}, d_model, rng));
    p.wv.push_back(uniform_init({d_model, dk}, d_model, rng));
  }
  p.wh = uniform_init({d_model, d_model}, d_model, rng);
  return p;
}

void MhsaParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  for (std::size_t h = 0; h < heads; ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    reg.param(hp + ".wq", wq[h]);
    reg.param(hp + ".wk", wk[h]);
    reg.param(hp + ".wv", wv[h]);
  }
  reg.param(prefix + ".wh", wh);
}

Tensor mhsa(const Tensor& x, const MhsaParams& params, const ForwardContext&, std::vector<Tensor>* attention) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("mhsa expects [n,d] or [G,n,d], got " + shape_str(x.shape()));
  std::size_t d = x.shape().back();
  if (d != params.d_model()) {
    throw DimensionError("mhsa: token width " + std::to_string(d) + " does not match d_model " +
                         std::to_string(params.d_model()));
  }
  std::size_t G = x.rank() == 3 ? x.dim(0) : 1;
  std::size_t n = x.rank() == 3 ? x.dim(1) : x.dim(0);
  std::size_t dk = params.d_k();
  Tensor flat = reshape(x, {G * n, d});
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  if (attention) attention->clear();
  for (std::size_t h = 0; h < params.heads; ++h) {
    Tensor q = reshape(matmul(flat, params.wq[h]), {G, n, dk});
    Tensor k = reshape(matmul(flat, params.wk[h]), {G, n, dk});
    Tensor v = reshape(matmul(flat, params.wv[h]), {G, n, dk});
    Tensor weights = softmax(mul_scalar(bmm(q, transpose(k, 1, 2)), scale), 2);
    if (attention) attention->push_back(weights);
    heads.push_back(bmm(weights, v));
  }
  Tensor merged = heads.size() == 1 ? heads[0] : concat(heads, 2);
  Tensor out = matmul(reshape(merged, {G * n, d}), params.wh);
  return reshape(out, x.shape());
}

// --- feed-forward / transformer ------------------------------------------------

FfnParams FfnParams::init(std::size_t d_model, std::size_t d_ff, double dropout, std::mt19937_64& rng) {
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ffn dropout must lie in [0, 1)");
  FfnParams p;
  p.l1 = LinearParams::init(d_model, d_ff, rng);
  p.l2 = LinearParams::init(d_ff, d_model, rng);
  p.dropout = dropout;
  return p;
}

void FfnParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  reg.param(prefix + ".w1", l1.weight);
  reg.param(prefix + ".b1", l1.bias);
  reg.param(prefix + ".w2", l2.weight);
  reg.param(prefix + ".b2", l2.bias);
}

Tensor ffn(const Tensor& x, const FfnParams& params, const ForwardContext& ctx) {
  if (x.shape().back() != params.l1.weight.dim(0) || params.l1.weight.dim(1) != params.l2.weight.dim(0)) {
    throw DimensionError("ffn: input " + shape_str(x.shape()) + " does not chain with " +
                         shape_str(params.l1.weight.shape()) + " and " + shape_str(params.l2.weight.shape()));
  }
  Tensor hidden = dropout(relu(linear(x, params.l1)), params.dropout, ctx);
  return linear(hidden, params.l2);
}

TransformerUnit TransformerUnit::init(std::size_t d_model, std::size_t heads, std::size_t d_ff, double dropout,
                                      std::mt19937_64& rng) {
  TransformerUnit u;
  u.attn = MhsaParams::init(d_model, heads, rng);
  u.ff = FfnParams::init(d_model, d_ff, dropout, rng);
  u.norm1 = NormParams::init(d_model);
  u.norm2 = NormParams::init(d_model);
  return u;
}

void TransformerUnit::collect(const std::string& prefix, ParamRegistry& reg) const {
  attn.collect(prefix + ".mhsa", reg);
  ff.collect(prefix + ".ffn", reg);
  norm1.collect(prefix + ".ln1", reg, false);
  norm2.collect(prefix + ".ln2", reg, false);
}

Tensor transformer_unit(const Tensor& x, const TransformerUnit& unit, const ForwardContext& ctx) {
  Tensor h = layer_norm(add(x, mhsa(x, unit.attn, ctx)), unit.norm1);
  return layer_norm(add(h, ffn(h, unit.ff, ctx)), unit.norm2);
}

TransformerStack TransformerStack::init(std::size_t n_units, std::size_t d_model, std::size_t heads, std::size_t d_ff,
                                        double dropout, std::mt19937_64& rng) {
  TransformerStack s;
  for (std::size_t i = 0; i < n_units; ++i) s.units.push_back(TransformerUnit::init(d_model, heads, d_ff, dropout, rng));
  return s;
}

void TransformerStack::collect(const std::string& prefix, ParamRegistry& reg) const {
  for (std::size_t i = 0; i < units.size(); ++i) units[i].collect(prefix + ".u" + std::to_string(i), reg);
}

Tensor transformer_stack(const Tensor& x, const TransformerStack& stack, const ForwardContext& ctx) {
  Tensor h = x;
  for (const auto& unit : stack.units) h = transformer_unit(h, unit, ctx);
  return h;
}

}  // namespace pirt
