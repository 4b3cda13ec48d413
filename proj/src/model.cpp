#include "pirt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "pirt/error.hpp"

namespace pirt {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (image_h == 0 || image_w == 0 || image_h % 4 != 0 || image_w % 4 != 0) {
    fail("image extents must be positive multiples of 4");
  }
  if (feature_h() % 4 != 0) fail("feature height " + std::to_string(feature_h()) + " must be divisible by 4");
  if (feature_w() % 2 != 0) fail("feature width " + std::to_string(feature_w()) + " must be divisible by 2");
  if (channels < 4 || channels % 4 != 0) fail("channel count must be a positive multiple of 4");
  if (heads == 0 || channels % heads != 0) fail("channels must be divisible by the head count");
  if (d() == 0 || d() % heads != 0) fail("IRM width d must be divisible by the head count");
  if (ffn_hidden == 0) fail("ffn hidden width must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (num_classes < 2) fail("at least two identity classes are required");
  if (expand_kernel == 0 || expand_kernel % 2 == 0) fail("heatmap expansion kernel must be odd");
  if (margin < 0.0) fail("triplet margin must be non-negative");
}

Tensor ModelOutput::retrieval_global() const {
  return mul_scalar(add(neck[kStripeHead], neck[kPatchHead]), 0.5);
}

// --- parameter blocks --------------------------------------------------------

BackboneParams BackboneParams::init(std::size_t channels, std::mt19937_64& rng) {
  BackboneParams p;
  std::array<std::size_t, 5> widths{3, channels / 4, channels / 2, channels, channels};
  std::array<std::size_t, 4> strides{1, 2, 2, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    p.conv[i] = Conv2dParams::init(3, widths[i], widths[i + 1], strides[i], rng);
    p.norm[i] = NormParams::init(widths[i + 1]);
  }
  return p;
}

void BackboneParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  for (std::size_t i = 0; i < 4; ++i) {
    conv[i].collect(prefix + ".conv" + std::to_string(i + 1), reg);
    norm[i].collect(prefix + ".bn" + std::to_string(i + 1), reg);
  }
}

IrmParams IrmParams::init(std::size_t channels, std::size_t d, std::size_t heads, double dropout,
                          std::mt19937_64& rng) {
  IrmParams p;
  p.dropout = dropout;
  p.phi_conv = Conv2dParams::init(1, channels, d, 1, rng);
  p.phi_in = NormParams::init(d);
  p.phi_bn = NormParams::init(d);
  p.stripe_attn = MhsaParams::init(d, heads, rng);
  p.stage2_bn = NormParams::init(d);
  p.theta_conv = Conv2dParams::init(1, d, channels, 1, rng);
  p.theta_bn = NormParams::init(channels);
  return p;
}

void IrmParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  phi_conv.collect(prefix + ".phi.conv", reg);
  phi_in.collect(prefix + ".phi.in", reg);
  phi_bn.collect(prefix + ".phi.bn", reg);
  stripe_attn.collect(prefix + ".mhsa", reg);
  stage2_bn.collect(prefix + ".stage2.bn", reg);
  theta_conv.collect(prefix + ".theta.conv", reg);
  theta_bn.collect(prefix + ".theta.bn", reg);
}

CsmParams CsmParams::init(std::size_t channels, std::mt19937_64& rng) {
  std::size_t hidden = std::max<std::size_t>(1, channels / 2);
  return CsmParams{LinearParams::init(channels, hidden, rng), LinearParams::init(hidden, 1, rng)};
}

void CsmParams::collect(const std::string& prefix, ParamRegistry& reg) const {
  l1.collect(prefix + ".l1", reg);
  l2.collect(prefix + ".l2", reg);
}

// --- stages --------------------------------------------------------------------

Tensor backbone_forward(const Tensor& image, BackboneParams& params, Mode mode) {
  if (image.rank() != 4 || image.dim(3) != 3) {
    throw DimensionError("backbone expects [B,H,W,3] images, got " + shape_str(image.shape()));
  }
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
    throw ConfigError("image extents " + shape_str(image.shape()) + " are not divisible by 4");
  }
  Tensor h = image;
  for (std::size_t i = 0; i < 4; ++i) h = relu(batch_norm(conv2d(h, params.conv[i]), params.norm[i], mode));
  return h;
}

Tensor irm_forward(const Tensor& features, const Tensor& mask, IrmParams& params, const ForwardContext& ctx) {
  if (features.rank() != 4) throw DimensionError("irm expects [B,H,W,C], got " + shape_str(features.shape()));
  std::size_t B = features.dim(0), H = features.dim(1), W = features.dim(2);
  if (mask.rank() != 4 || mask.dim(0) != B || mask.dim(1) != H || mask.dim(2) != W || mask.dim(3) != 1) {
    throw DimensionError("irm: mask " + shape_str(mask.shape()) + " does not match feature grid " +
                         shape_str(features.shape()));
  }
  // stage 1: phi
  Tensor phi = relu(batch_norm(instance_norm(conv2d(features, params.phi_conv), params.phi_in, ctx.mode),
                               params.phi_bn, ctx.mode));
  std::size_t d = phi.dim(3);
  // stage 2: every row of the grid is an independent stripe of W tokens
  Tensor stripes = reshape(phi, {B * H, W, d});
  Tensor attended = reshape(mhsa(stripes, params.stripe_attn, ctx), {B, H, W, d});
  Tensor stage2 = relu(batch_norm(add(attended, dropout(phi, params.dropout, ctx)), params.stage2_bn, ctx.mode));
  // stage 3: theta plus the mask-weighted input
  Tensor theta = batch_norm(conv2d(stage2, params.theta_conv), params.theta_bn, ctx.mode);
  return relu(add(theta, masked_mul(features, mask)));
}

PartTokenSet partition(const Tensor& features, PartKind kind, std::span<const HeatmapStack> stacks, double tau) {
  if (features.rank() != 4) throw DimensionError("partition expects [B,H,W,C], got " + shape_str(features.shape()));
  std::size_t B = features.dim(0), H = features.dim(1), W = features.dim(2), C = features.dim(3);
  PartTokenSet out;
  out.kind = kind;
  switch (kind) {
    case PartKind::Stripe:
      out.tokens = mean(features, 2);
      out.visible.assign(B, std::vector<bool>(H, true));
      return out;
    case PartKind::Patch: {
      if (H % 4 != 0 || W % 2 != 0) {
        throw ConfigError("patch partition needs H divisible by 4 and W by 2, got " + shape_str(features.shape()));
      }
      Tensor pooled = max_pool2d(features, PoolWindow{4, 2, 4, 2, 0, 0});
      std::size_t n = (H / 4) * (W / 2);
      out.tokens = reshape(pooled, {B, n, C});
      out.visible.assign(B, std::vector<bool>(n, true));
      return out;
    }
    case PartKind::Pose:
      return pose_part_pool(stacks, features, tau);
  }
  throw ContractError("unknown partition kind");
}

Tensor irt_forward(const PartTokenSet& tokens, const TransformerStack& stack, const ForwardContext& ctx) {
  if (tokens.tokens.rank() != 3 || tokens.size() == 0) throw ContractError("irt_forward on an empty token set");
  if (tokens.kind != PartKind::Pose || stack.units.empty()) return transformer_stack(tokens.tokens, stack, ctx);
  std::vector<Tensor> outputs;
  std::size_t begin = 0;
  const auto& groups = tokens.groups;
  while (begin < groups.size()) {
    std::size_t end = begin;
    while (end < groups.size() && groups[end] == groups[begin]) ++end;
    outputs.push_back(transformer_stack(slice(tokens.tokens, 1, begin, end), stack, ctx));
    begin = end;
  }
  return outputs.size() == 1 ? outputs[0] : concat(outputs, 1);
}

Tensor branch_embed(const Tensor& tokens) {
  if (tokens.rank() != 3) throw DimensionError("branch_embed expects [B,N,C], got " + shape_str(tokens.shape()));
  return mean(tokens, 1);
}

Tensor group_embed(const Tensor& pose_tokens, std::span<const BodyGroup> groups) {
  if (pose_tokens.rank() != 3 || pose_tokens.dim(1) != groups.size()) {
    throw DimensionError("group_embed: tokens " + shape_str(pose_tokens.shape()) + " vs " +
                         std::to_string(groups.size()) + " group labels");
  }
  std::vector<Tensor> rows;
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    auto [lo, hi] = group_range(static_cast<BodyGroup>(g));
    for (std::size_t i = lo; i < hi; ++i) {
      if (static_cast<std::size_t>(groups[i]) != g) throw ContractError("pose tokens are not in COCO group order");
    }
    rows.push_back(mean(slice(pose_tokens, 1, lo, hi), 1, true));
  }
  return concat(rows, 1);
}

Tensor csm_scores(const Tensor& pose_hat, const CsmParams& params) {
  if (pose_hat.rank() != 3 || pose_hat.dim(1) != kNumGroups) {
    throw DimensionError("csm expects [B,3,C], got " + shape_str(pose_hat.shape()));
  }
  Tensor s = linear(relu(linear(pose_hat, params.l1)), params.l2);
  return reshape(s, {pose_hat.dim(0), kNumGroups});
}

ConfidenceResult apply_confidence(const Tensor& pose_hat, const Tensor& self_scores, const Tensor& pose_scores) {
  std::size_t B = pose_hat.dim(0);
  if (self_scores.shape() != Shape{B, kNumGroups} || pose_scores.shape() != Shape{B, kNumGroups}) {
    throw DimensionError("apply_confidence: scores must be [B,3]");
  }
  Tensor raw = mul(sigmoid(self_scores), pose_scores);
  Tensor combined = div(raw, add_scalar(sum(raw, 1, true), 1e-8));
  Tensor weighted = mul(pose_hat, reshape(combined, {B, kNumGroups, 1}));
  return {weighted, combined};
}

Tensor mask_tensor(std::span<const HeatmapStack> expanded) {
  if (expanded.empty()) throw ContractError("mask_tensor needs at least one stack");
  std::size_t H = expanded[0].height, W = expanded[0].width;
  std::vector<double> data;
  data.reserve(expanded.size() * H * W);
  for (const auto& s : expanded) {
    HumanMask m = merge_mask(s);
    if (m.height != H || m.width != W) throw DimensionError("heatmap stacks disagree on grid size");
    data.insert(data.end(), m.values.begin(), m.values.end());
  }
  return Tensor({expanded.size(), H, W, 1}, std::move(data));
}

Tensor group_score_tensor(std::span<const HeatmapStack> expanded) {
  std::vector<double> data;
  for (const auto& s : expanded) data.insert(data.end(), s.group_scores.begin(), s.group_scores.end());
  return Tensor({expanded.size(), kNumGroups}, std::move(data));
}

// --- model -------------------------------------------------------------------------

PirtModel::PirtModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t C = config_.channels;
  backbone = BackboneParams::init(C, rng);
  irm = IrmParams::init(C, config_.d(), config_.heads, config_.dropout, rng);
  auto stack = [&]() {
    return TransformerStack::init(config_.n_units, C, config_.heads, config_.ffn_hidden, config_.dropout, rng);
  };
  stripe_irt = stack();
  patch_irt = stack();
  pose_irt = stack();
  csm = CsmParams::init(C, rng);
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    necks[h] = NormParams::init(C);
    classifiers[h] = LinearParams::init(C, config_.num_classes, rng);
  }
}

namespace {
const char* head_name(std::size_t h) {
  static const char* names[kNumHeads] = {"stripe", "patch", "pose0", "pose1", "pose2"};
  return names[h];
}
}  // namespace

ParamRegistry PirtModel::registry() const {
  ParamRegistry reg;
  backbone.collect("backbone", reg);
  irm.collect("irm", reg);
  stripe_irt.collect("irt.stripe", reg);
  patch_irt.collect("irt.patch", reg);
  pose_irt.collect("irt.pose", reg);
  csm.collect("csm", reg);
  for (std::size_t h = 0; h < kNumHeads; ++h) {
    necks[h].collect(std::string("neck.") + head_name(h), reg);
    classifiers[h].collect(std::string("head.") + head_name(h), reg);
  }
  return reg;
}

ModelOutput PirtModel::forward(const Tensor& images, std::span<const HeatmapStack> heatmaps,
                               const ForwardContext& ctx) {
  if (images.rank() != 4 || images.dim(1) != config_.image_h || images.dim(2) != config_.image_w) {
    throw DimensionError("model expects [B," + std::to_string(config_.image_h) + "," +
                         std::to_string(config_.image_w) + ",3] images, got " + shape_str(images.shape()));
  }
  std::size_t B = images.dim(0);
  std::size_t Hf = config_.feature_h(), Wf = config_.feature_w();
  ModelOutput out;
  out.has_pose = config_.use_pose;

  std::vector<HeatmapStack> expanded;
  Tensor mask = Tensor::full({B, Hf, Wf, 1}, 1.0);
  if (config_.use_pose) {
    if (heatmaps.size() != B) throw DimensionError("one heatmap stack per image is required");
    expanded.reserve(B);
    for (const auto& s : heatmaps) {
      expanded.push_back(expand_heatmaps(resize_heatmaps(s, Hf, Wf), config_.expand_kernel));
    }
    mask = mask_tensor(expanded);
  }

  Tensor features = backbone_forward(images, backbone, ctx.mode);
  Tensor f_irm = config_.use_intra ? irm_forward(features, mask, irm, ctx) : features;

  auto run_branch = [&](const PartTokenSet& tokens, const TransformerStack& stack) {
    return config_.use_inter ? irt_forward(tokens, stack, ctx) : tokens.tokens;
  };
  out.f_stripe = branch_embed(run_branch(partition(f_irm, PartKind::Stripe), stripe_irt));
  out.f_patch = branch_embed(run_branch(partition(f_irm, PartKind::Patch), patch_irt));
  out.f_global = mul_scalar(add(out.f_stripe, out.f_patch), 0.5);

  out.neck.resize(config_.use_pose ? std::size_t{kNumHeads} : std::size_t{2});
  out.neck[kStripeHead] = batch_norm(out.f_stripe, necks[kStripeHead], ctx.mode);
  out.neck[kPatchHead] = batch_norm(out.f_patch, necks[kPatchHead], ctx.mode);

  if (config_.use_pose) {
    PartTokenSet pose = partition(f_irm, PartKind::Pose, expanded, config_.tau);
    out.pose_hat = group_embed(run_branch(pose, pose_irt), pose.groups);
    out.self_scores = csm_scores(out.pose_hat, csm);
    auto conf = apply_confidence(out.pose_hat, out.self_scores, group_score_tensor(expanded));
    out.pose_tilde = conf.weighted;
    out.combined = conf.combined;
    for (std::size_t g = 0; g < kNumGroups; ++g) {
      Tensor row = reshape(slice(out.pose_tilde, 1, g, g + 1), {B, config_.channels});
      out.neck[kPoseHead0 + g] = batch_norm(row, necks[kPoseHead0 + g], ctx.mode);
    }
    for (std::size_t b = 0; b < B; ++b) {
      out.group_visible.push_back(group_visibility(pose, b));
      out.group_scores.push_back(expanded[b].group_scores);
    }
  }
  for (std::size_t h = 0; h < out.neck.size(); ++h) out.logits.push_back(linear(out.neck[h], classifiers[h]));
  return out;
}

// --- losses --------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [B,K] logits, got " + shape_str(logits.shape()));
  std::size_t B = logits.dim(0), K = logits.dim(1);
  if (K < 2) throw ContractError("cross_entropy needs at least two classes");
  if (labels.size() != B) throw ContractError("cross_entropy: label count does not match batch");
  std::vector<std::size_t> idx(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K) {
      throw ContractError("label " + std::to_string(labels[b]) + " out of range for " + std::to_string(K) + " classes");
    }
    idx[b] = b * K + static_cast<std::size_t>(labels[b]);
  }
  return neg(mean(gather(log_softmax(logits, 1), idx, {B})));
}

Tensor hard_triplet(const Tensor& embeddings, std::span<const int> labels, double margin) {
  if (embeddings.rank() != 2) throw DimensionError("hard_triplet expects [B,C], got " + shape_str(embeddings.shape()));
  std::size_t B = embeddings.dim(0);
  if (labels.size() != B) throw ContractError("hard_triplet: label count does not match batch");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw ContractError("hard_triplet needs at least two identities in the batch");
  for (auto [label, n] : counts) {
    if (n < 2) throw ContractError("identity " + std::to_string(label) + " has a single sample in the batch");
  }
  Tensor sq = sum(mul(embeddings, embeddings), 1, true);
  Tensor unit = div(embeddings, sqrt(add_scalar(sq, 1e-12)));
  Tensor norms = sum(mul(unit, unit), 1, true);                        // [B,1]
  Tensor gram = matmul(unit, transpose(unit, 0, 1));                   // [B,B]
  Tensor d2 = sub(add(norms, transpose(norms, 0, 1)), mul_scalar(gram, 2.0));
  Tensor dist = sqrt(clamp_min(d2, 1e-12));
  auto dv = dist.data();
  std::vector<std::size_t> pos(B), negi(B);
  for (std::size_t a = 0; a < B; ++a) {
    double best_pos = -1.0, best_neg = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < B; ++j) {
      double v = dv[a * B + j];
      if (labels[j] == labels[a]) {
        if (j != a && v > best_pos) {
          best_pos = v;
          pos[a] = a * B + j;
        }
      } else if (v < best_neg) {
        best_neg = v;
        negi[a] = a * B + j;
      }
    }
  }
  Tensor d_pos = gather(dist, pos, {B});
  Tensor d_neg = gather(dist, negi, {B});
  return mean(relu(add_scalar(sub(d_pos, d_neg), margin)));
}

LossBreakdown loss_total(const ModelOutput& output, std::span<const int> labels, double margin) {
  if (output.logits.size() < 2) throw ConfigError("loss_total needs the stripe and patch heads");
  Tensor global = add(cross_entropy(output.logits[kStripeHead], labels), cross_entropy(output.logits[kPatchHead], labels));
  Tensor local = Tensor::scalar(0.0);
  if (output.has_pose) {
    if (output.logits.size() != kNumHeads) throw ConfigError("loss_total: missing pose-group heads");
    std::vector<Tensor> terms;
    for (std::size_t g = 0; g < kNumGroups; ++g) {
      terms.push_back(add(cross_entropy(output.logits[kPoseHead0 + g], labels),
                          hard_triplet(output.neck[kPoseHead0 + g], labels, margin)));
    }
    local = mul_scalar(add(add(terms[0], terms[1]), terms[2]), 1.0 / static_cast<double>(kNumGroups));
  }
  return {local, global, add(local, global)};
}

}  // namespace pirt
