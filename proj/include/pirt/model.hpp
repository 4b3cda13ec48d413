#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "pirt/layers.hpp"
#include "pirt/pose.hpp"

namespace pirt {

struct ModelConfig {
  std::size_t image_h = 64;
  std::size_t image_w = 32;
  std::size_t channels = 64;    // C
  std::size_t bottleneck = 0;   // d; 0 selects C/2
  std::size_t heads = 4;
  std::size_t n_units = 3;
  std::size_t ffn_hidden = 512;
  double dropout = 0.1;
  std::size_t num_classes = 16;
  bool use_pose = true;
  bool use_intra = true;
  bool use_inter = true;
  double tau = 0.001;
  std::size_t expand_kernel = 3;
  double margin = 0.3;

  std::size_t feature_h() const { return image_h / 4; }
  std::size_t feature_w() const { return image_w / 4; }
  std::size_t d() const { return bottleneck ? bottleneck : channels / 2; }
  /// Throws ConfigError on inconsistent extents.
  void validate() const;
};

struct BackboneParams {
  std::array<Conv2dParams, 4> conv;
  std::array<NormParams, 4> norm;

  static BackboneParams init(std::size_t channels, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

struct IrmParams {
  Conv2dParams phi_conv;  // 1x1, C -> d
  NormParams phi_in, phi_bn;
  MhsaParams stripe_attn;
  NormParams stage2_bn;
  Conv2dParams theta_conv;  // 1x1, d -> C
  NormParams theta_bn;
  double dropout = 0.1;  // stochastic identity on F_phi

  static IrmParams init(std::size_t channels, std::size_t d, std::size_t heads, double dropout,
                        std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

struct CsmParams {
  LinearParams l1;  // C -> C/2
  LinearParams l2;  // C/2 -> 1

  static CsmParams init(std::size_t channels, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamRegistry& reg) const;
};

/// Supervised embedding slots: 0 stripe, 1 patch, 2..4 pose groups.
enum Head : std::size_t { kStripeHead = 0, kPatchHead = 1, kPoseHead0 = 2, kNumHeads = 5 };

struct ModelOutput {
  Tensor f_stripe;    // [B, C]
  Tensor f_patch;     // [B, C]
  Tensor f_global;    // [B, C], (f_stripe + f_patch) / 2
  Tensor pose_hat;    // [B, 3, C]  (pose branch only)
  Tensor pose_tilde;  // [B, 3, C]
  Tensor self_scores; // [B, 3]
  Tensor combined;    // [B, 3]
  std::vector<Tensor> neck;    // post-BN embedding per head, [B, C]
  std::vector<Tensor> logits;  // per head, [B, K]
  std::vector<std::array<bool, kNumGroups>> group_visible;
  std::vector<std::array<double, kNumGroups>> group_scores;
  bool has_pose = false;

  /// (neck[stripe] + neck[patch]) / 2, the retrieval feature.
  Tensor retrieval_global() const;
};

// Stage functions. Each is usable on its own with explicit parameters.

/// image [B,H,W,3] -> [B,H/4,W/4,C]
Tensor backbone_forward(const Tensor& image, BackboneParams& params, Mode mode);
/// mask is [B,H_f,W_f,1] (the merged human mask broadcast over channels).
Tensor irm_forward(const Tensor& features, const Tensor& mask, IrmParams& params, const ForwardContext& ctx);
/// Stripe: width-average per row. Patch: (4,2) max pooling. Pose: thresholded keypoint pooling.
PartTokenSet partition(const Tensor& features, PartKind kind, std::span<const HeatmapStack> stacks = {},
                       double tau = 0.001);
/// Stacked transformer units over each token set. Pose tokens are processed
/// group by group through the same (weight-shared) stack.
Tensor irt_forward(const PartTokenSet& tokens, const TransformerStack& stack, const ForwardContext& ctx);
/// Token average: [B,N,C] -> [B,C].
Tensor branch_embed(const Tensor& tokens);
/// Per-group token average of pose tokens: [B,P,C] -> [B,3,C].
Tensor group_embed(const Tensor& pose_tokens, std::span<const BodyGroup> groups);
/// Shared MLP per group row: [B,3,C] -> [B,3].
Tensor csm_scores(const Tensor& pose_hat, const CsmParams& params);

struct ConfidenceResult {
  Tensor weighted;  // [B,3,C]
  Tensor combined;  // [B,3]
};
/// raw = sigmoid(self) * S; combined = raw / (sum raw + 1e-8); weighted = pose_hat * combined.
ConfidenceResult apply_confidence(const Tensor& pose_hat, const Tensor& self_scores, const Tensor& pose_scores);

/// Human mask tensor [B,H,W,1] and group scores [B,3] from expanded stacks.
Tensor mask_tensor(std::span<const HeatmapStack> expanded);
Tensor group_score_tensor(std::span<const HeatmapStack> expanded);

class PirtModel {
 public:
  PirtModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// heatmaps are the raw (unexpanded) stacks rendered at feature resolution;
  /// ignored when the pose branch is disabled.
  ModelOutput forward(const Tensor& images, std::span<const HeatmapStack> heatmaps, const ForwardContext& ctx);

  ParamRegistry registry() const;

  BackboneParams backbone;
  IrmParams irm;
  TransformerStack stripe_irt, patch_irt, pose_irt;
  CsmParams csm;
  std::array<NormParams, kNumHeads> necks;
  std::array<LinearParams, kNumHeads> classifiers;

 private:
  ModelConfig config_;
};

// --- losses ------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Batch-hard triplet loss on L2-normalized embeddings [B, C].
Tensor hard_triplet(const Tensor& embeddings, std::span<const int> labels, double margin);

struct LossBreakdown {
  Tensor local;
  Tensor global;
  Tensor total;
};

LossBreakdown loss_total(const ModelOutput& output, std::span<const int> labels, double margin);

}  // namespace pirt
