#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "pirt/tensor.hpp"

namespace pirt {

constexpr std::size_t kNumKeypoints = 17;
constexpr std::size_t kNumGroups = 3;

/// COCO-17 keypoint ids.
enum Keypoints : std::size_t {
  kNose = 0, kLeftEye, kRightEye, kLeftEar, kRightEar,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist,
  kLeftHip, kRightHip, kLeftKnee, kRightKnee, kLeftAnkle, kRightAnkle
};

enum class BodyGroup : std::size_t { Head = 0, Upper = 1, Lower = 2 };

/// head = nose/eyes/ears, upper = shoulders/elbows/wrists, lower = hips/knees/ankles.
BodyGroup keypoint_group(std::size_t id);
/// Left/right mirror of a keypoint id (nose maps to itself).
std::size_t mirror_keypoint(std::size_t id);
/// [begin, end) keypoint-id range of a group; groups are contiguous in COCO order.
std::pair<std::size_t, std::size_t> group_range(BodyGroup g);

struct Keypoint {
  double x = 0.0;  // image pixels
  double y = 0.0;
  bool visible = true;    // inside the frame
  bool occluded = false;  // under an occluder
};

/// P confidence maps on an H x W grid, values strictly in (0, 1).
struct HeatmapStack {
  std::size_t height = 0, width = 0;
  std::vector<double> maps;  // [P][H][W]
  std::vector<std::size_t> keypoint_ids;
  std::array<double, kNumGroups> group_scores{};

  std::size_t count() const { return keypoint_ids.size(); }
  std::size_t cells() const { return height * width; }
  std::span<const double> map(std::size_t p) const { return {maps.data() + p * cells(), cells()}; }
  std::span<double> map(std::size_t p) { return {maps.data() + p * cells(), cells()}; }
  BodyGroup group_of(std::size_t p) const { return keypoint_group(keypoint_ids[p]); }
};

/// Sets group_scores to the max over each group's maps.
void update_group_scores(HeatmapStack& stack);

struct HumanMask {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // [H][W]
};

struct HeatmapOptions {
  double sigma = 1.0;            // in grid cells
  double occluded_scale = 0.1;   // peak multiplier for occluded keypoints
  static constexpr double kPeak = 0.999;
  static constexpr double kFloor = 1e-6;
};

/// Gaussian bump per keypoint rendered directly on a grid_h x grid_w grid
/// covering an image_h x image_w frame. Invisible keypoints render as the floor.
HeatmapStack render_heatmaps(std::span<const Keypoint> keypoints, std::size_t image_h, std::size_t image_w,
                             std::size_t grid_h, std::size_t grid_w, const HeatmapOptions& options = {});

/// Windowed max pooling per map, stride 1, same padding.
HeatmapStack expand_heatmaps(const HeatmapStack& stack, std::size_t kernel = 3);

/// Cell-wise max over all maps.
HumanMask merge_mask(const HeatmapStack& stack);

/// Bilinear resampling of every map (align-corners=false convention).
HeatmapStack resize_heatmaps(const HeatmapStack& stack, std::size_t height, std::size_t width);

enum class PartKind { Stripe, Patch, Pose };

/// N part tokens per image: tokens is [B, N, C]; visible is B x N.
struct PartTokenSet {
  Tensor tokens;
  PartKind kind = PartKind::Stripe;
  std::vector<std::vector<bool>> visible;
  std::vector<BodyGroup> groups;  // pose kind only, one per token

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t size() const { return tokens.dim(1); }
};

/// Threshold-masked average of the feature map per keypoint. features is
/// [B, H, W, C] with one stack per image; stacks on a different grid are
/// bilinearly resized first. Keypoints whose map never exceeds tau yield a
/// zero token flagged invisible.
PartTokenSet pose_part_pool(std::span<const HeatmapStack> stacks, const Tensor& features, double tau);

/// Group visibility: a group is visible iff any member token is.
std::array<bool, kNumGroups> group_visibility(const PartTokenSet& pose, std::size_t image);

}  // namespace pirt
