#include "pirt/pose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pirt/error.hpp"
#include "pirt/ops.hpp"

namespace pirt {

BodyGroup keypoint_group(std::size_t id) {
  if (id >= kNumKeypoints) throw ContractError("keypoint id " + std::to_string(id) + " out of range");
  if (id <= kRightEar) return BodyGroup::Head;
  if (id <= kRightWrist) return BodyGroup::Upper;
  return BodyGroup::Lower;
}

std::size_t mirror_keypoint(std::size_t id) {
  if (id >= kNumKeypoints) throw ContractError("keypoint id " + std::to_string(id) + " out of range");
  if (id == kNose) return id;
  // left/right ids alternate in pairs (1,2), (3,4), ...
  return id % 2 == 1 ? id + 1 : id - 1;
}

std::pair<std::size_t, std::size_t> group_range(BodyGroup g) {
  switch (g) {
    case BodyGroup::Head:
      return {kNose, kLeftShoulder};
    case BodyGroup::Upper:
      return {kLeftShoulder, kLeftHip};
    case BodyGroup::Lower:
      return {kLeftHip, kNumKeypoints};
  }
  return {0, 0};
}

void update_group_scores(HeatmapStack& stack) {
  stack.group_scores.fill(0.0);
  for (std::size_t p = 0; p < stack.count(); ++p) {
    auto m = stack.map(p);
    double peak = *std::max_element(m.begin(), m.end());
    auto g = static_cast<std::size_t>(stack.group_of(p));
    stack.group_scores[g] = std::max(stack.group_scores[g], peak);
  }
}

HeatmapStack render_heatmaps(std::span<const Keypoint> keypoints, std::size_t image_h, std::size_t image_w,
                             std::size_t grid_h, std::size_t grid_w, const HeatmapOptions& options) {
  if (!(options.sigma > 0.0)) throw ParameterError("heatmap sigma must be positive");
  if (options.occluded_scale < 0.0 || options.occluded_scale > 1.0) {
    throw ParameterError("occluded_scale must lie in [0, 1]");
  }
  if (image_h == 0 || image_w == 0 || grid_h == 0 || grid_w == 0) throw ParameterError("empty heatmap extent");
  if (keypoints.size() > kNumKeypoints) throw ContractError("more keypoints than the COCO-17 layout");
  HeatmapStack stack;
  stack.height = grid_h;
  stack.width = grid_w;
  stack.maps.assign(keypoints.size() * grid_h * grid_w, HeatmapOptions::kFloor);
  double sy = static_cast<double>(grid_h) / static_cast<double>(image_h);
  double sx = static_cast<double>(grid_w) / static_cast<double>(image_w);
  double inv2s2 = 1.0 / (2.0 * options.sigma * options.sigma);
  for (std::size_t p = 0; p < keypoints.size(); ++p) {
    stack.keypoint_ids.push_back(p);
    const Keypoint& kp = keypoints[p];
    bool inside = kp.x >= 0.0 && kp.y >= 0.0 && kp.x <= static_cast<double>(image_w) - 1.0 &&
                  kp.y <= static_cast<double>(image_h) - 1.0;
    if (!kp.visible || !inside) continue;
    double peak = HeatmapOptions::kPeak * (kp.occluded ? options.occluded_scale : 1.0);
    double gx = (kp.x + 0.5) * sx - 0.5;
    double gy = (kp.y + 0.5) * sy - 0.5;
    auto m = stack.map(p);
    for (std::size_t i = 0; i < grid_h; ++i)
      for (std::size_t j = 0; j < grid_w; ++j) {
        double dy = static_cast<double>(i) - gy, dx = static_cast<double>(j) - gx;
        double v = peak * std::exp(-(dx * dx + dy * dy) * inv2s2);
        m[i * grid_w + j] = std::clamp(v, HeatmapOptions::kFloor, HeatmapOptions::kPeak);
      }
  }
  update_group_scores(stack);
  return stack;
}

HeatmapStack expand_heatmaps(const HeatmapStack& stack, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) throw ParameterError("expansion kernel must be odd, got " + std::to_string(kernel));
  if (stack.count() == 0) return stack;
  // maps are [P][H][W]; pool as NHWC with P images of one channel
  Tensor maps({stack.count(), stack.height, stack.width, 1}, stack.maps);
  std::size_t pad = kernel / 2;
  PoolWindow w{kernel, kernel, 1, 1, pad, pad};
  Tensor pooled = max_pool2d(maps, w);
  HeatmapStack out = stack;
  out.maps.assign(pooled.data().begin(), pooled.data().end());
  update_group_scores(out);
  return out;
}

HumanMask merge_mask(const HeatmapStack& stack) {
  if (stack.count() == 0) throw ContractError("merge_mask on an empty heatmap stack");
  HumanMask mask{stack.height, stack.width, std::vector<double>(stack.cells(), 0.0)};
  auto first = stack.map(0);
  std::copy(first.begin(), first.end(), mask.values.begin());
  for (std::size_t p = 1; p < stack.count(); ++p) {
    auto m = stack.map(p);
    for (std::size_t g = 0; g < m.size(); ++g) mask.values[g] = std::max(mask.values[g], m[g]);
  }
  return mask;
}

HeatmapStack resize_heatmaps(const HeatmapStack& stack, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ParameterError("resize target must be non-empty");
  if (height == stack.height && width == stack.width) return stack;
  HeatmapStack out;
  out.height = height;
  out.width = width;
  out.keypoint_ids = stack.keypoint_ids;
  out.maps.assign(stack.count() * height * width, 0.0);
  double sy = static_cast<double>(stack.height) / static_cast<double>(height);
  double sx = static_cast<double>(stack.width) / static_cast<double>(width);
  auto coord = [](double o, double scale, std::size_t limit) {
    double c = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(limit - 1));
    auto lo = static_cast<std::size_t>(std::floor(c));
    std::size_t hi = std::min(lo + 1, limit - 1);
    return std::tuple<std::size_t, std::size_t, double>(lo, hi, c - static_cast<double>(lo));
  };
  for (std::size_t p = 0; p < stack.count(); ++p) {
    auto src = stack.map(p);
    auto dst = out.map(p);
    for (std::size_t i = 0; i < height; ++i) {
      auto [y0, y1, fy] = coord(static_cast<double>(i), sy, stack.height);
      for (std::size_t j = 0; j < width; ++j) {
        auto [x0, x1, fx] = coord(static_cast<double>(j), sx, stack.width);
        double top = src[y0 * stack.width + x0] * (1 - fx) + src[y0 * stack.width + x1] * fx;
        double bot = src[y1 * stack.width + x0] * (1 - fx) + src[y1 * stack.width + x1] * fx;
        dst[i * width + j] = top * (1 - fy) + bot * fy;
      }
    }
  }
  update_group_scores(out);
  return out;
}

PartTokenSet pose_part_pool(std::span<const HeatmapStack> stacks, const Tensor& features, double tau) {
  if (features.rank() != 4) throw DimensionError("pose_part_pool expects [B,H,W,C], got " + shape_str(features.shape()));
  std::size_t B = features.dim(0), H = features.dim(1), W = features.dim(2), C = features.dim(3);
  if (stacks.size() != B) {
    throw DimensionError("pose_part_pool: " + std::to_string(stacks.size()) + " heatmap stacks for batch of " +
                         std::to_string(B));
  }
  std::size_t P = stacks.empty() ? 0 : stacks[0].count();
  if (P == 0) throw ContractError("pose_part_pool needs at least one keypoint map");
  std::vector<double> weights(B * P * H * W, 0.0);
  PartTokenSet out;
  out.kind = PartKind::Pose;
  out.visible.assign(B, std::vector<bool>(P, false));
  for (std::size_t p = 0; p < P; ++p) out.groups.push_back(stacks[0].group_of(p));
  for (std::size_t b = 0; b < B; ++b) {
    HeatmapStack resized = resize_heatmaps(stacks[b], H, W);
    if (resized.count() != P || resized.height != H || resized.width != W) {
      throw DimensionError("pose_part_pool: heatmap grid does not match feature grid " + shape_str(features.shape()));
    }
    for (std::size_t p = 0; p < P; ++p) {
      auto m = resized.map(p);
      double* row = weights.data() + (b * P + p) * H * W;
      std::size_t count = 0;
      for (std::size_t g = 0; g < H * W; ++g) {
        if (m[g] > tau) {
          row[g] = 1.0;
          ++count;
        }
      }
      if (count == 0) continue;
      out.visible[b][p] = true;
      for (std::size_t g = 0; g < H * W; ++g) row[g] /= static_cast<double>(count);
    }
  }
  Tensor mask({B, P, H * W}, std::move(weights));
  out.tokens = bmm(mask, reshape(features, {B, H * W, C}));
  return out;
}

std::array<bool, kNumGroups> group_visibility(const PartTokenSet& pose, std::size_t image) {
  std::array<bool, kNumGroups> vis{};
  for (std::size_t p = 0; p < pose.groups.size(); ++p) {
    if (pose.visible[image][p]) vis[static_cast<std::size_t>(pose.groups[p])] = true;
  }
  return vis;
}

}  // namespace pirt
