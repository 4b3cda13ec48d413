#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pirt/pose.hpp"

namespace pirt {

struct SynthConfig {
  std::size_t n_identities = 32;
  std::size_t images_per_identity = 8;
  std::size_t n_cameras = 3;
  std::size_t height = 64;
  std::size_t width = 32;
  double occlusion_prob = 0.4;
  double max_coverage = 0.6;  // image fraction covered by all occluders of one image
  double jitter = 0.05;       // keypoint jitter, fraction of the height
  std::uint64_t seed = 0;
  std::size_t n_train_ids = 0;  // 0 selects n_identities / 2

  std::size_t train_ids() const { return n_train_ids ? n_train_ids : n_identities / 2; }
  /// Throws ConfigError.
  void validate() const;
};

enum class Split { Train, Query, Gallery };
std::string split_name(Split s);
Split parse_split(const std::string& s);

/// Pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int area() const { return std::max(0, x1 - x0) * std::max(0, y1 - y0); }
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const Rect&) const = default;
};

struct SynthSample {
  std::size_t height = 0, width = 0;
  std::vector<double> image;  // [H][W][3] in [0, 1]
  int identity = 0;
  int camera = 0;
  Split split = Split::Train;
  std::array<Keypoint, kNumKeypoints> keypoints{};
  std::vector<Rect> occluders;
};

bool operator==(const Keypoint& a, const Keypoint& b);
bool operator==(const SynthSample& a, const SynthSample& b);

/// Train identities come first; for every other identity the first images are
/// queries (always occluded when occlusion is enabled) and the rest gallery.
std::vector<SynthSample> generate_dataset(const SynthConfig& config);

/// Heatmaps for a sample on its feature grid (H/4 x W/4).
HeatmapStack sample_heatmaps(const SynthSample& sample, const HeatmapOptions& options = {});

struct AugmentPlan {
  int pad = 0;
  int shift_x = 0, shift_y = 0;  // crop offset relative to the unpadded frame
  bool flip = false;
  bool erase = false;
  Rect erase_rect;
  std::uint64_t noise_seed = 0;
};

/// Draws the random choices: pad-and-crop, flip (p=0.5), erasing (p=0.5).
AugmentPlan draw_augment(const SynthSample& sample, std::mt19937_64& rng);
/// Applies a plan; keypoints and occluders follow the image.
SynthSample apply_augment(const SynthSample& sample, const AugmentPlan& plan);
SynthSample augment(const SynthSample& sample, std::mt19937_64& rng);

/// Directory with manifest.json and payload.bin.
void save_dataset(const std::vector<SynthSample>& samples, const std::filesystem::path& dir,
                  const SynthConfig* config = nullptr);
std::vector<SynthSample> load_dataset(const std::filesystem::path& dir);

}  // namespace pirt
