#include "pirt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "pirt/error.hpp"
#include "pirt/ops.hpp"
#include "pirt/tensor.hpp"

namespace pirt {

namespace {

constexpr char kPayloadMagic[4] = {'P', 'S', 'Y', 'N'};
constexpr std::uint32_t kDatasetVersion = 1;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  int v = lo + static_cast<int>(std::floor(uniform01(rng) * static_cast<double>(hi - lo + 1)));
  return std::min(v, hi);
}

using Color = std::array<double, 3>;

Color random_color(std::mt19937_64& rng) { return {uniform01(rng), uniform01(rng), uniform01(rng)}; }

struct Appearance {
  Color skin, hair, torso, arms, legs;
  double stripe_freq, stripe_phase, stripe_depth;
  double build;  // shoulder/hip width scale
};

Appearance draw_appearance(std::mt19937_64& rng) {
  Appearance a;
  a.skin = {uniform(rng, 0.55, 0.95), uniform(rng, 0.4, 0.75), uniform(rng, 0.3, 0.6)};
  a.hair = {uniform(rng, 0.0, 0.4), uniform(rng, 0.0, 0.3), uniform(rng, 0.0, 0.25)};
  a.torso = random_color(rng);
  a.arms = random_color(rng);
  a.legs = random_color(rng);
  a.stripe_freq = uniform(rng, 0.0, 1.2);
  a.stripe_phase = uniform(rng, 0.0, 6.283185307179586);
  a.stripe_depth = uniform(rng, 0.0, 0.35);
  a.build = uniform(rng, 0.85, 1.15);
  return a;
}

// Canonical skeleton in (u, v) fractions of width and height. Person-left is image-right.
constexpr std::array<std::array<double, 2>, kNumKeypoints> kSkeleton{{
    {0.50, 0.12}, {0.54, 0.10}, {0.46, 0.10}, {0.58, 0.12}, {0.42, 0.12},
    {0.72, 0.23}, {0.28, 0.23}, {0.78, 0.37}, {0.22, 0.37}, {0.80, 0.50}, {0.20, 0.50},
    {0.62, 0.53}, {0.38, 0.53}, {0.63, 0.72}, {0.37, 0.72}, {0.64, 0.92}, {0.36, 0.92},
}};

struct Canvas {
  std::size_t h, w;
  std::vector<double>& px;

  void put(int x, int y, const Color& c) {
    if (x < 0 || y < 0 || x >= static_cast<int>(w) || y >= static_cast<int>(h)) return;
    double* p = &px[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3];
    for (int k = 0; k < 3; ++k) p[k] = std::clamp(c[k], 0.0, 1.0);
  }
};

double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
  double vx = bx - ax, vy = by - ay;
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0) : 0.0;
  double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

Color shade(const Color& c, const Color& gain, double offset) {
  return {c[0] * gain[0] + offset, c[1] * gain[1] + offset, c[2] * gain[2] + offset};
}

void render_figure(Canvas& cv, const std::array<Keypoint, kNumKeypoints>& kp, const Appearance& a,
                   const Color& gain, double offset) {
  int H = static_cast<int>(cv.h), W = static_cast<int>(cv.w);
  double limb = std::max(1.2, 0.07 * W);
  double leg = std::max(1.5, 0.09 * W);
  auto segment = [&](std::size_t i, std::size_t j, double half, const Color& c) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (seg_dist(x, y, kp[i].x, kp[i].y, kp[j].x, kp[j].y) <= half) cv.put(x, y, shade(c, gain, offset));
  };
  // legs, torso, arms, head: later parts paint over earlier ones
  segment(kLeftHip, kLeftKnee, leg, a.legs);
  segment(kLeftKnee, kLeftAnkle, leg * 0.85, a.legs);
  segment(kRightHip, kRightKnee, leg, a.legs);
  segment(kRightKnee, kRightAnkle, leg * 0.85, a.legs);

  // torso quad: shoulders to hips, scanline fill between the two side edges
  double top = std::min(kp[kLeftShoulder].y, kp[kRightShoulder].y);
  double bottom = std::max(kp[kLeftHip].y, kp[kRightHip].y);
  for (int y = static_cast<int>(std::floor(top)); y <= static_cast<int>(std::ceil(bottom)); ++y) {
    double t = bottom > top ? std::clamp((y - top) / (bottom - top), 0.0, 1.0) : 0.0;
    double xl = kp[kRightShoulder].x + t * (kp[kRightHip].x - kp[kRightShoulder].x);
    double xr = kp[kLeftShoulder].x + t * (kp[kLeftHip].x - kp[kLeftShoulder].x);
    double stripe = 1.0 + a.stripe_depth * std::sin(a.stripe_freq * y + a.stripe_phase);
    Color c{a.torso[0] * stripe, a.torso[1] * stripe, a.torso[2] * stripe};
    for (int x = static_cast<int>(std::ceil(std::min(xl, xr))); x <= static_cast<int>(std::floor(std::max(xl, xr))); ++x) {
      cv.put(x, y, shade(c, gain, offset));
    }
  }
  segment(kLeftShoulder, kLeftElbow, limb, a.arms);
  segment(kLeftElbow, kLeftWrist, limb * 0.85, a.skin);
  segment(kRightShoulder, kRightElbow, limb, a.arms);
  segment(kRightElbow, kRightWrist, limb * 0.85, a.skin);

  double r = 0.09 * H;
  double cx = kp[kNose].x, cy = kp[kNose].y;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > r * r) continue;
      cv.put(x, y, shade(dy < -0.35 * r ? a.hair : a.skin, gain, offset));
    }
}

void mark_keypoints(std::array<Keypoint, kNumKeypoints>& kps, const std::vector<Rect>& occluders, std::size_t h,
                    std::size_t w) {
  for (auto& k : kps) {
    k.visible = k.x >= 0 && k.y >= 0 && k.x <= static_cast<double>(w) - 1 && k.y <= static_cast<double>(h) - 1;
    k.occluded = std::any_of(occluders.begin(), occluders.end(), [&](const Rect& r) { return r.contains(k.x, k.y); });
  }
}

std::vector<Rect> draw_occluders(std::mt19937_64& rng, std::size_t h, std::size_t w, double max_coverage) {
  int n = uniform_int(rng, 1, 3);
  double budget = max_coverage / n;
  std::vector<Rect> rects;
  double H = static_cast<double>(h), W = static_cast<double>(w);
  for (int i = 0; i < n; ++i) {
    double area = uniform(rng, 0.25, 1.0) * budget * H * W;
    double aspect = uniform(rng, 0.4, 2.5);  // height / width
    int rh = std::clamp(static_cast<int>(std::floor(std::sqrt(area * aspect))), 1, static_cast<int>(h));
    int rw = std::clamp(static_cast<int>(std::floor(area / rh)), 1, static_cast<int>(w));
    int x0 = uniform_int(rng, 0, static_cast<int>(w) - rw);
    int y0 = uniform_int(rng, 0, static_cast<int>(h) - rh);
    rects.push_back({x0, y0, x0 + rw, y0 + rh});
  }
  return rects;
}

void paint_occluders(std::vector<double>& px, std::size_t w, const std::vector<Rect>& rects,
                     std::mt19937_64& rng) {
  for (const auto& r : rects) {
    Color base = random_color(rng);
    double grain = uniform(rng, 0.0, 0.25);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        double* p = &px[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3];
        double n = grain * (uniform01(rng) - 0.5);
        for (int k = 0; k < 3; ++k) p[k] = std::clamp(base[k] + n, 0.0, 1.0);
      }
  }
}

SynthSample render_sample(const SynthConfig& cfg, const Appearance& a, const std::vector<Color>& cam_gain,
                          int identity, std::size_t image, bool force_occlusion, std::mt19937_64& rng) {
  SynthSample s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.identity = identity;
  s.camera = static_cast<int>(image % cfg.n_cameras);
  double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);

  double shift_x = uniform(rng, -0.06, 0.06) * W, shift_y = uniform(rng, -0.03, 0.03) * H;
  double amp = cfg.jitter * H;
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    double u = 0.5 + (kSkeleton[p][0] - 0.5) * a.build;
    s.keypoints[p].x = u * (W - 1) + shift_x + uniform(rng, -amp, amp) * 0.5;
    s.keypoints[p].y = kSkeleton[p][1] * (H - 1) + shift_y + uniform(rng, -amp, amp);
  }

  const Color& gain = cam_gain[static_cast<std::size_t>(s.camera)];
  s.image.assign(cfg.height * cfg.width * 3, 0.0);
  // neutral backdrop of varying brightness
  double level = uniform(rng, 0.35, 0.55);
  Color bg{level, level, level};
  for (std::size_t i = 0; i < cfg.height * cfg.width; ++i)
    for (int k = 0; k < 3; ++k) s.image[i * 3 + k] = std::clamp(bg[k] * gain[k] + 0.06 * (uniform01(rng) - 0.5), 0.0, 1.0);
  Canvas cv{cfg.height, cfg.width, s.image};
  double offset = uniform(rng, -0.05, 0.05);
  render_figure(cv, s.keypoints, a, gain, offset);

  bool occlude = cfg.occlusion_prob > 0 && (force_occlusion || uniform01(rng) < cfg.occlusion_prob);
  if (occlude) {
    s.occluders = draw_occluders(rng, cfg.height, cfg.width, cfg.max_coverage);
    paint_occluders(s.image, cfg.width, s.occluders, rng);
  }
  mark_keypoints(s.keypoints, s.occluders, cfg.height, cfg.width);
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (n_identities < 2) fail("at least two identities are required");
  if (images_per_identity < 1 || n_cameras < 1) fail("image and camera counts must be positive");
  if (height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0) fail("image extents must be multiples of 4");
  if (occlusion_prob < 0.0 || occlusion_prob > 1.0) fail("occlusion probability must lie in [0, 1]");
  if (max_coverage < 0.0 || max_coverage > 0.6) fail("occluder coverage must lie in [0, 0.6]");
  if (jitter < 0.0 || jitter > 0.25) fail("keypoint jitter must lie in [0, 0.25]");
  if (train_ids() == 0 || train_ids() > n_identities) fail("train identity count out of range");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "query") return Split::Query;
  if (s == "gallery") return Split::Gallery;
  throw ConfigError("unknown split '" + s + "'");
}

bool operator==(const Keypoint& a, const Keypoint& b) {
  return a.x == b.x && a.y == b.y && a.visible == b.visible && a.occluded == b.occluded;
}

bool operator==(const SynthSample& a, const SynthSample& b) {
  return a.height == b.height && a.width == b.width && a.image == b.image && a.identity == b.identity &&
         a.camera == b.camera && a.split == b.split && a.keypoints == b.keypoints && a.occluders == b.occluders;
}

std::vector<SynthSample> generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 cam_rng(mix_seed(cfg.seed, 0xca11ab1eULL));
  std::vector<Color> cam_gain;
  for (std::size_t c = 0; c < cfg.n_cameras; ++c) {
    cam_gain.push_back({uniform(cam_rng, 0.8, 1.2), uniform(cam_rng, 0.8, 1.2), uniform(cam_rng, 0.8, 1.2)});
  }
  std::size_t n_query = std::min<std::size_t>(2, cfg.images_per_identity - 1);
  std::vector<SynthSample> out;
  out.reserve(cfg.n_identities * cfg.images_per_identity);
  for (std::size_t id = 0; id < cfg.n_identities; ++id) {
    std::mt19937_64 rng(mix_seed(cfg.seed, id + 1));
    Appearance a = draw_appearance(rng);
    bool train = id < cfg.train_ids();
    for (std::size_t i = 0; i < cfg.images_per_identity; ++i) {
      bool query = !train && i < n_query;
      SynthSample s = render_sample(cfg, a, cam_gain, static_cast<int>(id), i, query, rng);
      s.split = train ? Split::Train : (query ? Split::Query : Split::Gallery);
      out.push_back(std::move(s));
    }
  }
  return out;
}

HeatmapStack sample_heatmaps(const SynthSample& sample, const HeatmapOptions& options) {
  return render_heatmaps(sample.keypoints, sample.height, sample.width, sample.height / 4, sample.width / 4, options);
}

// --- augmentation ------------------------------------------------------------------

AugmentPlan draw_augment(const SynthSample& sample, std::mt19937_64& rng) {
  if (sample.split != Split::Train) throw ContractError("augmentation is only defined for the train split");
  AugmentPlan plan;
  plan.pad = std::max(2, static_cast<int>(std::lround(10.0 * static_cast<double>(sample.height) / 384.0)));
  plan.shift_x = uniform_int(rng, -plan.pad, plan.pad);
  plan.shift_y = uniform_int(rng, -plan.pad, plan.pad);
  plan.flip = uniform01(rng) < 0.5;
  plan.erase = uniform01(rng) < 0.5;
  if (plan.erase) {
    int H = static_cast<int>(sample.height), W = static_cast<int>(sample.width);
    plan.erase = false;
    for (int attempt = 0; attempt < 10 && !plan.erase; ++attempt) {
      double area = uniform(rng, 0.02, 0.4) * H * W;
      double aspect = uniform(rng, 0.3, 3.3);
      int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
      int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
      if (h < 1 || w < 1 || h >= H || w >= W) continue;
      int x0 = uniform_int(rng, 0, W - w), y0 = uniform_int(rng, 0, H - h);
      plan.erase_rect = {x0, y0, x0 + w, y0 + h};
      plan.erase = true;
    }
    plan.noise_seed = rng();
  }
  return plan;
}

SynthSample apply_augment(const SynthSample& sample, const AugmentPlan& plan) {
  if (sample.split != Split::Train) throw ContractError("augmentation is only defined for the train split");
  int H = static_cast<int>(sample.height), W = static_cast<int>(sample.width);
  SynthSample out = sample;
  // crop from the zero-padded frame: out(y, x) = in(y + shift_y, x + shift_x)
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int sy = y + plan.shift_y, sx = x + plan.shift_x;
      int tx = plan.flip ? W - 1 - x : x;
      double* dst = &out.image[(static_cast<std::size_t>(y) * W + tx) * 3];
      if (sy < 0 || sx < 0 || sy >= H || sx >= W) {
        dst[0] = dst[1] = dst[2] = 0.0;
        continue;
      }
      const double* src = &sample.image[(static_cast<std::size_t>(sy) * W + sx) * 3];
      std::copy(src, src + 3, dst);
    }
  std::array<Keypoint, kNumKeypoints> kps{};
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    Keypoint k = sample.keypoints[p];
    k.x -= plan.shift_x;
    k.y -= plan.shift_y;
    if (plan.flip) k.x = W - 1 - k.x;
    kps[plan.flip ? mirror_keypoint(p) : p] = k;
  }
  out.keypoints = kps;
  out.occluders.clear();
  for (Rect r : sample.occluders) {
    r = {std::max(0, r.x0 - plan.shift_x), std::max(0, r.y0 - plan.shift_y), std::min(W, r.x1 - plan.shift_x),
         std::min(H, r.y1 - plan.shift_y)};
    if (plan.flip) r = {W - r.x1, r.y0, W - r.x0, r.y1};
    if (r.x1 > r.x0 && r.y1 > r.y0) out.occluders.push_back(r);
  }
  if (plan.erase) {
    std::mt19937_64 noise(plan.noise_seed);
    const Rect& r = plan.erase_rect;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x)
        for (int k = 0; k < 3; ++k) out.image[(static_cast<std::size_t>(y) * W + x) * 3 + k] = uniform01(noise);
    out.occluders.push_back(r);
  }
  mark_keypoints(out.keypoints, out.occluders, sample.height, sample.width);
  return out;
}

SynthSample augment(const SynthSample& sample, std::mt19937_64& rng) {
  return apply_augment(sample, draw_augment(sample, rng));
}

// --- persistence -------------------------------------------------------------------

void save_dataset(const std::vector<SynthSample>& samples, const std::filesystem::path& dir,
                  const SynthConfig* config) {
  std::filesystem::create_directories(dir);
  std::ofstream payload(dir / "payload.bin", std::ios::binary);
  if (!payload) throw FormatError("cannot write " + (dir / "payload.bin").string());
  payload.write(kPayloadMagic, 4);
  write_u32(payload, kDatasetVersion);
  nlohmann::json manifest;
  manifest["format"] = "pirt-synth";
  manifest["version"] = kDatasetVersion;
  if (config) {
    manifest["config"] = {{"n_identities", config->n_identities},
                          {"images_per_identity", config->images_per_identity},
                          {"n_cameras", config->n_cameras},
                          {"height", config->height},
                          {"width", config->width},
                          {"occlusion_prob", config->occlusion_prob},
                          {"max_coverage", config->max_coverage},
                          {"jitter", config->jitter},
                          {"seed", config->seed},
                          {"n_train_ids", config->train_ids()}};
  }
  nlohmann::json records = nlohmann::json::array();
  for (const auto& s : samples) {
    nlohmann::json r;
    r["id"] = s.identity;
    r["camera"] = s.camera;
    r["split"] = split_name(s.split);
    r["height"] = s.height;
    r["width"] = s.width;
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& k : s.keypoints) kps.push_back({k.x, k.y, k.visible, k.occluded});
    r["keypoints"] = kps;
    nlohmann::json occ = nlohmann::json::array();
    for (const auto& o : s.occluders) occ.push_back({o.x0, o.y0, o.x1, o.y1});
    r["occluders"] = occ;
    r["offset"] = static_cast<std::uint64_t>(payload.tellp());
    write_tensor(payload, Tensor({s.height, s.width, 3}, s.image));
    records.push_back(std::move(r));
  }
  manifest["samples"] = std::move(records);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
}

std::vector<SynthSample> load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw FormatError("missing dataset manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
  std::ifstream payload(dir / "payload.bin", std::ios::binary);
  if (!payload) throw FormatError("missing dataset payload in " + dir.string());
  char magic[4] = {};
  payload.read(magic, 4);
  if (!payload || !std::equal(magic, magic + 4, kPayloadMagic)) throw FormatError("bad payload magic at offset 0");
  std::uint32_t version = read_u32(payload);
  if (version != kDatasetVersion) {
    throw FormatError("unsupported payload version " + std::to_string(version) + " at offset 4");
  }
  std::vector<SynthSample> out;
  try {
    if (manifest.at("version").get<std::uint32_t>() != kDatasetVersion) {
      throw FormatError("unsupported manifest version");
    }
    for (const auto& r : manifest.at("samples")) {
      SynthSample s;
      s.identity = r.at("id").get<int>();
      s.camera = r.at("camera").get<int>();
      s.split = parse_split(r.at("split").get<std::string>());
      s.height = r.at("height").get<std::size_t>();
      s.width = r.at("width").get<std::size_t>();
      const auto& kps = r.at("keypoints");
      if (kps.size() != kNumKeypoints) throw FormatError("sample has " + std::to_string(kps.size()) + " keypoints");
      for (std::size_t p = 0; p < kNumKeypoints; ++p) {
        s.keypoints[p] = {kps[p][0].get<double>(), kps[p][1].get<double>(), kps[p][2].get<bool>(),
                          kps[p][3].get<bool>()};
      }
      for (const auto& o : r.at("occluders")) {
        s.occluders.push_back({o[0].get<int>(), o[1].get<int>(), o[2].get<int>(), o[3].get<int>()});
      }
      auto offset = r.at("offset").get<std::uint64_t>();
      payload.clear();
      payload.seekg(static_cast<std::streamoff>(offset));
      Tensor img = read_tensor(payload);
      if (img.shape() != Shape{s.height, s.width, 3}) {
        throw FormatError("image at offset " + std::to_string(offset) + " has shape " + shape_str(img.shape()));
      }
      s.image.assign(img.data().begin(), img.data().end());
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
  return out;
}

}  // namespace pirt
