#include "pirt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pirt/error.hpp"

namespace pirt {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PIRT_SIZE(name, member) \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<std::size_t>(c.member)); }}
#define PIRT_DOUBLE(name, member) \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.member)); }}
#define PIRT_BOOL(name, member) \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<bool>(c.member)); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      Field{"data.path", [](RunConfig& c, const std::string&, const std::string& v) { c.data_path = v; },
            [](const RunConfig& c) { return c.data_path; }},
      PIRT_SIZE("data.identities", data.n_identities),
      PIRT_SIZE("data.images", data.images_per_identity),
      PIRT_SIZE("data.cameras", data.n_cameras),
      PIRT_SIZE("data.height", data.height),
      PIRT_SIZE("data.width", data.width),
      PIRT_DOUBLE("data.occlusion", data.occlusion_prob),
      PIRT_DOUBLE("data.coverage", data.max_coverage),
      PIRT_DOUBLE("data.jitter", data.jitter),
      PIRT_SIZE("data.train_ids", data.n_train_ids),
      Field{"data.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.data.seed = to_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.data.seed); }},
      PIRT_SIZE("model.c", model.channels),
      PIRT_SIZE("model.d", model.bottleneck),
      PIRT_SIZE("model.heads", model.heads),
      PIRT_SIZE("model.n_units", model.n_units),
      PIRT_SIZE("model.ffn", model.ffn_hidden),
      PIRT_DOUBLE("model.dropout", model.dropout),
      PIRT_SIZE("model.classes", model.num_classes),
      PIRT_SIZE("model.height", model.image_h),
      PIRT_SIZE("model.width", model.image_w),
      PIRT_BOOL("model.pose", model.use_pose),
      PIRT_BOOL("model.intra", model.use_intra),
      PIRT_BOOL("model.inter", model.use_inter),
      PIRT_DOUBLE("model.tau", model.tau),
      PIRT_SIZE("model.expand_kernel", model.expand_kernel),
      PIRT_DOUBLE("model.margin", model.margin),
      PIRT_DOUBLE("pose.sigma", pose.sigma),
      PIRT_DOUBLE("pose.occluded_scale", pose.occluded_scale),
      PIRT_DOUBLE("optim.lr", optim.lr),
      PIRT_DOUBLE("optim.weight_decay", optim.weight_decay),
      PIRT_DOUBLE("optim.beta1", optim.beta1),
      PIRT_DOUBLE("optim.beta2", optim.beta2),
      PIRT_DOUBLE("optim.eps", optim.eps),
      PIRT_SIZE("sched.epochs", schedule.epochs),
      PIRT_SIZE("sched.warmup", schedule.warmup),
      PIRT_SIZE("sched.decay_start", schedule.decay_start),
      PIRT_DOUBLE("sched.floor", schedule.floor),
      PIRT_SIZE("batch.p", batch.p),
      PIRT_SIZE("batch.k", batch.k),
      PIRT_SIZE("batch.steps_per_epoch", batch.steps_per_epoch),
      PIRT_BOOL("train.augment", augment),
      PIRT_SIZE("train.save_interval", save_interval),
      PIRT_SIZE("match.n", match.top_n),
      PIRT_DOUBLE("match.lambda", match.lambda),
      Field{"match.score_mode",
            [](RunConfig& c, const std::string&, const std::string& v) { c.match.score_mode = parse_score_mode(v); },
            [](const RunConfig& c) { return score_mode_name(c.match.score_mode); }},
      PIRT_SIZE("eval.k_max", k_max),
      PIRT_SIZE("ablate.seeds", ablate_seeds),
  };
  return table;
}

#undef PIRT_SIZE
#undef PIRT_DOUBLE
#undef PIRT_BOOL

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path.string());
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::validate() const {
  if (optim.lr <= 0.0) throw ConfigError("optim.lr must be positive");
  if (optim.weight_decay < 0.0) throw ConfigError("optim.weight_decay must be non-negative");
  if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 || optim.beta2 >= 1.0) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (schedule.epochs == 0) throw ConfigError("sched.epochs must be positive");
  if (schedule.warmup > schedule.decay_start || schedule.decay_start > schedule.epochs) {
    throw ConfigError("schedule requires warmup <= decay_start <= epochs");
  }
  if (schedule.floor < 0.0 || schedule.floor > optim.lr) throw ConfigError("sched.floor must lie in [0, lr]");
  if (batch.p < 2) throw ConfigError("batch.p must be at least 2 (triplet negatives)");
  if (batch.k < 2) throw ConfigError("batch.k must be at least 2 (triplet positives)");
  if (match.top_n == 0) throw ConfigError("match.n must be at least 1");
  if (match.lambda < 0.0) throw ConfigError("match.lambda must be non-negative");
  if (k_max == 0) throw ConfigError("eval.k_max must be at least 1");
  if (pose.sigma <= 0.0) throw ConfigError("pose.sigma must be positive");
  if (pose.occluded_scale < 0.0 || pose.occluded_scale > 1.0) throw ConfigError("pose.occluded_scale must lie in [0, 1]");
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  c.apply_text(text);
  return c;
}

}  // namespace pirt
