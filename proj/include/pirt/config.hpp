#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pirt/model.hpp"
#include "pirt/pose.hpp"
#include "pirt/retrieval.hpp"
#include "pirt/synth.hpp"

namespace pirt {

struct OptimConfig {
  double lr = 3.5e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ScheduleConfig {
  std::size_t epochs = 30;
  std::size_t warmup = 5;
  std::size_t decay_start = 15;
  double floor = 1e-6;
};

struct BatchConfig {
  std::size_t p = 8;  // identities per batch
  std::size_t k = 4;  // samples per identity
  std::size_t steps_per_epoch = 0;  // 0: train samples / (p * k), at least 1
};

/// Everything a command needs. Flat dotted keys map onto the fields; see
/// RunConfig::keys() for the full list.
struct RunConfig {
  std::string data_path;
  SynthConfig data;
  ModelConfig model;
  HeatmapOptions pose;
  OptimConfig optim;
  ScheduleConfig schedule;
  BatchConfig batch;
  bool augment = true;
  std::size_t save_interval = 0;  // epochs; 0 saves only at the end
  MatchParams match;
  std::size_t k_max = 20;
  std::size_t ablate_seeds = 3;
  std::uint64_t seed = 0;

  /// Sets one key. Throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Reads key=value lines; '#' starts a comment.
  void apply_text(const std::string& text, const std::string& origin = "<text>");
  void apply_file(const std::filesystem::path& path);
  /// Canonical key=value listing in a fixed order.
  std::string echo() const;
  static std::vector<std::string> keys();
  void validate() const;
};

RunConfig parse_config(const std::string& text);

}  // namespace pirt
