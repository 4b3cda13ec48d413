#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pirt/config.hpp"
#include "pirt/model.hpp"
#include "pirt/synth.hpp"

namespace pirt {

/// Learning rate in effect during a 0-based epoch: linear warmup, constant,
/// then cosine decay reaching the floor at the final epoch.
double scheduled_lr(const ScheduleConfig& schedule, double base, std::size_t epoch);

/// Adam with decoupled weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const OptimConfig& config);
  /// Consumes the current gradients (missing gradients count as zero) and clears them.
  void step(double lr);
  std::uint64_t steps() const { return t_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  OptimConfig config_;
  std::uint64_t t_ = 0;
};

/// Draws P identities and K samples of each.
class PkSampler {
 public:
  PkSampler(std::span<const int> labels, std::size_t p, std::size_t k);
  std::vector<std::size_t> draw(std::mt19937_64& rng) const;
  std::size_t identities() const { return ids_.size(); }

 private:
  std::vector<int> ids_;
  std::map<int, std::vector<std::size_t>> members_;
  std::size_t p_, k_;
};

struct Batch {
  Tensor images;  // [B,H,W,3]
  std::vector<HeatmapStack> heatmaps;
  std::vector<int> labels;
};

Batch make_batch(std::span<const SynthSample> samples, std::span<const std::size_t> indices,
                 const HeatmapOptions& pose, std::span<const int> labels = {});

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double local = 0.0, global = 0.0, total = 0.0;  // means over the epoch's steps
  std::size_t steps = 0;

  std::string json() const;
};

class Trainer {
 public:
  /// Only Train-split samples are used; identities are mapped to class ids in
  /// ascending order. Model image size and class count follow the data.
  Trainer(RunConfig config, const std::vector<SynthSample>& samples);

  EpochMetrics run_epoch();
  bool done() const { return epoch_ >= config_.schedule.epochs; }
  std::size_t epoch() const { return epoch_; }
  std::size_t steps_per_epoch() const;

  const RunConfig& config() const { return config_; }
  PirtModel& model() { return *model_; }
  /// Total loss of every step so far (this process only).
  const std::vector<double>& step_losses() const { return step_losses_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, running statistics, optimizer, epoch and RNG.
  /// Throws ConfigError when the checkpoint's model does not match.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  RunConfig config_;
  std::vector<SynthSample> train_;
  std::vector<int> labels_;
  std::unique_ptr<PirtModel> model_;
  std::unique_ptr<Adam> adam_;
  std::unique_ptr<PkSampler> sampler_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  std::vector<double> step_losses_;
};

/// Trains to the configured epoch count, appending one JSON line per epoch to
/// <out>/metrics.jsonl and writing <out>/checkpoint.bin (plus
/// checkpoint_e<N>.bin every save_interval epochs). When `resume` is set the
/// run continues from that checkpoint.
std::vector<EpochMetrics> train_run(const RunConfig& config, const std::vector<SynthSample>& samples,
                                    const std::filesystem::path& out, const std::filesystem::path& resume = {});

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<PirtModel> model;
};

/// Rebuilds the model recorded in a checkpoint.
LoadedModel load_model(const std::filesystem::path& checkpoint);

}  // namespace pirt
