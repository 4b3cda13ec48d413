#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "pirt/config.hpp"
#include "pirt/model.hpp"
#include "pirt/retrieval.hpp"
#include "pirt/synth.hpp"

namespace pirt {

/// Eval-mode forward over the samples, in order.
std::vector<EmbeddingRecord> embed_samples(PirtModel& model, const std::vector<SynthSample>& samples,
                                           const HeatmapOptions& pose, std::size_t batch_size = 32);

std::vector<SynthSample> select_split(const std::vector<SynthSample>& samples, Split split);

/// Runs matching and evaluation. Throws ContractError listing the queries
/// that have no valid gallery match.
EvalReport evaluate_embeddings(const std::vector<EmbeddingRecord>& queries,
                               const std::vector<EmbeddingRecord>& gallery, const MatchParams& match,
                               std::size_t k_max);

// --- gradient verification -------------------------------------------------------

struct GradcheckRow {
  std::string name;
  double error = 0.0;  // max over seeds
  double tolerance = 1e-4;
  bool passed() const { return error < tolerance; }
};

struct GradcheckOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double eps = 1e-6;  // small enough to stay clear of max-pool and ReLU kinks in the model rows
  bool negative_control = false;  // adds a row built on a deliberately wrong backward rule
};

std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& options = {});
void print_gradcheck(const std::vector<GradcheckRow>& rows, std::ostream& out);

// --- ablations -------------------------------------------------------------------

struct AblationRow {
  std::string axis;
  std::string variant;
  std::uint64_t seed = 0;
  double mAP = 0.0;
  double rank1 = 0.0;
};

struct AblationSummary {
  std::string axis;
  std::string variant;
  double median_mAP = 0.0;
  double median_rank1 = 0.0;
};

/// Axes: "components", "n_units", "score_mode". Each variant is trained and
/// evaluated once per seed; identical variants are trained only once.
std::vector<AblationRow> run_ablation(const RunConfig& config, const std::vector<SynthSample>& samples,
                                      const std::vector<std::string>& axes, const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress = nullptr);
std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows);
double median(std::vector<double> values);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::vector<AblationSummary>& summary,
                        const std::filesystem::path& path);
void print_ablation(const std::vector<AblationSummary>& summary, std::ostream& out);

/// Trains one model on the samples' train split and embeds its query and gallery splits.
struct TrainedEmbeddings {
  std::vector<EmbeddingRecord> query, gallery;
};
TrainedEmbeddings train_and_embed(const RunConfig& config, const std::vector<SynthSample>& samples);

}  // namespace pirt
