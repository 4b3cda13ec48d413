#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pirt/pose.hpp"

namespace pirt {

struct EmbeddingRecord {
  int identity = 0;
  int camera = 0;
  std::vector<double> global;                          // C
  std::array<std::vector<double>, kNumGroups> groups;  // empty when the pose branch is off
  std::array<double, kNumGroups> confidences{};
  std::array<bool, kNumGroups> visible{};

  bool has_local() const { return !groups[0].empty(); }
};

struct RankList {
  std::size_t query = 0;
  std::vector<std::size_t> indices;  // gallery indices, best first
  std::vector<double> distances;     // non-decreasing

  std::size_t size() const { return indices.size(); }
};

enum class ScoreMode { QG, Q, G, None };

ScoreMode parse_score_mode(const std::string& s);
std::string score_mode_name(ScoreMode m);

struct MatchParams {
  std::size_t top_n = 100;
  double lambda = 0.5;
  ScoreMode score_mode = ScoreMode::QG;
};

/// 1 - cos(a, b). Throws NumericError on a zero vector.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Cosine distance on the global feature; same identity and camera entries are
/// dropped; ties go to the lower gallery index.
RankList coarse_rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery,
                     std::size_t query_index = 0);

/// Weighted per-group distance, 0 when every group weight vanishes.
double local_distance(const EmbeddingRecord& query, const EmbeddingRecord& gallery, ScoreMode mode);

/// Re-scores the top-N with d_global + lambda * d_local and re-sorts that block
/// only; later entries stay behind it in coarse order.
RankList local_rerank(const EmbeddingRecord& query, const RankList& coarse, std::span<const EmbeddingRecord> gallery,
                      std::size_t top_n, double lambda, ScoreMode mode);

struct Identity {
  int id = 0;
  int camera = 0;
};

struct EvalReport {
  std::vector<double> cmc;  // cmc[k-1] = rate at rank k
  double mAP = 0.0;
  std::vector<double> aps;  // per evaluated query
  std::size_t n_queries = 0;
  std::vector<std::size_t> skipped;  // queries without any valid match
};

/// Standard CMC/mAP. Gallery entries sharing identity and camera with the
/// query are ignored if still present in a rank list.
EvalReport evaluate(std::span<const RankList> ranklists, std::span<const Identity> queries,
                    std::span<const Identity> gallery, std::size_t k_max);

/// coarse_rank + local_rerank + evaluate over whole sets.
EvalReport match_and_evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery,
                              const MatchParams& params, std::size_t k_max);

// Embedding files: <base>.jsonl (one record per line) and <base>.bin (tensor payloads).
void save_embeddings(std::span<const EmbeddingRecord> records, const std::filesystem::path& base);
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& base);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);

}  // namespace pirt
