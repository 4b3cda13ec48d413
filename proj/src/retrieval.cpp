#include "pirt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "pirt/error.hpp"
#include "pirt/tensor.hpp"

namespace pirt {

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "QG" || s == "qg") return ScoreMode::QG;
  if (s == "Q" || s == "q") return ScoreMode::Q;
  if (s == "G" || s == "g") return ScoreMode::G;
  if (s == "none") return ScoreMode::None;
  throw ConfigError("unknown score mode '" + s + "' (expected QG, Q, G or none)");
}

std::string score_mode_name(ScoreMode m) {
  switch (m) {
    case ScoreMode::QG: return "QG";
    case ScoreMode::Q: return "Q";
    case ScoreMode::G: return "G";
    case ScoreMode::None: return "none";
  }
  return "?";
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_distance of a zero vector");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

RankList coarse_rank(const EmbeddingRecord& query, std::span<const EmbeddingRecord> gallery,
                     std::size_t query_index) {
  if (gallery.empty()) throw ContractError("coarse_rank on an empty gallery");
  auto norm_ok = [](const std::vector<double>& v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; });
  };
  if (!norm_ok(query.global)) throw NumericError("query " + std::to_string(query_index) + " has a zero embedding");
  RankList out;
  out.query = query_index;
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    const auto& r = gallery[g];
    if (r.identity == query.identity && r.camera == query.camera) continue;
    if (!norm_ok(r.global)) throw NumericError("gallery record " + std::to_string(g) + " has a zero embedding");
    scored.emplace_back(cosine_distance(query.global, r.global), g);
  }
  std::sort(scored.begin(), scored.end());
  for (auto [d, g] : scored) {
    out.indices.push_back(g);
    out.distances.push_back(d);
  }
  return out;
}

double local_distance(const EmbeddingRecord& query, const EmbeddingRecord& gallery, ScoreMode mode) {
  if (!query.has_local() || !gallery.has_local()) return 0.0;
  double num = 0.0, den = 0.0;
  for (std::size_t g = 0; g < kNumGroups; ++g) {
    if (!query.visible[g] || !gallery.visible[g]) continue;
    double w = 1.0;
    switch (mode) {
      case ScoreMode::QG: w = query.confidences[g] * gallery.confidences[g]; break;
      case ScoreMode::Q: w = query.confidences[g]; break;
      case ScoreMode::G: w = gallery.confidences[g]; break;
      case ScoreMode::None: break;
    }
    if (w == 0.0) continue;
    num += w * cosine_distance(query.groups[g], gallery.groups[g]);
    den += w;
  }
  // no epsilon: zero total weight is handled here
  return den == 0.0 ? 0.0 : num / den;
}

RankList local_rerank(const EmbeddingRecord& query, const RankList& coarse, std::span<const EmbeddingRecord> gallery,
                      std::size_t top_n, double lambda, ScoreMode mode) {
  if (lambda < 0.0) throw ContractError("rerank lambda must be non-negative");
  if (top_n == 0) throw ContractError("rerank top-N must be at least 1");
  std::size_t n = std::min(top_n, coarse.size());
  struct Entry {
    double distance;
    std::size_t position;
  };
  std::vector<Entry> block(n);
  double max_local = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dl = local_distance(query, gallery[coarse.indices[i]], mode);
    max_local = std::max(max_local, dl);
    block[i] = {coarse.distances[i] + lambda * dl, i};
  }
  std::stable_sort(block.begin(), block.end(), [](const Entry& a, const Entry& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.position < b.position);
  });
  RankList out;
  out.query = coarse.query;
  for (const auto& e : block) {
    out.indices.push_back(coarse.indices[e.position]);
    out.distances.push_back(e.distance);
  }
  for (std::size_t i = n; i < coarse.size(); ++i) {
    out.indices.push_back(coarse.indices[i]);
    out.distances.push_back(coarse.distances[i] + lambda * max_local);
  }
  return out;
}

EvalReport evaluate(std::span<const RankList> ranklists, std::span<const Identity> queries,
                    std::span<const Identity> gallery, std::size_t k_max) {
  if (k_max == 0) throw ContractError("evaluate needs k_max >= 1");
  if (ranklists.size() != queries.size()) throw ContractError("one rank list per query is required");
  EvalReport report;
  report.cmc.assign(k_max, 0.0);
  for (std::size_t q = 0; q < ranklists.size(); ++q) {
    const Identity& qi = queries[q];
    std::size_t rank = 0, hits = 0;
    std::size_t first = 0;
    bool found = false;
    double ap = 0.0;
    for (std::size_t idx : ranklists[q].indices) {
      if (idx >= gallery.size()) throw ContractError("rank list index out of range");
      const Identity& g = gallery[idx];
      if (g.id == qi.id && g.camera == qi.camera) continue;
      ++rank;
      if (g.id != qi.id) continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(rank);
      if (!found) {
        found = true;
        first = rank;
      }
    }
    if (!found) {
      report.skipped.push_back(q);
      continue;
    }
    report.aps.push_back(ap / static_cast<double>(hits));
    for (std::size_t k = first; k <= k_max; ++k) report.cmc[k - 1] += 1.0;
  }
  report.n_queries = report.aps.size();
  if (report.n_queries == 0) throw ContractError("no query has a valid gallery match");
  double n = static_cast<double>(report.n_queries);
  for (auto& c : report.cmc) c /= n;
  report.mAP = std::accumulate(report.aps.begin(), report.aps.end(), 0.0) / n;
  return report;
}

EvalReport match_and_evaluate(std::span<const EmbeddingRecord> queries, std::span<const EmbeddingRecord> gallery,
                              const MatchParams& params, std::size_t k_max) {
  std::vector<RankList> lists;
  std::vector<Identity> qi, gi;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    RankList coarse = coarse_rank(queries[q], gallery, q);
    lists.push_back(local_rerank(queries[q], coarse, gallery, params.top_n, params.lambda, params.score_mode));
    qi.push_back({queries[q].identity, queries[q].camera});
  }
  for (const auto& g : gallery) gi.push_back({g.identity, g.camera});
  return evaluate(lists, qi, gi, k_max);
}

// --- files -----------------------------------------------------------------------

namespace {
std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
  return std::filesystem::path(base.string() + suffix);
}
}  // namespace

void save_embeddings(std::span<const EmbeddingRecord> records, const std::filesystem::path& base) {
  std::ofstream manifest(with_suffix(base, ".jsonl"), std::ios::binary);
  std::ofstream payload(with_suffix(base, ".bin"), std::ios::binary);
  if (!manifest || !payload) throw FormatError("cannot open embedding files at " + base.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["id"] = r.identity;
    j["camera"] = r.camera;
    j["offset"] = static_cast<std::uint64_t>(payload.tellp());
    j["local"] = r.has_local();
    j["confidences"] = r.confidences;
    j["visible"] = r.visible;
    manifest << j.dump() << '\n';
    write_tensor(payload, Tensor({r.global.size()}, r.global));
    if (r.has_local()) {
      std::vector<double> rows;
      for (const auto& g : r.groups) rows.insert(rows.end(), g.begin(), g.end());
      write_tensor(payload, Tensor({kNumGroups, r.global.size()}, std::move(rows)));
    }
  }
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& base) {
  std::ifstream manifest(with_suffix(base, ".jsonl"), std::ios::binary);
  std::ifstream payload(with_suffix(base, ".bin"), std::ios::binary);
  if (!manifest || !payload) throw FormatError("cannot open embedding files at " + base.string());
  std::vector<EmbeddingRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      EmbeddingRecord r;
      r.identity = j.at("id").get<int>();
      r.camera = j.at("camera").get<int>();
      r.confidences = j.at("confidences").get<std::array<double, kNumGroups>>();
      r.visible = j.at("visible").get<std::array<bool, kNumGroups>>();
      payload.seekg(static_cast<std::streamoff>(j.at("offset").get<std::uint64_t>()));
      Tensor g = read_tensor(payload);
      r.global.assign(g.data().begin(), g.data().end());
      if (j.at("local").get<bool>()) {
        Tensor rows = read_tensor(payload);
        if (rows.rank() != 2 || rows.dim(0) != kNumGroups || rows.dim(1) != r.global.size()) {
          throw FormatError("group payload has shape " + shape_str(rows.shape()));
        }
        std::size_t C = r.global.size();
        for (std::size_t k = 0; k < kNumGroups; ++k) {
          r.groups[k].assign(rows.data().begin() + static_cast<std::ptrdiff_t>(k * C),
                             rows.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * C));
        }
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("embedding manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "rank,cmc\n";
  for (std::size_t k = 0; k < report.cmc.size(); ++k) out << k + 1 << ',' << report.cmc[k] << '\n';
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  nlohmann::json j;
  j["mAP"] = report.mAP;
  j["cmc"] = report.cmc;
  j["n_queries"] = report.n_queries;
  j["skipped"] = report.skipped;
  out << j.dump(2) << '\n';
}

}  // namespace pirt
