#pragma once

// Reference implementations shared by the unit tests and the acceptance run.

#include <algorithm>
#include <random>
#include <vector>

#include "pirt/ops.hpp"
#include "pirt/pose.hpp"
#include "pirt/retrieval.hpp"

namespace testutil {

inline pirt::HeatmapStack random_stack(std::mt19937_64& rng, std::size_t H, std::size_t W) {
  using pirt::HeatmapOptions;
  pirt::HeatmapStack s;
  s.height = H;
  s.width = W;
  for (std::size_t p = 0; p < pirt::kNumKeypoints; ++p) s.keypoint_ids.push_back(p);
  s.maps.resize(pirt::kNumKeypoints * H * W);
  for (auto& v : s.maps) {
    // mix of near-floor cells and bumps
    double u = pirt::uniform01(rng);
    v = u < 0.3 ? HeatmapOptions::kFloor : HeatmapOptions::kFloor + u * (HeatmapOptions::kPeak - HeatmapOptions::kFloor);
  }
  pirt::update_group_scores(s);
  return s;
}

inline double window_max(const pirt::HeatmapStack& s, std::size_t p, std::size_t y, std::size_t x, std::size_t r) {
  double m = -1.0;
  for (long dy = -static_cast<long>(r); dy <= static_cast<long>(r); ++dy)
    for (long dx = -static_cast<long>(r); dx <= static_cast<long>(r); ++dx) {
      long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
      if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.height) || xx >= static_cast<long>(s.width)) continue;
      m = std::max(m, s.map(p)[static_cast<std::size_t>(yy) * s.width + static_cast<std::size_t>(xx)]);
    }
  return m;
}

// Brute-force retrieval metrics: a gallery item's rank is one plus the number
// of valid items strictly ahead of it; AP averages precision at every positive.
struct RefMetrics {
  std::vector<double> cmc;
  double mAP = 0.0;
  std::size_t evaluated = 0;
};

inline RefMetrics reference_metrics(const std::vector<std::vector<double>>& dist, const std::vector<pirt::Identity>& q,
                                    const std::vector<pirt::Identity>& g, std::size_t k_max) {
  RefMetrics ref;
  ref.cmc.assign(k_max, 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    auto valid = [&](std::size_t j) { return !(g[j].id == q[i].id && g[j].camera == q[i].camera); };
    auto ahead = [&](std::size_t a, std::size_t b) {
      return dist[i][a] < dist[i][b] || (dist[i][a] == dist[i][b] && a < b);
    };
    std::vector<std::size_t> ranks_of_pos;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!valid(j) || g[j].id != q[i].id) continue;
      std::size_t r = 1;
      for (std::size_t o = 0; o < g.size(); ++o) {
        if (o != j && valid(o) && ahead(o, j)) ++r;
      }
      ranks_of_pos.push_back(r);
    }
    if (ranks_of_pos.empty()) continue;
    ++ref.evaluated;
    double ap = 0.0;
    for (std::size_t r : ranks_of_pos) {
      std::size_t better = 0;
      for (std::size_t s : ranks_of_pos) better += s <= r;
      ap += static_cast<double>(better) / static_cast<double>(r);
    }
    ref.mAP += ap / static_cast<double>(ranks_of_pos.size());
    std::size_t best = *std::min_element(ranks_of_pos.begin(), ranks_of_pos.end());
    for (std::size_t k = 1; k <= k_max; ++k) ref.cmc[k - 1] += best <= k ? 1.0 : 0.0;
  }
  for (auto& c : ref.cmc) c /= static_cast<double>(ref.evaluated);
  ref.mAP /= static_cast<double>(ref.evaluated);
  return ref;
}

// Random labels and a distance matrix on a coarse grid (so ties occur), with
// rank lists sorted by (distance, index) that still contain excluded entries.
struct MetricInstance {
  std::vector<pirt::Identity> queries, gallery;
  std::vector<std::vector<double>> dist;
  std::vector<pirt::RankList> lists;
};

inline MetricInstance random_metric_instance(std::uint64_t seed, std::size_t nq, std::size_t ng) {
  std::mt19937_64 rng(seed);
  MetricInstance m;
  for (std::size_t i = 0; i < nq; ++i) m.queries.push_back({static_cast<int>(rng() % 8), static_cast<int>(rng() % 3)});
  for (std::size_t j = 0; j < ng; ++j) m.gallery.push_back({static_cast<int>(rng() % 8), static_cast<int>(rng() % 3)});
  m.dist.assign(nq, std::vector<double>(ng));
  for (std::size_t i = 0; i < nq; ++i) {
    for (auto& d : m.dist[i]) d = static_cast<double>(rng() % 20) / 10.0;
    pirt::RankList r;
    r.query = i;
    for (std::size_t j = 0; j < ng; ++j) r.indices.push_back(j);
    std::stable_sort(r.indices.begin(), r.indices.end(),
                     [&](std::size_t a, std::size_t b) { return m.dist[i][a] < m.dist[i][b]; });
    for (std::size_t j : r.indices) r.distances.push_back(m.dist[i][j]);
    m.lists.push_back(r);
  }
  return m;
}

inline pirt::Tensor permute_tokens(const pirt::Tensor& x, const std::vector<std::size_t>& perm) {
  std::size_t B = x.dim(0), n = x.dim(1), C = x.dim(2);
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) out[(b * n + i) * C + c] = x.at((b * n + perm[i]) * C + c);
  return pirt::Tensor(x.shape(), out);
}

}  // namespace testutil
