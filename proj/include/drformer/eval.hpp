#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "drformer/tensor.hpp"

namespace drformer {

struct DistanceMatrix {
  Tensor values;  // [Q x G], non-negative
  std::vector<std::size_t> query_pids, query_cams;
  std::vector<std::size_t> gallery_pids, gallery_cams;
};

// Euclidean distances between rows; metadata left empty.
DistanceMatrix pairwise_distances(const Tensor& query_feats, const Tensor& gallery_feats);

Tensor l2_normalize_rows(const Tensor& feats);

struct MetricsReport {
  double map = 0.0;
  std::vector<double> cmc;  // cmc[k]: fraction of queries with a true match in the top k + 1
  std::vector<double> per_query_ap;

  double rank1() const { return cmc.empty() ? 0.0 : cmc[0]; }
};

// Gallery entries sharing both pid and camid with the query are dropped, the
// rest ranked by ascending distance with ties going to the lower gallery index.
// Throws ContractError naming a query left without a true match.
MetricsReport evaluate(const DistanceMatrix& dm);

// Direct scan of a ranked 0/1 relevance list.
double brute_force_ap(std::span<const int> relevance);

// Mean mAP of uniformly random gallery rankings (same metadata and exclusions).
double random_ranking_map(const DistanceMatrix& dm, std::size_t trials, std::uint64_t seed);

// "mAP=<v>" then "CMC[k]=<v>" for ranks k = 1..max_rank (0: all).
void write_metrics(std::ostream& os, const MetricsReport& report, std::size_t max_rank = 20);
MetricsReport read_metrics(std::istream& is);

}  // namespace drformer
