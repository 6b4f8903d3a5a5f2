#include "drformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "drformer/errors.hpp"
#include "drformer/text_io.hpp"

namespace drformer {

DistanceMatrix pairwise_distances(const Tensor& q, const Tensor& g) {
  if (q.rank() != 2 || g.rank() != 2 || q.cols() != g.cols()) {
    throw ContractError("pairwise_distances: features " + shape_str(q.shape()) + " and " + shape_str(g.shape()) +
                        " differ in dimension");
  }
  const std::size_t nq = q.rows(), ng = g.rows(), d = q.cols();
  std::vector<double> out(nq * ng);
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < ng; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = q[i * d + c] - g[j * d + c];
        s += diff * diff;
      }
      out[i * ng + j] = std::sqrt(s);
    }
  DistanceMatrix dm;
  dm.values = Tensor({nq, ng}, std::move(out));
  return dm;
}

Tensor l2_normalize_rows(const Tensor& f) {
  if (f.rank() != 2) throw DimensionError("l2_normalize_rows: expected [n x d], got " + shape_str(f.shape()));
  std::vector<double> out(f.data().begin(), f.data().end());
  const std::size_t d = f.cols();
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += out[r * d + c] * out[r * d + c];
    if (s == 0.0) throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= inv;
  }
  return Tensor(f.shape(), std::move(out));
}

namespace {

void check_metadata(const DistanceMatrix& dm) {
  const std::size_t nq = dm.values.rows(), ng = dm.values.cols();
  if (dm.query_pids.size() != nq || dm.query_cams.size() != nq || dm.gallery_pids.size() != ng ||
      dm.gallery_cams.size() != ng) {
    throw ContractError("evaluate: metadata lengths do not match the " + shape_str(dm.values.shape()) +
                        " distance matrix");
  }
}

// Positions (0-based, after exclusion) of the true matches of query i under
// the given gallery order.
std::vector<std::size_t> match_positions(const DistanceMatrix& dm, std::size_t i, const std::vector<std::size_t>& order) {
  std::vector<std::size_t> pos;
  std::size_t rank = 0;
  for (auto j : order) {
    const bool same_pid = dm.gallery_pids[j] == dm.query_pids[i];
    if (same_pid && dm.gallery_cams[j] == dm.query_cams[i]) continue;
    if (same_pid) pos.push_back(rank);
    ++rank;
  }
  return pos;
}

MetricsReport reduce(const DistanceMatrix& dm, const std::vector<std::vector<std::size_t>>& positions) {
  const std::size_t ng = dm.values.cols();
  if (positions.empty()) throw ContractError("evaluate: no queries");
  MetricsReport r;
  r.cmc.assign(ng, 0.0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& pos = positions[i];
    if (pos.empty()) {
      throw ContractError("evaluate: query " + std::to_string(i) + " (pid " + std::to_string(dm.query_pids[i]) +
                          ", camid " + std::to_string(dm.query_cams[i]) + ") has no valid gallery match");
    }
    double ap = 0.0;
    for (std::size_t h = 0; h < pos.size(); ++h) ap += static_cast<double>(h + 1) / static_cast<double>(pos[h] + 1);
    r.per_query_ap.push_back(ap / static_cast<double>(pos.size()));
    for (std::size_t k = pos.front(); k < ng; ++k) r.cmc[k] += 1.0;
  }
  const double nq = static_cast<double>(positions.size());
  for (auto& c : r.cmc) c /= nq;
  r.map = std::accumulate(r.per_query_ap.begin(), r.per_query_ap.end(), 0.0) / nq;
  return r;
}

}  // namespace

MetricsReport evaluate(const DistanceMatrix& dm) {
  check_metadata(dm);
  const std::size_t nq = dm.values.rows(), ng = dm.values.cols();
  for (double v : dm.values.data()) {
    if (!(v >= 0.0)) throw ContractError("evaluate: distances must be non-negative and finite");
  }
  std::vector<std::vector<std::size_t>> positions(nq);
  std::vector<std::size_t> order(ng);
  for (std::size_t i = 0; i < nq; ++i) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = dm.values.data().data() + i * ng;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    positions[i] = match_positions(dm, i, order);
  }
  return reduce(dm, positions);
}

double brute_force_ap(std::span<const int> relevance) {
  double hits = 0.0, precision_sum = 0.0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i] != 0) {
      hits += 1.0;
      precision_sum += hits / static_cast<double>(i + 1);
    }
  }
  if (hits == 0.0) throw ContractError("brute_force_ap: relevance list holds no true match");
  return precision_sum / hits;
}

double random_ranking_map(const DistanceMatrix& dm, std::size_t trials, std::uint64_t seed) {
  check_metadata(dm);
  if (trials == 0) throw ContractError("random_ranking_map: need at least one trial");
  const std::size_t nq = dm.values.rows(), ng = dm.values.cols();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(ng);
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<std::vector<std::size_t>> positions(nq);
    for (std::size_t i = 0; i < nq; ++i) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      positions[i] = match_positions(dm, i, order);
    }
    total += reduce(dm, positions).map;
  }
  return total / static_cast<double>(trials);
}

void write_metrics(std::ostream& os, const MetricsReport& report, std::size_t max_rank) {
  os << "mAP=" << text::number(report.map) << '\n';
  const std::size_t n = max_rank == 0 ? report.cmc.size() : std::min(max_rank, report.cmc.size());
  for (std::size_t k = 0; k < n; ++k) os << "CMC[" << k + 1 << "]=" << text::number(report.cmc[k]) << '\n';
}

MetricsReport read_metrics(std::istream& is) {
  MetricsReport r;
  std::string line;
  std::size_t line_no = 0;
  bool have_map = false;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line_no);
    const auto key = t.substr(0, eq), value = t.substr(eq + 1);
    if (key == "mAP") {
      if (have_map) throw ParseError("duplicate mAP line", line_no);
      r.map = text::parse_double(value, line_no);
      have_map = true;
    } else if (key.size() > 5 && key.substr(0, 4) == "CMC[" && key.back() == ']') {
      if (!have_map) throw ParseError("CMC line before mAP", line_no);
      const auto k = text::parse_uint(key.substr(4, key.size() - 5), line_no);
      if (k != r.cmc.size() + 1) throw ParseError("CMC ranks must be consecutive from 1", line_no);
      r.cmc.push_back(text::parse_double(value, line_no));
    } else {
      throw ParseError("unknown key '" + std::string(key) + "'", line_no);
    }
  }
  if (!have_map) throw ParseError("metrics report has no mAP line", line_no);
  return r;
}

}  // namespace drformer
