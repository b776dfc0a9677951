#include "geco/eval/metrics.hpp"

#include <algorithm>

namespace geco::eval {

std::vector<std::pair<std::string, double>> ranked(std::vector<std::pair<std::string, double>> candidates) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return candidates;
}

namespace {

const std::pair<std::string, double>& find_positive(const ScoredQuery& q) {
  const std::pair<std::string, double>* hit = nullptr;
  for (const auto& c : q.candidates) {
    if (c.first != q.positive_bottom_id) continue;
    if (hit) throw MetricError("query " + q.top_id + ": positive " + q.positive_bottom_id + " listed twice");
    hit = &c;
  }
  if (!hit) throw MetricError("query " + q.top_id + ": positive " + q.positive_bottom_id + " missing from candidates");
  return *hit;
}

}  // namespace

std::size_t positive_rank(const ScoredQuery& q) {
  const auto& pos = find_positive(q);
  // Count candidates that sort strictly ahead of the positive; avoids a full sort.
  std::size_t rank = 0;
  for (const auto& c : q.candidates) {
    if (c.first == q.positive_bottom_id) continue;
    if (c.second > pos.second || (c.second == pos.second && c.first < pos.first)) ++rank;
  }
  return rank;
}

double auc_metric(std::span<const ScoredQuery> queries) {
  if (queries.empty()) throw MetricError("auc_metric: no queries");
  std::size_t wins = 0, comparisons = 0;
  for (const auto& q : queries) {
    const auto& pos = find_positive(q);
    if (q.candidates.size() < 2) throw MetricError("auc_metric: query " + q.top_id + " has no negative");
    for (const auto& c : q.candidates) {
      if (&c == &pos) continue;
      ++comparisons;
      if (pos.second > c.second) ++wins;
    }
  }
  return static_cast<double>(wins) / static_cast<double>(comparisons);
}

double mrr_metric(std::span<const ScoredQuery> queries) {
  if (queries.empty()) throw MetricError("mrr_metric: no queries");
  double total = 0;
  for (const auto& q : queries) total += 1.0 / static_cast<double>(positive_rank(q) + 1);
  return total / static_cast<double>(queries.size());
}

}  // namespace geco::eval
