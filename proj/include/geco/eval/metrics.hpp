#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace geco::eval {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScoredQuery {
  std::string top_id;
  std::string positive_bottom_id;
  std::vector<std::pair<std::string, double>> candidates;  // (bottom_id, score), positive included once
};

// Candidates ordered by descending score, ties by ascending bottom_id.
std::vector<std::pair<std::string, double>> ranked(std::vector<std::pair<std::string, double>> candidates);

// 0-based position of the positive in ranked order. Throws if it is absent or duplicated.
std::size_t positive_rank(const ScoredQuery& q);

// Mean over every (positive, negative) comparison of [m_pos > m_neg]; ties count 0.
double auc_metric(std::span<const ScoredQuery> queries);

// Mean of 1 / (rank + 1) with 0-based ranks.
double mrr_metric(std::span<const ScoredQuery> queries);

}  // namespace geco::eval
