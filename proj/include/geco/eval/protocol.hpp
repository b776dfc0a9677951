#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geco/data/manifest.hpp"
#include "geco/eval/metrics.hpp"
#include "geco/eval/scorer.hpp"

namespace geco::eval {

enum class Protocol { full, mgcm };

std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& s);

struct QueryLine {
  std::string pair_id;
  std::string top_id;
  std::string positive_bottom_id;
  std::size_t rank = 0;  // 0-based, within the MRR candidate list
  std::size_t candidates = 0;
  double positive_score = 0;
};

struct EvalReport {
  Protocol protocol = Protocol::full;
  std::string scorer;
  std::string split = "test";
  double auc = 0;
  double mrr = 0;
  std::size_t n_queries = 0;
  std::size_t auc_comparisons = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::string config_hash;
  std::string dataset_digest;
  std::vector<QueryLine> queries;

  // "key: value" header lines, a blank line, then one tab-separated line per query.
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;
};

// Reads the header fields back (per-query lines included).
EvalReport read_report(const std::filesystem::path& path);

// MRR over every bottom of the split (minus other positives of the top); AUC against one
// uniformly sampled negative per pair. Deterministic per seed.
EvalReport evaluate_full(Scorer& scorer, const data::PairManifest& manifest, data::Split split, std::uint64_t seed);

// n_auc negatives for AUC and n_mrr for MRR, each drawn without replacement from the
// split's bottoms (minus positives of the top).
EvalReport evaluate_mgcm(Scorer& scorer, const data::PairManifest& manifest, data::Split split, std::size_t n_auc,
                         std::size_t n_mrr, std::uint64_t seed);

}  // namespace geco::eval
