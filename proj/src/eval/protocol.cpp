#include "geco/eval/protocol.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "geco/data/sampling.hpp"
#include "geco/util/hash.hpp"

namespace geco::eval {

std::string to_string(Protocol p) { return p == Protocol::full ? "full" : "mgcm"; }

Protocol parse_protocol(const std::string& s) {
  if (s == "full") return Protocol::full;
  if (s == "mgcm") return Protocol::mgcm;
  throw std::invalid_argument("unknown protocol '" + s + "' (expected full or mgcm)");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> checked_split(const data::PairManifest& manifest, data::Split split) {
  auto idx = manifest.split_indices(split);
  if (idx.empty())
    throw std::invalid_argument("evaluation split '" + std::string(data::to_string(split)) + "' is empty");
  return idx;
}

ScoredQuery score_query(Scorer& scorer, const data::PairRecord& pair, std::vector<std::string> negatives) {
  std::vector<std::string> ids;
  ids.reserve(negatives.size() + 1);
  ids.push_back(pair.bottom_id);
  for (auto& n : negatives) ids.push_back(std::move(n));
  const auto scores = scorer.score(pair.top_id, ids);
  if (scores.size() != ids.size()) throw std::runtime_error("scorer returned the wrong number of scores");
  ScoredQuery q{pair.top_id, pair.bottom_id, {}};
  q.candidates.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) q.candidates.emplace_back(std::move(ids[i]), scores[i]);
  return q;
}

QueryLine line_for(const data::PairRecord& pair, const ScoredQuery& q) {
  return {pair.pair_id, pair.top_id, pair.bottom_id, positive_rank(q), q.candidates.size(),
          q.candidates.front().second};
}

}  // namespace

EvalReport evaluate_full(Scorer& scorer, const data::PairManifest& manifest, data::Split split, std::uint64_t seed) {
  const auto idx = checked_split(manifest, split);
  const auto catalog = manifest.item_ids(data::Category::bottom, split);
  const auto auc_seed = util::derive_seed(seed, "eval-full-auc");

  EvalReport rep;
  rep.protocol = Protocol::full;
  rep.scorer = scorer.name();
  rep.split = std::string(data::to_string(split));
  rep.seed = seed;
  rep.checkpoint_hash = scorer.checkpoint_hash();
  rep.dataset_digest = manifest.digest();

  std::vector<ScoredQuery> auc_queries;
  double rr_sum = 0;
  std::string scored_top;
  std::vector<double> scores;  // aligned with catalog, for scored_top
  for (std::size_t i : idx) {
    const auto& pair = manifest.pairs()[i];
    if (scores.empty() || scored_top != pair.top_id) {
      scores = scorer.score(pair.top_id, catalog);
      scored_top = pair.top_id;
      if (scores.size() != catalog.size()) throw std::runtime_error("scorer returned the wrong number of scores");
    }
    auto lookup = [&](const std::string& id) {
      const auto pos = std::lower_bound(catalog.begin(), catalog.end(), id) - catalog.begin();
      return scores[static_cast<std::size_t>(pos)];
    };

    // Rank against the whole catalog without materialising a ScoredQuery per top; the
    // ordering rule is the one positive_rank applies.
    const auto& positives = manifest.positives_of(pair.top_id);
    const double pos_score = lookup(pair.bottom_id);
    std::size_t rank = 0, candidates = 1;
    for (std::size_t c = 0; c < catalog.size(); ++c) {
      if (positives.count(catalog[c])) continue;
      ++candidates;
      if (scores[c] > pos_score || (scores[c] == pos_score && catalog[c] < pair.bottom_id)) ++rank;
    }
    if (candidates < 2)
      throw std::invalid_argument("evaluate_full: no negative bottoms available for top " + pair.top_id);

    const auto neg = data::sample_negative(manifest, pair.top_id, util::keyed_seed(auc_seed, pair.pair_id), catalog);
    auc_queries.push_back({pair.top_id, pair.bottom_id, {{pair.bottom_id, pos_score}, {neg, lookup(neg)}}});
    rep.queries.push_back({pair.pair_id, pair.top_id, pair.bottom_id, rank, candidates, pos_score});
    rr_sum += 1.0 / static_cast<double>(rank + 1);
  }
  rep.auc = auc_metric(auc_queries);
  rep.mrr = rr_sum / static_cast<double>(idx.size());
  rep.n_queries = idx.size();
  rep.auc_comparisons = auc_queries.size();
  return rep;
}

EvalReport evaluate_mgcm(Scorer& scorer, const data::PairManifest& manifest, data::Split split, std::size_t n_auc,
                         std::size_t n_mrr, std::uint64_t seed) {
  if (n_auc < 1 || n_mrr < 1) throw std::invalid_argument("evaluate_mgcm: n_auc and n_mrr must be >= 1");
  const auto idx = checked_split(manifest, split);
  const auto pool = manifest.item_ids(data::Category::bottom, split);
  const auto auc_seed = util::derive_seed(seed, "eval-mgcm-auc");
  const auto mrr_seed = util::derive_seed(seed, "eval-mgcm-mrr");

  EvalReport rep;
  rep.protocol = Protocol::mgcm;
  rep.scorer = scorer.name();
  rep.split = std::string(data::to_string(split));
  rep.seed = seed;
  rep.checkpoint_hash = scorer.checkpoint_hash();
  rep.dataset_digest = manifest.digest();

  std::vector<ScoredQuery> auc_queries, mrr_queries;
  for (std::size_t i : idx) {
    const auto& pair = manifest.pairs()[i];
    auto auc_neg = data::sample_negatives(manifest, pair.top_id, n_auc, util::keyed_seed(auc_seed, pair.pair_id), pool);
    auto mrr_neg = data::sample_negatives(manifest, pair.top_id, n_mrr, util::keyed_seed(mrr_seed, pair.pair_id), pool);
    if (auc_neg.size() < n_auc || mrr_neg.size() < n_mrr)
      throw std::invalid_argument("evaluate_mgcm: top " + pair.top_id + " has only " + std::to_string(mrr_neg.size()) +
                                  " eligible negatives in split " + rep.split + ", need " +
                                  std::to_string(std::max(n_auc, n_mrr)));
    auc_queries.push_back(score_query(scorer, pair, std::move(auc_neg)));
    mrr_queries.push_back(score_query(scorer, pair, std::move(mrr_neg)));
    rep.queries.push_back(line_for(pair, mrr_queries.back()));
  }
  rep.auc = auc_metric(auc_queries);
  rep.mrr = mrr_metric(mrr_queries);
  rep.n_queries = idx.size();
  rep.auc_comparisons = idx.size() * n_auc;
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "protocol: " << to_string(protocol) << '\n'
     << "scorer: " << scorer << '\n'
     << "split: " << split << '\n'
     << "auc: " << fmt(auc) << '\n'
     << "mrr: " << fmt(mrr) << '\n'
     << "n_queries: " << n_queries << '\n'
     << "auc_comparisons: " << auc_comparisons << '\n'
     << "seed: " << seed << '\n'
     << "checkpoint_hash: " << checkpoint_hash << '\n'
     << "config_hash: " << config_hash << '\n'
     << "dataset_digest: " << dataset_digest << '\n'
     << '\n'
     << "pair_id\ttop_id\tpositive_bottom_id\trank\tcandidates\tpositive_score\n";
  for (const auto& q : queries)
    os << q.pair_id << '\t' << q.top_id << '\t' << q.positive_bottom_id << '\t' << q.rank << '\t' << q.candidates
       << '\t' << fmt(q.positive_score) << '\n';
  return os.str();
}

void EvalReport::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << to_text();
  if (!f) throw std::runtime_error("cannot write report " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  EvalReport rep;
  std::string line;
  while (std::getline(in, line) && !line.empty()) {
    const auto colon = line.find(": ");
    const auto key = line.substr(0, colon);
    const auto value = colon == std::string::npos ? std::string() : line.substr(colon + 2);
    if (key == "protocol") rep.protocol = parse_protocol(value);
    else if (key == "scorer") rep.scorer = value;
    else if (key == "split") rep.split = value;
    else if (key == "auc") rep.auc = std::stod(value);
    else if (key == "mrr") rep.mrr = std::stod(value);
    else if (key == "n_queries") rep.n_queries = std::stoull(value);
    else if (key == "auc_comparisons") rep.auc_comparisons = std::stoull(value);
    else if (key == "seed") rep.seed = std::stoull(value);
    else if (key == "checkpoint_hash") rep.checkpoint_hash = value;
    else if (key == "config_hash") rep.config_hash = value;
    else if (key == "dataset_digest") rep.dataset_digest = value;
  }
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    QueryLine q;
    std::string score;
    std::getline(ls, q.pair_id, '\t');
    std::getline(ls, q.top_id, '\t');
    std::getline(ls, q.positive_bottom_id, '\t');
    ls >> q.rank >> q.candidates >> score;
    q.positive_score = std::stod(score);
    rep.queries.push_back(std::move(q));
  }
  return rep;
}

}  // namespace geco::eval
