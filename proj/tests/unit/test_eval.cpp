#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <doctest.h>
#include <opencv2/imgcodecs.hpp>

#include "geco/baselines/baselines.hpp"
#include "geco/data/synth.hpp"
#include "geco/eval/grid.hpp"
#include "geco/eval/metrics.hpp"
#include "geco/eval/protocol.hpp"
#include "geco/util/hash.hpp"
#include "helpers.hpp"

using namespace geco;
using namespace geco::eval;

namespace {

ScoredQuery query(const std::string& pos, std::vector<std::pair<std::string, double>> c) {
  return {"t", pos, std::move(c)};
}

// Brute force: explicit full sort for the rank, explicit pair enumeration for AUC.
struct Oracle {
  static std::size_t rank(const ScoredQuery& q) {
    std::vector<std::size_t> order(q.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = q.candidates[a];
      const auto& y = q.candidates[b];
      return x.second != y.second ? x.second > y.second : x.first < y.first;
    });
    for (std::size_t i = 0; i < order.size(); ++i)
      if (q.candidates[order[i]].first == q.positive_bottom_id) return i;
    throw std::logic_error("positive missing");
  }
  static double auc(const std::vector<ScoredQuery>& qs) {
    long wins = 0, total = 0;
    for (const auto& q : qs) {
      double p = 0;
      for (const auto& c : q.candidates)
        if (c.first == q.positive_bottom_id) p = c.second;
      for (const auto& c : q.candidates) {
        if (c.first == q.positive_bottom_id) continue;
        ++total;
        wins += p > c.second ? 1 : 0;
      }
    }
    return double(wins) / double(total);
  }
  static double mrr(const std::vector<ScoredQuery>& qs) {
    double s = 0;
    for (const auto& q : qs) s += 1.0 / double(rank(q) + 1);
    return s / double(qs.size());
  }
};

class FnScorer : public Scorer {
 public:
  explicit FnScorer(std::function<double(const std::string&, const std::string&)> f) : f_(std::move(f)) {}
  std::string name() const override { return "fn"; }
  std::vector<double> score(const std::string& top, std::span<const std::string> ids) override {
    std::vector<double> out;
    for (const auto& b : ids) out.push_back(f_(top, b));
    return out;
  }

 private:
  std::function<double(const std::string&, const std::string&)> f_;
};

// n one-to-one pairs in the test split with paths that are never read.
data::PairManifest paths_only_manifest(int n) {
  std::vector<data::PairRecord> pairs;
  std::map<std::string, data::ItemRecord> items;
  for (int i = 0; i < n; ++i) {
    const auto t = "t" + std::to_string(i), b = "b" + std::to_string(i);
    items[t] = {data::Category::top, t + ".png"};
    items[b] = {data::Category::bottom, b + ".png"};
    pairs.push_back({"p" + std::to_string(i), t, b, data::Split::test});
  }
  return data::PairManifest::build(pairs, items, "/nonexistent");
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("metric examples") {
  std::vector<ScoredQuery> wins{query("p", {{"p", 0.9}, {"n", 0.1}}), query("p", {{"p", 2}, {"n", -1}})};
  CHECK(auc_metric(wins) == 1.0);
  std::vector<ScoredQuery> wlw{query("p", {{"p", 1}, {"n", 0}}), query("p", {{"p", 0}, {"n", 1}}),
                               query("p", {{"p", 1}, {"n", 0}})};
  CHECK(auc_metric(wlw) == 2.0 / 3.0);
  CHECK(mrr_metric(wins) == 1.0);
  std::vector<ScoredQuery> fifth{query("p", {{"a", 5}, {"b", 4}, {"c", 3}, {"d", 2}, {"p", 1}, {"e", 0}})};
  CHECK(mrr_metric(fifth) == 0.2);
  CHECK(positive_rank(fifth[0]) == 4);
}

TEST_CASE("metric errors") {
  std::vector<ScoredQuery> lonely{query("p", {{"p", 1}})};
  CHECK_THROWS_AS(auc_metric(lonely), MetricError);
  std::vector<ScoredQuery> missing{query("p", {{"a", 1}, {"b", 0}})};
  CHECK_THROWS_AS(mrr_metric(missing), MetricError);
  CHECK_THROWS_AS(auc_metric(missing), MetricError);
  std::vector<ScoredQuery> twice{query("p", {{"p", 1}, {"p", 0}})};
  CHECK_THROWS_AS(mrr_metric(twice), MetricError);
  CHECK_THROWS_AS(auc_metric(std::vector<ScoredQuery>{}), MetricError);
}

TEST_CASE("ties: AUC counts 0, rank breaks by ascending id") {
  std::vector<ScoredQuery> tie{query("p", {{"p", 0.5}, {"n", 0.5}})};
  CHECK(auc_metric(tie) == 0.0);
  CHECK(positive_rank(query("b", {{"a", 1}, {"b", 1}, {"c", 1}})) == 1);
  CHECK(positive_rank(query("a", {{"c", 1}, {"b", 1}, {"a", 1}})) == 0);
}

TEST_CASE("50 randomised instances agree exactly with brute force") {
  std::mt19937_64 rng(2024);
  for (int inst = 0; inst < 50; ++inst) {
    std::uniform_int_distribution<int> nq(1, 6), nc(2, 8), sv(0, 4);
    std::vector<ScoredQuery> qs;
    const int q = nq(rng);
    for (int i = 0; i < q; ++i) {
      const int c = nc(rng);
      ScoredQuery s;
      s.top_id = "t" + std::to_string(i);
      std::vector<std::string> ids;
      for (int j = 0; j < c; ++j) ids.push_back("b" + std::to_string(j));
      std::shuffle(ids.begin(), ids.end(), rng);
      for (const auto& id : ids) s.candidates.emplace_back(id, sv(rng) * 0.25);  // coarse grid forces ties
      s.positive_bottom_id = ids[std::uniform_int_distribution<int>(0, c - 1)(rng)];
      qs.push_back(s);
    }
    INFO("instance " << inst);
    CHECK(auc_metric(qs) == Oracle::auc(qs));
    CHECK(mrr_metric(qs) == Oracle::mrr(qs));
    for (const auto& s : qs) CHECK(positive_rank(s) == Oracle::rank(s));

    // permutation and positive-scale invariance
    auto perm = qs;
    for (auto& s : perm) {
      std::shuffle(s.candidates.begin(), s.candidates.end(), rng);
      for (auto& c : s.candidates) c.second *= 3.5;
    }
    CHECK(auc_metric(perm) == auc_metric(qs));
    CHECK(mrr_metric(perm) == mrr_metric(qs));
  }
}

TEST_CASE("ranked orders by score then id") {
  const auto r = ranked({{"c", 1}, {"a", 2}, {"b", 1}, {"d", 3}});
  CHECK(r[0].first == "d");
  CHECK(r[1].first == "a");
  CHECK(r[2].first == "b");
  CHECK(r[3].first == "c");
}

TEST_CASE("random scorer reproduces the published RANDOM rows") {
  const auto m = paths_only_manifest(10000);
  baselines::RandomScorer s(17);
  const auto mg = evaluate_mgcm(s, m, data::Split::test, 3, 9, 3);
  MESSAGE("mgcm random auc " << mg.auc << " mrr " << mg.mrr);
  CHECK(std::abs(mg.mrr - 0.2928968253968254) <= 0.01);
  CHECK(std::abs(mg.auc - 0.5) <= 0.02);
  CHECK(mg.auc_comparisons == 30000);

  const auto small = paths_only_manifest(3000);
  const auto full = evaluate_full(s, small, data::Split::test, 3);
  MESSAGE("full random auc " << full.auc);
  CHECK(std::abs(full.auc - 0.5) <= 0.02);
  CHECK(full.queries.front().candidates == 3000);
}

TEST_CASE("perfect scorer gives AUC and MRR of 1 under both protocols") {
  const auto m = paths_only_manifest(40);
  FnScorer perfect([&](const std::string& t, const std::string& b) { return m.is_positive(t, b) ? 1.0 : 0.0; });
  const auto mg = evaluate_mgcm(perfect, m, data::Split::test, 3, 9, 1);
  CHECK(mg.auc == 1.0);
  CHECK(mg.mrr == 1.0);
  const auto full = evaluate_full(perfect, m, data::Split::test, 1);
  CHECK(full.auc == 1.0);
  CHECK(full.mrr == 1.0);
}

TEST_CASE("insufficient negatives and empty splits are errors") {
  const auto m = paths_only_manifest(5);
  baselines::RandomScorer s(1);
  CHECK_THROWS(evaluate_mgcm(s, m, data::Split::test, 3, 9, 1));
  CHECK_NOTHROW(evaluate_mgcm(s, m, data::Split::test, 3, 4, 1));
  CHECK_THROWS(evaluate_full(s, m, data::Split::val, 1));
}

TEST_CASE("hue oracle on the toy dataset matches brute-force ranking") {
  testutil::TempDir dir("hue_oracle");
  const auto m = data::synth_toy_dataset(200, 16, 7, dir / "data");
  const auto hues = data::load_synth_hues(dir / "data");
  FnScorer oracle([&](const std::string& t, const std::string& b) { return hues.at(t) == hues.at(b) ? 1.0 : 0.0; });
  const auto rep = evaluate_full(oracle, m, data::Split::test, 9);

  // brute force over the split's catalogue
  const auto catalog = m.item_ids(data::Category::bottom, data::Split::test);
  double rr = 0;
  for (std::size_t k = 0; k < rep.queries.size(); ++k) {
    const auto& q = rep.queries[k];
    std::size_t ahead = 0;
    for (const auto& b : catalog)
      if (!m.is_positive(q.top_id, b) && hues.at(b) == hues.at(q.top_id) && b < q.positive_bottom_id) ++ahead;
    CHECK(q.rank == ahead);
    rr += 1.0 / (ahead + 1);
  }
  CHECK(rep.mrr == doctest::Approx(rr / rep.queries.size()).epsilon(1e-15));
  // AUC loses exactly the comparisons whose sampled negative shares the hue
  CHECK(rep.auc <= 1.0);
  CHECK(rep.auc >= 0.8);

  // keep one test pair per hue: no same-hue negative exists, so AUC and MRR are exactly 1
  std::vector<data::PairRecord> unique;
  std::set<int> seen;
  for (std::size_t i : m.split_indices(data::Split::test))
    if (seen.insert(hues.at(m.pairs()[i].top_id)).second) unique.push_back(m.pairs()[i]);
  const auto um = data::PairManifest::build(unique, m.items(), m.root());
  const auto urep = evaluate_full(oracle, um, data::Split::test, 9);
  CHECK(urep.auc == 1.0);
  CHECK(urep.mrr == 1.0);
}

TEST_CASE("reports are deterministic and round-trip through text") {
  testutil::TempDir dir("report");
  const auto m = paths_only_manifest(50);
  baselines::RandomScorer s(4);
  auto a = evaluate_full(s, m, data::Split::test, 8);
  auto b = evaluate_full(s, m, data::Split::test, 8);
  a.config_hash = b.config_hash = "cfg";
  a.write(dir / "a.txt");
  b.write(dir / "b.txt");
  CHECK(util::sha256_file(dir / "a.txt") == util::sha256_file(dir / "b.txt"));
  const auto back = read_report(dir / "a.txt");
  CHECK(back.auc == a.auc);
  CHECK(back.mrr == a.mrr);
  CHECK(back.n_queries == 50);
  CHECK(back.queries.size() == 50);
  CHECK(back.queries[3].rank == a.queries[3].rank);
  CHECK(back.queries[3].positive_score == a.queries[3].positive_score);
  CHECK(back.dataset_digest == m.digest());
  CHECK(back.to_text() == a.to_text());
  const auto c = evaluate_full(s, m, data::Split::test, 9);
  CHECK(c.to_text() != a.to_text());
}

TEST_CASE("retrieval grid layout, highlight and byte-identical output") {
  testutil::TempDir dir("grid");
  const int size = 24;
  const auto top = testutil::random_image("t", size, 1);
  cigm::Template templ{"t", 0, size, testutil::random_image("x", size, 2).pixels};
  std::vector<std::pair<data::ItemImage, double>> ranked;
  for (int i = 0; i < 5; ++i) ranked.emplace_back(testutil::random_image("b" + std::to_string(i), size, 10 + i), 1.0 - i * 0.1);

  const auto layout = render_retrieval_grid(top, templ, ranked, "b2", dir / "g1.png");
  render_retrieval_grid(top, templ, ranked, "b2", dir / "g2.png");
  CHECK(layout.tiles == 7);
  CHECK(layout.highlighted == 4);
  CHECK(util::sha256_file(dir / "g1.png") == util::sha256_file(dir / "g2.png"));

  const cv::Mat img = cv::imread((dir / "g1.png").string(), cv::IMREAD_COLOR);
  REQUIRE(img.cols == layout.width);
  REQUIRE(img.rows == layout.height);
  int red_tiles = 0;
  for (int t = 0; t < layout.tiles; ++t) {
    // middle of the outline's top edge; side edges of neighbours touch
    const int x = 6 + t * (size + 6) + size / 2;
    const auto px = img.at<cv::Vec3b>(6 - 3, x);
    if (px[0] == 0 && px[1] == 0 && px[2] == 255) ++red_tiles;
  }
  CHECK(red_tiles == 1);

  const auto none = render_retrieval_grid(top, templ, ranked, "absent", dir / "g3.png");
  CHECK(none.highlighted == -1);
  CHECK_THROWS(render_retrieval_grid(top, templ, {}, "b2", dir / "g4.png"));
}

}
