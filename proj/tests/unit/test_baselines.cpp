#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include <doctest.h>

#include "geco/baselines/baselines.hpp"
#include "geco/data/synth.hpp"
#include "geco/data/tensorize.hpp"
#include "geco/eval/protocol.hpp"
#include "geco/util/hash.hpp"
#include "helpers.hpp"

using namespace geco;
using namespace geco::baselines;

namespace {

SiameseBprConfig toy_siamese(int epochs) {
  SiameseBprConfig c;
  c.encoder.variant = model::EncoderVariant::tiny;
  c.encoder.tiny_channels = {16, 32, 64};
  c.image_size = 32;
  c.epochs = epochs;
  c.lr = 1e-3;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("random scores are deterministic, id-keyed and in [0,1)") {
  CHECK(random_score(1, "t", "b") == random_score(1, "t", "b"));
  CHECK(random_score(1, "t", "b") != random_score(2, "t", "b"));
  CHECK(random_score(1, "t", "b") != random_score(1, "b", "t"));
  // concatenation boundary matters
  CHECK(random_score(1, "ab", "c") != random_score(1, "a", "bc"));
  RandomScorer s(9);
  const std::vector<std::string> ids{"x", "y", "z"};
  const auto v = s.score("t", ids);
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(v[i] == random_score(9, "t", ids[i]));
}

TEST_CASE("random scores are uniform: mean and Kolmogorov-Smirnov distance over 1e5 draws") {
  std::vector<double> x;
  x.reserve(100000);
  for (int i = 0; i < 100000; ++i) x.push_back(random_score(42, "top" + std::to_string(i % 1000), "b" + std::to_string(i)));
  double mean = 0;
  for (double v : x) {
    CHECK_MESSAGE((v >= 0.0 && v < 1.0), v);
    mean += v;
  }
  mean /= x.size();
  CHECK(mean >= 0.49);
  CHECK(mean <= 0.51);
  std::sort(x.begin(), x.end());
  double ks = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) ks = std::max({ks, (i + 1) / n - x[i], x[i] - i / n});
  CHECK(ks < 0.01);
}

TEST_CASE("random scorer needs no images") {
  // manifest paths point nowhere; scoring and evaluation still work
  std::vector<data::PairRecord> pairs;
  std::map<std::string, data::ItemRecord> items;
  for (int i = 0; i < 30; ++i) {
    const auto t = "t" + std::to_string(i), b = "b" + std::to_string(i);
    items[t] = {data::Category::top, "missing/" + t};
    items[b] = {data::Category::bottom, "missing/" + b};
    pairs.push_back({"p" + std::to_string(i), t, b, data::Split::test});
  }
  const auto m = data::PairManifest::build(pairs, items, "/does/not/exist");
  RandomScorer s(1);
  const auto r = eval::evaluate_mgcm(s, m, data::Split::test, 3, 9, 5);
  CHECK(r.n_queries == 30);
}

TEST_CASE("siamese embedding is shared, so scoring is symmetric and the checkpoint round-trips") {
  testutil::TempDir dir("siamese");
  SiameseCheckpoint ck(toy_siamese(0));
  const auto a = testutil::random_image("a", 32, 1), b = testutil::random_image("b", 32, 2);
  CHECK(siamese_score(ck, a, b) == siamese_score(ck, b, a));
  auto b_as_top = b;
  b_as_top.category = data::Category::top;
  CHECK(siamese_score(ck, a, b_as_top) == siamese_score(ck, a, b));

  nn::NoGradGuard ng;
  const auto e = ck.embed(data::stack_images<float>(std::vector<data::ItemImage>{a}), false);
  CHECK(e.shape() == nn::Shape{1, 128});

  ck.save(dir / "s.ckpt");
  auto back = SiameseCheckpoint::load(dir / "s.ckpt");
  CHECK(siamese_score(back, a, b) == siamese_score(ck, a, b));
  back.save(dir / "s2.ckpt");
  CHECK(util::sha256_file(dir / "s.ckpt") == util::sha256_file(dir / "s2.ckpt"));
}

TEST_CASE("untrained siamese sits in the random-feature band and BPR training lifts it") {
  testutil::TempDir dir("siamese_train");
  const auto m = data::synth_toy_dataset(200, 32, 7, dir / "data");

  SiameseCheckpoint untrained(toy_siamese(0));
  SiameseScorer s0(untrained, m);
  const double auc0 = eval::evaluate_full(s0, m, data::Split::test, 1).auc;
  MESSAGE("untrained siamese test AUC " << auc0);
  CHECK(auc0 >= 0.35);
  CHECK(auc0 <= 0.65);

  auto trained = train_siamese_bpr(m, toy_siamese(20), dir / "out");
  CHECK(trained.epoch == 20);
  CHECK(std::filesystem::exists(dir / "out/siamese.ckpt"));
  SiameseScorer s1(trained, m);
  const double auc1 = eval::evaluate_full(s1, m, data::Split::test, 1).auc;
  MESSAGE("trained siamese test AUC " << auc1);
  CHECK(auc1 >= 0.85);
}

}
