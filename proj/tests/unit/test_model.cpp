#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <doctest.h>

#include "geco/cigm/cigm.hpp"
#include "geco/data/synth.hpp"
#include "geco/data/tensorize.hpp"
#include "geco/eval/metrics.hpp"
#include "geco/model/geco.hpp"
#include "geco/model/losses.hpp"
#include "geco/util/archive.hpp"
#include "geco/util/hash.hpp"
#include "helpers.hpp"
#include "mini_models.hpp"

using namespace geco;
using namespace geco::model;

namespace {

GecoConfig tiny_config(int image_size = 16) {
  GecoConfig c;
  c.encoder.variant = EncoderVariant::tiny;
  c.encoder.tiny_channels = {8, 16, 32};
  c.image_size = image_size;
  return c;
}

GecoTrainConfig quick_train(int epochs) {
  GecoTrainConfig t;
  t.epochs = epochs;
  t.lr = 1e-3;
  t.batch_size = 8;
  t.seed = 5;
  return t;
}

// Identity "templates": every top's own image, so stage 2 can run without a trained generator.
TemplateIndex self_templates(const data::PairManifest& m) {
  TemplateIndex idx;
  for (const auto& id : m.item_ids(data::Category::top)) idx[id] = {0, m.image_path(id)};
  return idx;
}

bool same_params(const nn::ParameterSet<float>& a, const nn::ParameterSet<float>& b) {
  for (const auto& [name, v] : a.items())
    if (std::memcmp(v.data().data(), b.get(name).data().data(), v.data().size_bytes()) != 0) return false;
  return true;
}

std::vector<double> uniform_negatives(std::size_t k, double value) { return std::vector<double>(k, value); }

}  // namespace

TEST_SUITE("model") {

TEST_CASE("score is the dot product") {
  std::vector<float> e1(128, 0.f), e2(128, 0.f);
  e1[0] = 1.f;
  e2[1] = 1.f;
  CHECK(score(e1, e1) == 1.0);
  CHECK(score(e1, e2) == 0.0);
  std::vector<float> q(128, 0.f), c(128, 0.f);
  q[0] = 1;
  q[1] = 2;
  c[0] = 3;
  c[1] = -1;
  CHECK(score(q, c) == 1.0);
}

TEST_CASE("bpr loss closed forms and monotonicity") {
  CHECK(std::abs(bpr_loss(0.7, 0.7) - std::log(2.0)) < 1e-9);
  CHECK(bpr_loss(20, 0) == doctest::Approx(2.061153620314381e-09).epsilon(1e-9));
  CHECK(bpr_loss(0, 20) == doctest::Approx(20.000000002061153).epsilon(1e-14));
  CHECK(std::isfinite(bpr_loss(0, 1e6)));
  CHECK(bpr_loss(1e6, 0) >= 0.0);
  double prev = bpr_loss(-50, 0);
  for (double gap = -49.5; gap <= 30; gap += 0.5) {
    const double v = bpr_loss(gap, 0);
    CHECK(v < prev);
    CHECK(v > 0);
    prev = v;
  }
}

TEST_CASE("info_nce closed forms") {
  // K scores in the denominator, the positive among them
  for (auto [k, tau] : {std::pair{4, 1.0}, std::pair{8, 0.5}, std::pair{64, 0.1}}) {
    const auto negs = uniform_negatives(k - 1, 0.3);
    CHECK(std::abs(info_nce_loss(0.3, negs, tau) - std::log(double(k)) / tau) < 1e-9);
    CHECK(std::abs(info_nce_loss(0.3, negs, tau, InfoNceForm::canonical) - std::log(double(k))) < 1e-9);
  }
  const std::vector<double> one{0.0};
  CHECK(info_nce_loss(1.0, one, 0.5) == doctest::Approx(0.2538560220859452).epsilon(1e-12));
  CHECK(info_nce_loss(1e4, one, 1.0) < 1e-12);
  CHECK_THROWS(info_nce_loss(1.0, one, 0.0));
  CHECK_THROWS(info_nce_loss(1.0, one, -1.0));
  CHECK_THROWS(info_nce_loss(1.0, std::vector<double>{}, 1.0));
}

TEST_CASE("info_nce bounds and temperature limit") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> negs(1 + trial % 9);
    for (auto& v : negs) v = n(rng);
    const double pos = n(rng), tau = 0.05 + (trial % 7) * 0.2;
    const double l = info_nce_loss(pos, negs, tau);
    CHECK(l >= 0.0);
    const bool pos_is_max = std::all_of(negs.begin(), negs.end(), [&](double v) { return v <= pos; });
    if (pos_is_max) CHECK(l <= std::log(double(negs.size() + 1)) / tau + 1e-12);
  }
  // unique maximum at the positive: loss -> 0 as tau -> 0+. The 1/tau prefactor makes the
  // loss rise first (0.93 at tau 1, 1.21 at tau 0.5), so monotonicity is only checked below 0.2.
  const std::vector<double> negs{0.2, -0.1, 0.5};
  CHECK(info_nce_loss(0.9, negs, 0.5) > info_nce_loss(0.9, negs, 1.0));
  double prev = info_nce_loss(0.9, negs, 0.2);
  for (double tau : {0.1, 0.05, 0.02, 0.01}) {
    const double v = info_nce_loss(0.9, negs, tau);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("reg loss is the unsquared l2 norm") {
  CHECK(reg_loss(std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(reg_loss(std::vector<double>{3.0}) == 3.0);
  CHECK(reg_loss(std::vector<double>{3.0, 4.0}) == 5.0);
  nn::ParameterSet<double> ps;
  auto& a = ps.add("a", {2});
  a.mutable_data()[0] = 3;
  a.mutable_data()[1] = 4;
  CHECK(reg_loss(ps) == 5.0);
}

TEST_CASE("total loss examples") {
  LossWeights w;
  w.gamma = 0;
  w.tau = 1;
  BatchScores equal{{0.4}, {0.4}, {{0.4, 0.4, 0.4}}};
  w.alpha = 1;
  w.beta = 0;
  CHECK(std::abs(total_loss(equal, w, 0).total - std::log(2.0)) < 1e-12);
  w.alpha = 0;
  w.beta = 1;
  CHECK(std::abs(total_loss(equal, w, 0).total - std::log(4.0)) < 1e-12);
  w.alpha = 0.5;
  CHECK(total_loss(equal, w, 0).total == doctest::Approx(1.7328679513998633).epsilon(1e-12));
  w.gamma = 0.1;
  CHECK(total_loss(equal, w, 2.0).total == doctest::Approx(1.7328679513998633 + 0.2).epsilon(1e-12));
}

TEST_CASE("loss weight validation lists every problem") {
  LossWeights w;
  w.alpha = 0;
  w.beta = 0;
  w.tau = 0;
  try {
    w.validate();
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("tau") != std::string::npos);
    CHECK(msg.find("alpha and beta") != std::string::npos);
  }
  LossWeights ok;
  CHECK(ok.alpha == 0.5);
  CHECK(ok.beta == 1.0);
  CHECK(ok.gamma == 1e-4);
  CHECK(ok.tau == 0.5);
  CHECK(ok.form == InfoNceForm::paper);
}

TEST_CASE("batch objective equals the scalar losses, and masked weights give the ablation variants") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    const auto wdraw = testutil::random_weights(100 + trial);
    for (auto [a, b] : {std::pair{wdraw.alpha, wdraw.beta}, std::pair{0.0, wdraw.beta}, std::pair{wdraw.alpha, 0.0}}) {
      LossWeights w = wdraw;
      w.alpha = a;
      w.beta = b;
      testutil::MiniGeco g(200 + trial, w);
      const auto t = g.terms();
      const double reg = reg_loss(g.model->params());
      // scalar recomputation from the embedding rows
      auto q = g.model->compose_query(g.model->encode(g.tops, true), g.model->encode(g.templates, true));
      auto cp = g.model->project_candidate(g.model->encode(g.pos, true));
      auto cn = g.model->project_candidate(g.model->encode(g.neg, true));
      const std::size_t n = 4, d = static_cast<std::size_t>(g.cfg.embed_dim);
      BatchScores s;
      for (std::size_t i = 0; i < n; ++i) {
        auto row = [&](const nn::Var<double>& m, std::size_t r) { return m.data().subspan(r * d, d); };
        auto dot = [&](auto x, auto y) { return std::inner_product(x.begin(), x.end(), y.begin(), 0.0); };
        s.positive.push_back(dot(row(q, i), row(cp, i)));
        s.bpr_negative.push_back(dot(row(q, i), row(cn, i)));
        std::vector<double> others;
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) others.push_back(dot(row(q, i), row(cp, j)));
        s.nce_negatives.push_back(others);
      }
      const auto ref = total_loss(s, w, reg);
      CHECK(std::abs(t.total.item() - ref.total) <= 1e-12 * std::abs(ref.total));
      if (b == 0) CHECK(std::abs(t.total.item() - (a * ref.bpr + w.gamma * reg)) <= 1e-12 * std::abs(ref.total));
      if (a == 0) CHECK(std::abs(t.total.item() - (b * ref.nce + w.gamma * reg)) <= 1e-12 * std::abs(ref.total));
    }
  }
  CHECK_THROWS(batch_objective(nn::Var<double>::zeros({1, 4}), nn::Var<double>::zeros({1, 4}),
                               nn::Var<double>::zeros({1, 4}), LossWeights{}, nn::ParameterSet<double>{}));
}

TEST_CASE("total loss gradient matches central differences at step 1e-3 on the tiny model") {
  testutil::MiniGeco probe(1, LossWeights{});
  CHECK(probe.model->params().scalar_count() <= 50000);
  const auto w = testutil::random_weights(7);
  const auto r = testutil::geco_grad_check(31, w);
  INFO("worst " << r.worst << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("total loss gradient agrees with one-sided differences wherever it is differentiable") {
  for (std::uint64_t seed : {31u, 32u}) {
    testutil::MiniGeco g(seed, testutil::random_weights(seed));
    const auto r = testutil::smooth_point_check(g.model->params(), [&] { return g.terms().total; });
    INFO("checked " << r.checked << ", kinked " << r.kinked << ", first wrong " << r.first_wrong);
    CHECK(r.wrong == 0);
    CHECK(r.kinked * 5 < r.checked);
  }
}

TEST_CASE("encoder shapes and determinism") {
  SUBCASE("tiny on 32x32") {
    GecoConfig c = tiny_config(32);
    GecoModel<float> m(c);
    m.init(1);
    auto x = testutil::random_tensor<float>({2, 3, 32, 32}, 4);
    nn::NoGradGuard ng;
    auto f = m.encode(x, false);
    CHECK(f.shape() == nn::Shape{2, 512});
    auto f2 = m.encode(x, false);
    CHECK(std::equal(f.data().begin(), f.data().end(), f2.data().begin()));
    CHECK_THROWS(m.encode(testutil::random_tensor<float>({1, 3, 16, 16}, 1), false));
  }
  SUBCASE("residual encoder on 128x128") {
    GecoConfig c;
    c.image_size = 128;
    GecoModel<float> m(c);
    m.init(2);
    auto x = testutil::random_tensor<float>({1, 3, 128, 128}, 5);
    nn::NoGradGuard ng;
    auto f = m.encode(x, false);
    CHECK(f.shape() == nn::Shape{1, 512});
    CHECK(std::all_of(f.data().begin(), f.data().end(), [](float v) { return std::isfinite(v); }));
    auto q = m.compose_query(f, f);
    CHECK(q.shape() == nn::Shape{1, 128});
    CHECK(m.params().contains("enc.layer4.1.conv2.weight"));
    CHECK(m.params().contains("enc.layer2.0.downsample.0.weight"));
  }
}

TEST_CASE("query and candidate heads") {
  GecoModel<float> m(tiny_config());
  m.init(3);
  nn::NoGradGuard ng;
  auto a = testutil::random_tensor<float>({1, 512}, 1), b = testutil::random_tensor<float>({1, 512}, 2);
  auto q1 = m.compose_query(a, b), q2 = m.compose_query(b, a);
  CHECK(q1.shape() == nn::Shape{1, 128});
  CHECK(!std::equal(q1.data().begin(), q1.data().end(), q2.data().begin()));
  auto c1 = m.project_candidate(a), c2 = m.project_candidate(b);
  CHECK(c1.shape() == nn::Shape{1, 128});
  CHECK(!std::equal(c1.data().begin(), c1.data().end(), c2.data().begin()));

  // heads are disjoint parameter sets
  for (const auto& [name, _] : m.params().items())
    CHECK_FALSE((name.rfind("query.", 0) == 0 && name.find("candidate") != std::string::npos));

  // zero weights and biases give zero outputs for zero inputs
  for (const auto& [name, v] : m.params().items())
    if (name.rfind("enc.", 0) != 0) {
      auto vv = v;
      std::fill(vv.mutable_data().begin(), vv.mutable_data().end(), 0.f);
    }
  auto zero = nn::Var<float>::zeros({1, 512});
  auto qz = m.compose_query(zero, zero), cz = m.project_candidate(zero);
  CHECK(std::all_of(qz.data().begin(), qz.data().end(), [](float v) { return v == 0.f; }));
  CHECK(std::all_of(cz.data().begin(), cz.data().end(), [](float v) { return v == 0.f; }));
}

TEST_CASE("paper training constants and the step schedule") {
  GecoTrainConfig t;
  CHECK(t.epochs == 50);
  CHECK(t.lr == 1e-4);
  CHECK(t.batch_size == 64);
  CHECK(t.step_epochs == 8);
  CHECK(t.step_factor == 0.1);
  CHECK(t.lr_at(1) == 1e-4);
  CHECK(t.lr_at(8) == 1e-4);
  CHECK(t.lr_at(9) == doctest::Approx(1e-5));
  CHECK(t.lr_at(17) == doctest::Approx(1e-6));
  GecoConfig c;
  CHECK(c.encoder.feature_dim == 512);
  CHECK(c.embed_dim == 128);
}

TEST_CASE("checkpoint round-trip is bit-exact, including batch-norm statistics") {
  testutil::TempDir dir("geco_ckpt");
  GecoConfig c;
  c.image_size = 32;
  GecoCheckpoint ck(c, LossWeights{}, GecoTrainConfig{});
  // one training-mode pass so the running statistics move away from the defaults
  ck.model.encode(testutil::random_tensor<float>({2, 3, 32, 32}, 1), true);
  ck.epoch = 3;
  ck.save(dir / "a.ckpt");
  auto back = GecoCheckpoint::load(dir / "a.ckpt");
  CHECK(back.epoch == 3);
  CHECK(same_params(ck.model.params(), back.model.params()));
  CHECK(back.model.norm_state()->at("bn1").running_mean == ck.model.norm_state()->at("bn1").running_mean);
  back.save(dir / "b.ckpt");
  CHECK(util::sha256_file(dir / "a.ckpt") == util::sha256_file(dir / "b.ckpt"));
}

TEST_CASE("pretrained backbone weights load from an archive") {
  testutil::TempDir dir("pretrained");
  GecoConfig c;
  c.image_size = 32;
  GecoModel<float> src(c);
  src.init(11);
  util::Archive ar;
  ar.kind = "resnet18";
  for (const auto& [name, v] : src.params().items())
    if (name.rfind("enc.", 0) == 0) ar.put("resnet18/" + name.substr(4), v.shape(), v.data());
  ar.save(dir / "r18.bin");

  c.encoder.pretrained_path = (dir / "r18.bin").string();
  GecoModel<float> dst(c);
  dst.init(12);
  for (const auto& [name, v] : src.params().items())
    if (name.rfind("enc.", 0) == 0)
      CHECK(std::memcmp(v.data().data(), dst.params().get(name).data().data(), v.data().size_bytes()) == 0);

  c.encoder.pretrained_path = (dir / "absent.bin").string();
  GecoModel<float> bad(c);
  CHECK_THROWS(bad.init(1));
}

TEST_CASE("training on toy data: zero epochs, missing templates, learning") {
  testutil::TempDir dir("geco_train");
  const auto m = data::synth_toy_dataset(40, 16, 4, dir / "data");
  const auto idx = self_templates(m);

  SUBCASE("zero epochs equals the initialisation") {
    const auto ck = train_geco(m, idx, tiny_config(), LossWeights{}, quick_train(0), dir / "z");
    GecoCheckpoint fresh(tiny_config(), LossWeights{}, quick_train(0));
    CHECK(same_params(ck.model.params(), fresh.model.params()));
    CHECK(ck.epoch == 0);
  }
  SUBCASE("a missing template names the first training top") {
    auto partial = idx;
    std::string first;
    for (std::size_t i : m.split_indices(data::Split::train)) {
      first = m.pairs()[i].top_id;
      break;
    }
    partial.erase(first);
    try {
      train_geco(m, partial, tiny_config(), LossWeights{}, quick_train(1), dir / "miss");
      FAIL("expected MissingTemplate");
    } catch (const MissingTemplate& e) {
      CHECK(e.top_id() == first);
      CHECK(std::string(e.what()).find("missing template") != std::string::npos);
    }
  }
  SUBCASE("a few epochs lower the loss and write the log") {
    std::vector<GecoEpochLog> rows;
    const auto ck = train_geco(m, idx, tiny_config(), LossWeights{}, quick_train(4), dir / "t",
                               [&](const GecoEpochLog& r) { rows.push_back(r); });
    REQUIRE(rows.size() == 4);
    CHECK(rows.back().loss < rows.front().loss);
    CHECK(std::isfinite(rows.back().val_auc));
    CHECK(std::filesystem::exists(dir / "t/geco.ckpt"));
    std::ifstream log(dir / "t/geco_train_log.tsv");
    std::string header;
    std::getline(log, header);
    CHECK(header == "epoch\tlr\tloss\tbpr\tinfonce\treg\tval_auc\twall_seconds");
  }
  SUBCASE("divergence is reported") {
    auto t = quick_train(2);
    t.lr = 1e30;
    CHECK_THROWS_AS(train_geco(m, idx, tiny_config(), LossWeights{}, t, dir / "nan"), TrainingDiverged);
  }
}

TEST_CASE("score_catalog: ordering, ties, and precomputed embeddings") {
  testutil::TempDir dir("catalog");
  GecoCheckpoint ck(tiny_config(), LossWeights{}, quick_train(0));
  const auto top = testutil::random_image("t", 16, 1);
  const auto templ = testutil::random_image("tt", 16, 2);
  std::vector<data::ItemImage> cands;
  for (int i = 0; i < 6; ++i) cands.push_back(testutil::random_image("b" + std::to_string(5 - i), 16, 10 + i));
  auto dup = cands[2];
  dup.item_id = "a_dup";
  cands.push_back(dup);

  const auto inline_scores = score_catalog(ck, top, templ, cands);
  REQUIRE(inline_scores.size() == 7);
  for (std::size_t i = 1; i < inline_scores.size(); ++i) CHECK(inline_scores[i - 1].second >= inline_scores[i].second);
  // the duplicate image ties with its original and sorts first by id
  std::size_t pos_dup = 0, pos_orig = 0;
  for (std::size_t i = 0; i < inline_scores.size(); ++i) {
    if (inline_scores[i].first == "a_dup") pos_dup = i;
    if (inline_scores[i].first == cands[2].item_id) pos_orig = i;
  }
  CHECK(pos_orig == pos_dup + 1);

  std::vector<std::string> ids;
  for (const auto& c : cands) ids.push_back(c.item_id);
  const auto emb = embed_candidates(ck.model, cands);
  CHECK(score_catalog(ck, top, templ, ids, emb) == inline_scores);

  EmbeddingCache cache{"abc123", ck.model_cfg.embed_dim, ids, emb};
  write_embedding_cache(cache, dir / "emb.bin");
  const auto back = read_embedding_cache(dir / "emb.bin");
  CHECK(back.checkpoint_hash == "abc123");
  CHECK(back.ids == ids);
  CHECK(std::memcmp(back.values.data(), emb.data(), emb.size() * sizeof(float)) == 0);
  CHECK(score_catalog(ck, top, templ, back.ids, back.values) == inline_scores);
  std::size_t expected = 8 + 8 + 4 + 4 + 6;
  for (const auto& id : ids) expected += 4 + id.size() + 4 * 128;
  CHECK(std::filesystem::file_size(dir / "emb.bin") == expected);

  const std::vector<data::ItemImage> single{cands[0]};
  const auto one = score_catalog(ck, top, templ, single);
  REQUIRE(one.size() == 1);
  CHECK(one[0].first == cands[0].item_id);
  CHECK_THROWS(score_catalog(ck, top, templ, std::vector<data::ItemImage>{}));
}

TEST_CASE("ranking is invariant to a constant shift of every candidate score") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, double>> c;
    for (int i = 0; i < 12; ++i) c.emplace_back("b" + std::to_string(i), std::round(n(rng) * 4) / 4);
    auto shifted = c;
    const double k = n(rng) * 3;
    for (auto& [_, s] : shifted) s += k;
    const auto r1 = eval::ranked(c), r2 = eval::ranked(shifted);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i].first == r2[i].first);
  }
}

}
