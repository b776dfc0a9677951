#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <doctest.h>

#include "geco/cigm/cigm.hpp"
#include "geco/cigm/losses.hpp"
#include "geco/data/synth.hpp"
#include "geco/data/tensorize.hpp"
#include "geco/util/hash.hpp"
#include "helpers.hpp"
#include "mini_models.hpp"

using namespace geco;
using namespace geco::cigm;

namespace {

double mean_abs_diff(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - b[i]);
  return s / a.size();
}

CigmCheckpoint small_checkpoint(std::uint64_t seed, int size = 32, int depth = 5) {
  CigmTrainConfig t;
  t.seed = seed;
  return CigmCheckpoint(GeneratorConfig{size, depth, 8, 64, 16}, DiscriminatorConfig{8, 2, 64}, t);
}

}  // namespace

TEST_SUITE("cigm") {

TEST_CASE("generator loss closed forms") {
  const std::vector<float> x(12, 0.3f), y(12, 0.2f);
  const std::vector<double> ones(4, 1.0), halves(4, 0.5);
  CHECK(generator_loss(ones, x, x, 100.0) == 0.0);
  CHECK(generator_loss(halves, x, y, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // mean abs error 0.1, lambda 100
  CHECK(generator_loss(halves, x, y, 100.0) == doctest::Approx(10.693147180559945).epsilon(1e-6));
  CHECK_THROWS(generator_loss(halves, x, y, -1.0));
  const std::vector<double> nan{0.5, std::nan("")};
  CHECK_THROWS(generator_loss(nan, x, y, 1.0));
}

TEST_CASE("discriminator loss closed forms and the saddle point") {
  const std::vector<double> ones(9, 1.0), zeros(9, 0.0), halves(9, 0.5);
  CHECK(discriminator_loss(ones, zeros) == 0.0);
  CHECK(std::abs(discriminator_loss(halves, halves) - 2 * std::log(2.0)) < 1e-9);
  const std::vector<float> same(3, 0.f);
  CHECK(std::abs(generator_loss(halves, same, same, 100.0) - std::log(2.0)) < 1e-9);
  CHECK_THROWS(discriminator_loss(ones, std::vector<double>(4, 0.0)));
}

TEST_CASE("logit-space objectives equal the probability-space losses") {
  auto real = testutil::random_tensor<double>({2, 1, 3, 3}, 1, -3, 3);
  auto fake = testutil::random_tensor<double>({2, 1, 3, 3}, 2, -3, 3);
  auto t = testutil::random_tensor<double>({2, 3, 4, 4}, 3);
  auto g = testutil::random_tensor<double>({2, 3, 4, 4}, 4);
  auto sig = [](const nn::Var<double>& v) {
    std::vector<double> out;
    for (double l : v.data()) out.push_back(1 / (1 + std::exp(-l)));
    return out;
  };
  std::vector<float> tf(t.data().begin(), t.data().end()), gf(g.data().begin(), g.data().end());
  const double lam = 7.5;
  CHECK(generator_objective(fake, t, g, lam).item() ==
        doctest::Approx(generator_loss(sig(fake), tf, gf, lam)).epsilon(1e-6));
  CHECK(discriminator_objective(real, fake).item() ==
        doctest::Approx(discriminator_loss(sig(real), sig(fake))).epsilon(1e-12));
}

TEST_CASE("default configuration shapes: 128 in, 128 out, 14 x 14 patch grid") {
  GeneratorConfig g;
  DiscriminatorConfig d;
  CHECK(g.image_size == 128);
  CHECK(g.depth == 7);
  CHECK(g.bottleneck_extent() == 1);
  CHECK(d.patch_size(128) == 14);
  CHECK_NOTHROW(g.validate());
  CHECK_NOTHROW(d.validate(128));

  CigmTrainConfig t;
  CHECK(t.epochs == 200);
  CHECK(t.lr == 2e-4);
  CHECK(t.batch_size == 64);
  CHECK(t.lambda == 100.0);

  CigmCheckpoint ck(g, d, t);
  const auto top = testutil::random_image("t", 128, 5);
  const auto out = generator_forward(ck.generator, top, template_noise(g.noise_dim, 1, "t"));
  CHECK(out.pixels.size() == 3u * 128 * 128);
  CHECK(*std::max_element(out.pixels.begin(), out.pixels.end()) <= 1.0f);
  CHECK(*std::min_element(out.pixels.begin(), out.pixels.end()) >= -1.0f);
  const auto grid = discriminator_forward(ck.discriminator, top, testutil::random_image("b", 128, 6));
  CHECK(grid.size() == 14u * 14);
  for (double p : grid) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("configuration validation") {
  CHECK_THROWS(GeneratorConfig{100, 7, 64, 512, 64}.validate());
  CHECK_THROWS(GeneratorConfig{128, 7, 64, 512, 0}.validate());
  CHECK_THROWS(DiscriminatorConfig{64, 6, 512}.validate(128));
  CHECK_THROWS(generator_forward(small_checkpoint(1).generator, testutil::random_image("t", 16, 1),
                                 template_noise(16, 1, "t")));
}

TEST_CASE("generator is deterministic and the noise path is live") {
  auto ck = small_checkpoint(3);
  const auto top = testutil::random_image("t", 32, 9);
  const auto z1 = template_noise(16, 1, "t"), z2 = template_noise(16, 2, "t");
  const auto a = generator_forward(ck.generator, top, z1);
  const auto b = generator_forward(ck.generator, top, z1);
  const auto c = generator_forward(ck.generator, top, z2);
  CHECK(std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0);
  CHECK(mean_abs_diff(a.pixels, c.pixels) > 0.0);

  // finite-difference probe on one noise coordinate
  auto zp = z1;
  zp[0] += 1e-2f;
  const auto d = generator_forward(ck.generator, top, zp);
  CHECK(mean_abs_diff(a.pixels, d.pixels) > 0.0);
}

TEST_CASE("every skip connection reaches the output") {
  auto ck = small_checkpoint(4);
  const auto tops = data::stack_images<float>(std::vector<data::ItemImage>{testutil::random_image("t", 32, 2)});
  const auto z = nn::Var<float>::constant({1, 16}, template_noise(16, 3, "t"));
  nn::NoGradGuard ng;
  const auto base = ck.generator.forward(tops, z);
  for (int level = 1; level < ck.gen_cfg.depth; ++level) {
    Generator<float>::Options opts;
    opts.drop_skip_level = level;
    const auto cut = ck.generator.forward(tops, z, opts);
    INFO("level " << level);
    CHECK(mean_abs_diff(base.data(), cut.data()) > 0.0);
  }
}

TEST_CASE("discriminator output depends on the candidate") {
  auto ck = small_checkpoint(5);
  const auto top = testutil::random_image("t", 32, 1);
  const auto a = discriminator_forward(ck.discriminator, top, testutil::random_image("b1", 32, 2));
  const auto b = discriminator_forward(ck.discriminator, top, testutil::random_image("b2", 32, 3));
  CHECK(a.size() == 36u);
  CHECK(a != b);
}

TEST_CASE("analytic gradients of both losses match central differences at step 1e-3 on the miniature model") {
  const auto r = testutil::cigm_grad_check(101);
  INFO("G/gen " << r.generator_loss_wrt_gen.max_rel_err << " at " << r.generator_loss_wrt_gen.worst);
  INFO("G/disc " << r.generator_loss_wrt_disc.max_rel_err << " at " << r.generator_loss_wrt_disc.worst);
  INFO("D/gen " << r.discriminator_loss_wrt_gen.max_rel_err << " at " << r.discriminator_loss_wrt_gen.worst);
  INFO("D/disc " << r.discriminator_loss_wrt_disc.max_rel_err << " at " << r.discriminator_loss_wrt_disc.worst);
  CHECK(r.max() < 1e-4);
}

TEST_CASE("analytic gradients agree with one-sided differences wherever the losses are differentiable") {
  testutil::MiniCigm m(101);
  for (auto* ps : {&m.gen.params(), &m.disc.params()}) {
    for (int which = 0; which < 2; ++which) {
      const auto r = testutil::smooth_point_check(
          *ps, [&] { return which == 0 ? m.generator_loss() : m.discriminator_loss(); });
      INFO("loss " << which << ": checked " << r.checked << ", kinked " << r.kinked << ", first wrong " << r.first_wrong);
      CHECK(r.wrong == 0);
      CHECK(r.kinked * 5 < r.checked);
    }
  }
}

TEST_CASE("checkpoint round-trip reproduces generator outputs bit-exactly") {
  testutil::TempDir dir("cigm_ckpt");
  auto ck = small_checkpoint(6);
  ck.epoch = 4;
  ck.save(dir / "c.ckpt");
  const auto back = CigmCheckpoint::load(dir / "c.ckpt");
  CHECK(back.epoch == 4);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.train_cfg.lambda == ck.train_cfg.lambda);
  const auto top = testutil::random_image("t", 32, 3);
  const auto z = template_noise(16, 5, "t");
  const auto a = generator_forward(ck.generator, top, z);
  const auto b = generator_forward(back.generator, top, z);
  CHECK(std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0);
  back.save(dir / "d.ckpt");
  CHECK(util::sha256_file(dir / "c.ckpt") == util::sha256_file(dir / "d.ckpt"));
}

TEST_CASE("zero epochs leaves the initialisation and writes no log rows") {
  testutil::TempDir dir("cigm_zero");
  const auto m = data::synth_toy_dataset(12, 32, 1, dir / "data");
  auto init = small_checkpoint(8);
  CigmTrainConfig t = init.train_cfg;
  t.epochs = 0;
  const auto ck = train_cigm(m, init.gen_cfg, init.disc_cfg, t, dir / "out");
  CHECK(ck.epoch == 0);
  for (const auto& [name, v] : init.generator.params().items())
    CHECK(std::memcmp(v.data().data(), ck.generator.params().get(name).data().data(), v.data().size_bytes()) == 0);
  std::ifstream log(dir / "out/cigm_train_log.tsv");
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 1);
}

TEST_CASE("training twice in one process gives byte-identical checkpoints") {
  testutil::TempDir dir("cigm_twice");
  const auto m = data::synth_toy_dataset(24, 16, 2, dir / "data");
  CigmTrainConfig t;
  t.epochs = 2;
  t.batch_size = 8;
  t.seed = 5;
  train_cigm(m, GeneratorConfig{16, 4, 8, 64, 8}, DiscriminatorConfig{8, 2, 64}, t, dir / "a");
  // shift the heap so the second run's buffers land at different addresses
  std::vector<std::vector<char>> junk;
  for (int k = 0; k < 41; ++k) junk.emplace_back(8 + 24 * k);
  train_cigm(m, GeneratorConfig{16, 4, 8, 64, 8}, DiscriminatorConfig{8, 2, 64}, t, dir / "b");
  CHECK(util::sha256_file(dir / "a/cigm.ckpt") == util::sha256_file(dir / "b/cigm.ckpt"));
}

TEST_CASE("short training lowers L1 and templates are reproducible and noise-diverse") {
  testutil::TempDir dir("cigm_train");
  const auto m = data::synth_toy_dataset(24, 16, 2, dir / "data");
  CigmTrainConfig t;
  t.epochs = 4;
  t.batch_size = 8;
  t.seed = 3;
  std::vector<EpochLog> logs;
  const auto ck = train_cigm(m, GeneratorConfig{16, 4, 8, 64, 8}, DiscriminatorConfig{8, 2, 64}, t, dir / "out",
                             [&](const EpochLog& l) { logs.push_back(l); });
  REQUIRE(logs.size() == 4);
  CHECK(logs.back().mean_l1 < logs.front().mean_l1);
  CHECK(ck.epoch == 4);
  CHECK(std::filesystem::exists(dir / "out/cigm.ckpt"));

  data::ImageStore store(m, 16);
  std::vector<data::ItemImage> tops{store.get("top_00000"), store.get("top_00001"), store.get("top_00002")};
  const auto a = generate_templates(ck, tops, 11, dir / "ta");
  const auto b = generate_templates(ck, tops, 11, dir / "tb");
  const auto c = generate_templates(ck, tops, 12, dir / "tc");
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].pixels.size() == 3u * 16 * 16);
    CHECK(a[i].seed_top_id == tops[i].item_id);
    CHECK(util::sha256_file(dir / "ta" / (tops[i].item_id + ".png")) ==
          util::sha256_file(dir / "tb" / (tops[i].item_id + ".png")));
  }
  double diff = 0;
  for (std::size_t i = 0; i < 3; ++i) diff = std::max(diff, mean_abs_diff(a[i].pixels, c[i].pixels));
  CHECK(diff > 1e-3);

  const auto index = load_template_index(dir / "ta/index.tsv");
  CHECK(index.size() == 3);
  CHECK(index.at("top_00001").noise_seed == 11);
}

TEST_CASE("non-finite losses abort training") {
  testutil::TempDir dir("cigm_nan");
  const auto m = data::synth_toy_dataset(8, 16, 2, dir / "data");
  CigmTrainConfig t;
  t.epochs = 2;
  t.batch_size = 4;
  t.lr = 1e30;
  t.lambda = 1e30;
  CHECK_THROWS_AS(train_cigm(m, GeneratorConfig{16, 4, 4, 32, 4}, DiscriminatorConfig{4, 2, 32}, t, dir / "out"),
                  TrainingDiverged);
}

}
