#include "geco/cigm/cigm.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "geco/cigm/losses.hpp"
#include "geco/data/sampling.hpp"
#include "geco/data/tensorize.hpp"
#include "geco/nn/ops.hpp"
#include "geco/nn/serialize.hpp"
#include "geco/util/hash.hpp"

namespace geco::cigm {

void to_json(nlohmann::json& j, const CigmTrainConfig& c) {
  j = {{"epochs", c.epochs},     {"lr", c.lr},       {"batch_size", c.batch_size},
       {"lambda", c.lambda},     {"beta1", c.beta1}, {"beta2", c.beta2},
       {"checkpoint_every", c.checkpoint_every}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CigmTrainConfig& c) {
  CigmTrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lambda = j.value("lambda", d.lambda);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.seed = j.value("seed", d.seed);
}

CigmCheckpoint::CigmCheckpoint(GeneratorConfig gen, DiscriminatorConfig disc, CigmTrainConfig train)
    : gen_cfg(gen),
      disc_cfg(disc),
      train_cfg(train),
      generator(gen),
      discriminator(disc, gen.image_size),
      opt_g({train.lr, train.beta1, train.beta2, 1e-8}),
      opt_d({train.lr, train.beta1, train.beta2, 1e-8}) {
  std::mt19937_64 init_rng(util::derive_seed(train.seed, "cigm-init"));
  generator.init(init_rng);
  discriminator.init(init_rng);
  std::mt19937_64 train_rng(util::derive_seed(train.seed, "cigm-train"));
  std::ostringstream os;
  os << train_rng;
  rng_state = os.str();
}

void CigmCheckpoint::save(const std::filesystem::path& path) const {
  util::Archive ar;
  ar.kind = "cigm";
  ar.meta["generator"] = gen_cfg;
  ar.meta["discriminator"] = disc_cfg;
  ar.meta["train"] = train_cfg;
  ar.meta["epoch"] = epoch;
  ar.meta["rng_state"] = rng_state;
  nn::save_params(ar, "gen", generator.params());
  nn::save_params(ar, "disc", discriminator.params());
  nn::save_adam(ar, "opt_g", opt_g);
  nn::save_adam(ar, "opt_d", opt_d);
  ar.save(path);
}

CigmCheckpoint CigmCheckpoint::load(const std::filesystem::path& path) {
  const auto ar = util::Archive::load(path);
  if (ar.kind != "cigm") throw std::runtime_error(path.string() + " is a '" + ar.kind + "' checkpoint, not cigm");
  CigmCheckpoint ck(ar.meta.at("generator").get<GeneratorConfig>(),
                    ar.meta.at("discriminator").get<DiscriminatorConfig>(),
                    ar.meta.at("train").get<CigmTrainConfig>());
  ck.epoch = ar.meta.at("epoch").get<int>();
  ck.rng_state = ar.meta.at("rng_state").get<std::string>();
  nn::load_params(ar, "gen", ck.generator.params());
  nn::load_params(ar, "disc", ck.discriminator.params());
  nn::load_adam(ar, "opt_g", ck.opt_g);
  nn::load_adam(ar, "opt_d", ck.opt_d);
  return ck;
}

namespace {

nn::Var<float> sample_noise(std::int64_t n, int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> z(static_cast<std::size_t>(n * dim));
  for (auto& v : z) v = normal(rng);
  return nn::Var<float>::constant({n, dim}, std::move(z));
}

void check_finite(double v, const char* what, int epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    throw TrainingDiverged(std::string("cigm training diverged: ") + what + " = " + std::to_string(v) +
                           " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

}  // namespace

CigmCheckpoint train_cigm(const data::PairManifest& manifest, const GeneratorConfig& gen_cfg,
                          const DiscriminatorConfig& disc_cfg, const CigmTrainConfig& train_cfg,
                          const std::filesystem::path& out, const std::function<void(const EpochLog&)>& on_epoch) {
  if (manifest.split_indices(data::Split::train).empty())
    throw std::invalid_argument("train_cigm: manifest has an empty train split");
  if (train_cfg.epochs < 0 || train_cfg.batch_size < 1 || train_cfg.lr <= 0 || train_cfg.lambda < 0)
    throw std::invalid_argument("train_cigm: invalid training configuration");

  CigmCheckpoint ck(gen_cfg, disc_cfg, train_cfg);
  std::filesystem::create_directories(out);
  std::ofstream log(out / "cigm_train_log.tsv", std::ios::trunc);
  log << "epoch\tg_loss\td_loss\tmean_L1\twall_seconds\n";

  std::mt19937_64 rng;
  {
    std::istringstream is(ck.rng_state);
    is >> rng;
  }
  data::ImageStore store(manifest, gen_cfg.image_size);
  const auto lambda = static_cast<float>(train_cfg.lambda);

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = data::batch_iter(manifest, data::Split::train, train_cfg.batch_size, true,
                                          util::derive_seed(train_cfg.seed, "cigm-epoch-" + std::to_string(epoch)));
    double g_sum = 0, d_sum = 0, l1_sum = 0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = data::materialize(batches[bi], store);
      const auto n = static_cast<std::int64_t>(batch.tops.size());
      const auto tops = data::stack_images<float>(batch.tops);
      const auto real = data::stack_images<float>(batch.positive_bottoms);
      const auto fake = ck.generator.forward(tops, sample_noise(n, gen_cfg.noise_dim, rng));

      // Discriminator step: real -> 1, fake -> 0.
      const auto fake_detached = nn::Var<float>::constant(fake.shape(), {fake.data().begin(), fake.data().end()});
      ck.discriminator.params().zero_grad();
      const auto d_loss = discriminator_objective(ck.discriminator.logits(tops, real),
                                                  ck.discriminator.logits(tops, fake_detached));
      check_finite(d_loss.item(), "discriminator loss", epoch, bi);
      nn::backward(d_loss);
      ck.opt_d.step(ck.discriminator.params());

      // Generator step against the updated discriminator.
      ck.generator.params().zero_grad();
      ck.discriminator.params().zero_grad();
      const auto l1 = nn::l1_mean(fake, real);
      const auto g_loss = nn::add(generator_adversarial(ck.discriminator.logits(tops, fake)), nn::scale(l1, lambda));
      check_finite(g_loss.item(), "generator loss", epoch, bi);
      nn::backward(g_loss);
      ck.opt_g.step(ck.generator.params());

      g_sum += g_loss.item() * n;
      d_sum += d_loss.item() * n;
      l1_sum += l1.item() * n;
      seen += static_cast<std::size_t>(n);
    }
    ck.discriminator.params().zero_grad();
    ck.epoch = epoch;
    std::ostringstream os;
    os << rng;
    ck.rng_state = os.str();

    EpochLog row{epoch, g_sum / seen, d_sum / seen, l1_sum / seen,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    char line[256];
    std::snprintf(line, sizeof line, "%d\t%.9g\t%.9g\t%.9g\t%.3f\n", row.epoch, row.g_loss, row.d_loss, row.mean_l1,
                  row.wall_seconds);
    log << line << std::flush;
    if (on_epoch) on_epoch(row);
    if (train_cfg.checkpoint_every > 0 && epoch % train_cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "cigm_epoch_%04d.ckpt", epoch);
      ck.save(out / name);
    }
  }
  ck.save(out / "cigm.ckpt");
  return ck;
}

Template generator_forward(const Generator<float>& generator, const data::ItemImage& top,
                           std::span<const float> noise) {
  nn::NoGradGuard no_grad;
  const auto& cfg = generator.config();
  if (top.size != cfg.image_size)
    throw std::invalid_argument("generator_forward: top is " + std::to_string(top.size) + "px, generator expects " +
                                std::to_string(cfg.image_size));
  const auto x = data::stack_images<float>(std::span<const data::ItemImage>(&top, 1));
  const auto z = nn::Var<float>::constant({1, static_cast<std::int64_t>(noise.size())}, {noise.begin(), noise.end()});
  const auto y = generator.forward(x, z);
  return {top.item_id, 0, cfg.image_size, {y.data().begin(), y.data().end()}};
}

std::vector<double> discriminator_forward(const Discriminator<float>& discriminator, const data::ItemImage& top,
                                          const data::ItemImage& candidate) {
  nn::NoGradGuard no_grad;
  const auto a = data::stack_images<float>(std::span<const data::ItemImage>(&top, 1));
  const auto b = data::stack_images<float>(std::span<const data::ItemImage>(&candidate, 1));
  const auto logits = discriminator.logits(a, b);
  std::vector<double> out;
  out.reserve(logits.data().size());
  for (float l : logits.data()) out.push_back(1.0 / (1.0 + std::exp(-double(l))));
  return out;
}

std::vector<float> template_noise(int noise_dim, std::uint64_t noise_seed, const std::string& top_id) {
  std::mt19937_64 rng(util::keyed_seed(noise_seed, top_id));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> z(static_cast<std::size_t>(noise_dim));
  for (auto& v : z) v = normal(rng);
  return z;
}

namespace {
std::string file_stem(std::string id) {
  for (auto& c : id)
    if (c == '/' || c == '\\') c = '_';
  return id;
}
}  // namespace

std::vector<Template> generate_templates(const CigmCheckpoint& ckpt, std::span<const data::ItemImage> tops,
                                         std::uint64_t noise_seed, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<Template> out;
  out.reserve(tops.size());
  std::ostringstream index;
  index << "seed_top_id\tnoise_seed\ttemplate_path\n";
  for (const auto& top : tops) {
    auto t = generator_forward(ckpt.generator, top, template_noise(ckpt.gen_cfg.noise_dim, noise_seed, top.item_id));
    t.noise_seed = noise_seed;
    const std::string rel = file_stem(top.item_id) + ".png";
    data::save_image_png(out_dir / rel, t.pixels, t.size);
    index << top.item_id << '\t' << noise_seed << '\t' << rel << '\n';
    out.push_back(std::move(t));
  }
  std::ofstream f(out_dir / "index.tsv", std::ios::binary | std::ios::trunc);
  f << index.str();
  if (!f) throw std::runtime_error("cannot write template index in " + out_dir.string());
  return out;
}

std::map<std::string, TemplateRecord> load_template_index(const std::filesystem::path& index_path) {
  std::ifstream in(index_path);
  if (!in) throw std::runtime_error("cannot open template index " + index_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "seed_top_id\tnoise_seed\ttemplate_path")
    throw std::runtime_error(index_path.string() + ":1: bad template index header");
  std::map<std::string, TemplateRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find('\t'), b = line.find('\t', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos)
      throw std::runtime_error(index_path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    TemplateRecord rec;
    rec.noise_seed = std::stoull(line.substr(a + 1, b - a - 1));
    rec.path = index_path.parent_path() / line.substr(b + 1);
    out[line.substr(0, a)] = std::move(rec);
  }
  return out;
}

}  // namespace geco::cigm
