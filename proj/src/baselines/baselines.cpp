#include "geco/baselines/baselines.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "geco/data/tensorize.hpp"
#include "geco/model/losses.hpp"
#include "geco/nn/ops.hpp"
#include "geco/nn/serialize.hpp"
#include "geco/util/archive.hpp"
#include "geco/util/hash.hpp"

namespace geco::baselines {

double random_score(std::uint64_t seed, const std::string& top_id, const std::string& bottom_id) {
  std::string key;
  key.reserve(top_id.size() + bottom_id.size() + 1);
  key += top_id;
  key += '\t';
  key += bottom_id;
  // Top 53 bits of the mixed hash -> [0,1).
  return static_cast<double>(util::keyed_seed(seed, key) >> 11) * 0x1.0p-53;
}

std::vector<double> RandomScorer::score(const std::string& top_id, std::span<const std::string> bottom_ids) {
  std::vector<double> out;
  out.reserve(bottom_ids.size());
  for (const auto& b : bottom_ids) out.push_back(random_score(seed_, top_id, b));
  return out;
}

void SiameseBprConfig::validate() const {
  encoder.validate();
  if (embed_dim < 1) throw std::invalid_argument("siamese: embed_dim must be >= 1");
  if (image_size < 8) throw std::invalid_argument("siamese: image_size must be >= 8");
  if (!(lr > 0)) throw std::invalid_argument("siamese: lr must be > 0");
  if (epochs < 0) throw std::invalid_argument("siamese: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("siamese: batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const SiameseBprConfig& c) {
  j = {{"encoder", c.encoder}, {"embed_dim", c.embed_dim}, {"image_size", c.image_size}, {"lr", c.lr},
       {"epochs", c.epochs},   {"batch_size", c.batch_size}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SiameseBprConfig& c) {
  SiameseBprConfig d;
  c.encoder = j.contains("encoder") ? j.at("encoder").get<model::EncoderConfig>() : d.encoder;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.image_size = j.value("image_size", d.image_size);
  c.lr = j.value("lr", d.lr);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
}

SiameseCheckpoint::SiameseCheckpoint(SiameseBprConfig cfg_) : cfg(std::move(cfg_)), opt({cfg.lr, 0.9, 0.999, 1e-8}) {
  cfg.validate();
  encoder = model::make_encoder<float>(cfg.encoder, params);
  params.add("proj.weight", {cfg.embed_dim, cfg.encoder.feature_dim});
  params.add("proj.bias", {cfg.embed_dim});
  std::mt19937_64 rng(util::derive_seed(cfg.seed, "siamese-init"));
  encoder->init(params, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.encoder.feature_dim));
  nn::init_uniform(params.get("proj.weight"), bound, rng);
  nn::init_uniform(params.get("proj.bias"), bound, rng);
}

nn::Var<float> SiameseCheckpoint::embed(const nn::Var<float>& images, bool training) {
  return nn::linear(encoder->forward(params, images, training), params.get("proj.weight"), params.get("proj.bias"));
}

void SiameseCheckpoint::save(const std::filesystem::path& path) const {
  util::Archive ar;
  ar.kind = "siamese_bpr";
  ar.meta["config"] = cfg;
  ar.meta["epoch"] = epoch;
  nn::save_params(ar, "model", params);
  if (const auto* bn = encoder->norm_state()) {
    for (const auto& [name, state] : *bn) {
      if (state.running_mean.empty()) continue;
      const std::vector<std::int64_t> shape{static_cast<std::int64_t>(state.running_mean.size())};
      ar.put("bn/" + name + "/mean", shape, std::span<const double>(state.running_mean));
      ar.put("bn/" + name + "/var", shape, std::span<const double>(state.running_var));
    }
  }
  nn::save_adam(ar, "opt", opt);
  ar.save(path);
}

SiameseCheckpoint SiameseCheckpoint::load(const std::filesystem::path& path) {
  const auto ar = util::Archive::load(path);
  if (ar.kind != "siamese_bpr")
    throw std::runtime_error(path.string() + " is a '" + ar.kind + "' checkpoint, not siamese_bpr");
  SiameseCheckpoint ck(ar.meta.at("config").get<SiameseBprConfig>());
  ck.epoch = ar.meta.at("epoch").get<int>();
  nn::load_params(ar, "model", ck.params);
  if (auto* bn = ck.encoder->norm_state()) {
    for (auto& [name, state] : *bn) {
      if (!ar.has("bn/" + name + "/mean")) continue;
      state.running_mean = ar.get_f64("bn/" + name + "/mean");
      state.running_var = ar.get_f64("bn/" + name + "/var");
    }
  }
  nn::load_adam(ar, "opt", ck.opt);
  return ck;
}

SiameseCheckpoint train_siamese_bpr(const data::PairManifest& manifest, const SiameseBprConfig& cfg,
                                    const std::filesystem::path& out,
                                    const std::function<void(const SiameseEpochLog&)>& on_epoch) {
  if (manifest.split_indices(data::Split::train).empty())
    throw std::invalid_argument("train_siamese_bpr: manifest has an empty train split");
  SiameseCheckpoint ck(cfg);
  data::ImageStore store(manifest, cfg.image_size);
  std::filesystem::create_directories(out);
  std::ofstream log(out / "siamese_train_log.tsv", std::ios::trunc);
  log << "epoch\tbpr\twall_seconds\n";

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = data::batch_iter(manifest, data::Split::train, cfg.batch_size, true,
                                          util::derive_seed(cfg.seed, "siamese-epoch-" + std::to_string(epoch)));
    double sum = 0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = data::materialize(batches[bi], store);
      const auto n = static_cast<std::int64_t>(batch.tops.size());
      std::vector<data::ItemImage> all(batch.tops);
      all.insert(all.end(), batch.positive_bottoms.begin(), batch.positive_bottoms.end());
      all.insert(all.end(), batch.negative_bottoms.begin(), batch.negative_bottoms.end());
      const auto e = ck.embed(data::stack_images<float>(all), true);
      const auto t = nn::slice0(e, 0, n);
      const auto m_ij = nn::rowdot(t, nn::slice0(e, n, n));
      const auto m_ik = nn::rowdot(t, nn::slice0(e, 2 * n, n));
      const auto loss = nn::mean(nn::softplus(nn::sub(m_ik, m_ij)));
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("siamese training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(bi));
      ck.params.zero_grad();
      nn::backward(loss);
      ck.opt.step(ck.params);
      sum += loss.item() * n;
      seen += static_cast<std::size_t>(n);
    }
    ck.params.zero_grad();
    ck.epoch = epoch;
    SiameseEpochLog row{epoch, seen ? sum / seen : 0.0,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    char line[128];
    std::snprintf(line, sizeof line, "%d\t%.9g\t%.3f\n", row.epoch, row.bpr, row.wall_seconds);
    log << line << std::flush;
    if (on_epoch) on_epoch(row);
  }
  ck.save(out / "siamese.ckpt");
  return ck;
}

double siamese_score(SiameseCheckpoint& ckpt, const data::ItemImage& top, const data::ItemImage& bottom) {
  nn::NoGradGuard no_grad;
  const data::ItemImage pair[2] = {top, bottom};
  const auto e = ckpt.embed(data::stack_images<float>(pair), false);
  const auto d = static_cast<std::size_t>(ckpt.cfg.embed_dim);
  return model::score(e.data().subspan(0, d), e.data().subspan(d, d));
}

SiameseScorer::SiameseScorer(SiameseCheckpoint& ckpt, const data::PairManifest& manifest, std::string checkpoint_hash)
    : ckpt_(&ckpt), store_(manifest, ckpt.cfg.image_size), hash_(std::move(checkpoint_hash)) {}

void SiameseScorer::precompute(std::span<const std::string> ids) {
  std::vector<data::ItemImage> todo;
  for (const auto& id : ids)
    if (!cache_.count(id)) todo.push_back(store_.get(id));
  if (todo.empty()) return;
  nn::NoGradGuard no_grad;
  const auto d = static_cast<std::size_t>(ckpt_->cfg.embed_dim);
  for (std::size_t i = 0; i < todo.size(); i += 64) {
    const auto n = std::min<std::size_t>(64, todo.size() - i);
    const auto e = ckpt_->embed(data::stack_images<float>(std::span<const data::ItemImage>(todo).subspan(i, n)), false);
    for (std::size_t r = 0; r < n; ++r)
      cache_[todo[i + r].item_id].assign(e.data().begin() + r * d, e.data().begin() + (r + 1) * d);
  }
}

const std::vector<float>& SiameseScorer::embedding(const std::string& item_id) {
  precompute(std::span<const std::string>(&item_id, 1));
  return cache_.at(item_id);
}

std::vector<double> SiameseScorer::score(const std::string& top_id, std::span<const std::string> bottom_ids) {
  precompute(bottom_ids);
  const auto& t = embedding(top_id);
  std::vector<double> out;
  out.reserve(bottom_ids.size());
  for (const auto& b : bottom_ids) out.push_back(model::score(t, cache_.at(b)));
  return out;
}

}  // namespace geco::baselines
