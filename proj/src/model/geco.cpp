#include "geco/model/geco.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <type_traits>

#include "geco/data/tensorize.hpp"
#include "geco/eval/metrics.hpp"
#include "geco/eval/protocol.hpp"
#include "geco/nn/ops.hpp"
#include "geco/nn/serialize.hpp"
#include "geco/util/archive.hpp"
#include "geco/util/hash.hpp"

namespace geco::model {

void GecoConfig::validate() const {
  encoder.validate();
  if (hidden_dim < 1) throw std::invalid_argument("geco: hidden_dim must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("geco: embed_dim must be >= 1");
  if (image_size < 8) throw std::invalid_argument("geco: image_size must be >= 8");
}

void to_json(nlohmann::json& j, const GecoConfig& c) {
  j = {{"encoder", c.encoder}, {"hidden_dim", c.hidden_dim}, {"embed_dim", c.embed_dim}, {"image_size", c.image_size}};
}

void from_json(const nlohmann::json& j, GecoConfig& c) {
  GecoConfig d;
  c.encoder = j.contains("encoder") ? j.at("encoder").get<EncoderConfig>() : d.encoder;
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.image_size = j.value("image_size", d.image_size);
}

void GecoTrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("geco train: epochs must be >= 0");
  if (!(lr > 0)) throw std::invalid_argument("geco train: lr must be > 0");
  if (batch_size < 2) throw std::invalid_argument("geco train: batch_size must be >= 2 (in-batch negatives)");
  if (step_epochs < 1) throw std::invalid_argument("geco train: step_epochs must be >= 1");
  if (!(step_factor > 0)) throw std::invalid_argument("geco train: step_factor must be > 0");
}

double GecoTrainConfig::lr_at(int epoch) const {
  const int decays = epoch <= 1 ? 0 : (epoch - 1) / step_epochs;
  return lr * std::pow(step_factor, decays);
}

void to_json(nlohmann::json& j, const GecoTrainConfig& c) {
  j = {{"epochs", c.epochs},           {"lr", c.lr},
       {"batch_size", c.batch_size},   {"step_epochs", c.step_epochs},
       {"step_factor", c.step_factor}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GecoTrainConfig& c) {
  GecoTrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.step_epochs = j.value("step_epochs", d.step_epochs);
  c.step_factor = j.value("step_factor", d.step_factor);
  c.seed = j.value("seed", d.seed);
}

template <class T>
GecoModel<T>::GecoModel(GecoConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_ = make_encoder<T>(cfg_.encoder, params_);
  const int f = cfg_.encoder.feature_dim, h = cfg_.hidden_dim, e = cfg_.embed_dim;
  params_.add("query.fc1.weight", {h, 2 * f});
  params_.add("query.fc1.bias", {h});
  params_.add("query.fc2.weight", {e, h});
  params_.add("query.fc2.bias", {e});
  params_.add("candidate.fc1.weight", {h, f});
  params_.add("candidate.fc1.bias", {h});
  params_.add("candidate.fc2.weight", {e, h});
  params_.add("candidate.fc2.bias", {e});
}

template <class T>
void GecoModel<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(util::derive_seed(seed, "geco-init"));
  encoder_->init(params_, rng);
  for (const char* head : {"query.fc1", "query.fc2", "candidate.fc1", "candidate.fc2"}) {
    auto& w = params_.get(std::string(head) + ".weight");
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(1)));
    nn::init_uniform(w, bound, rng);
    nn::init_uniform(params_.get(std::string(head) + ".bias"), bound, rng);
  }
  if constexpr (std::is_same_v<T, float>) {
    if (cfg_.encoder.variant == EncoderVariant::resnet18 && !cfg_.encoder.pretrained_path.empty())
      load_pretrained_resnet18(*this, cfg_.encoder.pretrained_path);
  }
}

template <class T>
nn::Var<T> GecoModel<T>::encode(const nn::Var<T>& images, bool training) {
  if (images.shape().size() != 4 || images.dim(2) != cfg_.image_size || images.dim(3) != cfg_.image_size)
    throw std::invalid_argument("geco encode: expected [N,3," + std::to_string(cfg_.image_size) + "," +
                                std::to_string(cfg_.image_size) + "], got " + nn::shape_str(images.shape()));
  return encoder_->forward(params_, images, training);
}

template <class T>
nn::Var<T> GecoModel<T>::compose_query(const nn::Var<T>& top_feat, const nn::Var<T>& template_feat) const {
  const auto x = nn::concat1(top_feat, template_feat);
  const auto h = nn::relu(nn::linear(x, params_.get("query.fc1.weight"), params_.get("query.fc1.bias")));
  return nn::linear(h, params_.get("query.fc2.weight"), params_.get("query.fc2.bias"));
}

template <class T>
nn::Var<T> GecoModel<T>::project_candidate(const nn::Var<T>& bottom_feat) const {
  const auto h =
      nn::relu(nn::linear(bottom_feat, params_.get("candidate.fc1.weight"), params_.get("candidate.fc1.bias")));
  return nn::linear(h, params_.get("candidate.fc2.weight"), params_.get("candidate.fc2.bias"));
}

template class GecoModel<float>;
template class GecoModel<double>;

void load_pretrained_resnet18(GecoModel<float>& model, const std::filesystem::path& path) {
  const auto ar = util::Archive::load(path);
  for (auto& [name, var] : model.params().items()) {
    if (name.rfind("enc.", 0) != 0) continue;
    const auto key = "resnet18/" + name.substr(4);
    if (!ar.has(key)) throw std::runtime_error("pretrained weights " + path.string() + " lack " + key);
    if (ar.shape(key) != var.shape()) throw std::runtime_error("pretrained shape mismatch for " + key);
    const auto values = ar.get_f32(key);
    nn::Var<float> handle = var;
    std::copy(values.begin(), values.end(), handle.mutable_data().begin());
  }
  if (auto* bn = model.norm_state()) {
    for (auto& [name, state] : *bn) {
      const auto mean_key = "resnet18/" + name + ".running_mean", var_key = "resnet18/" + name + ".running_var";
      if (!ar.has(mean_key) || !ar.has(var_key)) continue;
      const auto m = ar.get_f32(mean_key), v = ar.get_f32(var_key);
      state.running_mean.assign(m.begin(), m.end());
      state.running_var.assign(v.begin(), v.end());
    }
  }
}

GecoCheckpoint::GecoCheckpoint(GecoConfig model_cfg_, LossWeights weights_, GecoTrainConfig train)
    : model_cfg(std::move(model_cfg_)),
      weights(weights_),
      train_cfg(train),
      model(model_cfg),
      opt({train.lr, 0.9, 0.999, 1e-8}) {
  weights.validate();
  train_cfg.validate();
  model.init(train.seed);
}

void GecoCheckpoint::save(const std::filesystem::path& path) const {
  util::Archive ar;
  ar.kind = "geco";
  ar.meta["model"] = model_cfg;
  ar.meta["weights"] = weights;
  ar.meta["train"] = train_cfg;
  ar.meta["epoch"] = epoch;
  ar.meta["scheduler"] = {{"kind", "step"},
                          {"step_epochs", train_cfg.step_epochs},
                          {"step_factor", train_cfg.step_factor},
                          {"last_epoch", epoch},
                          {"lr", opt.lr()}};
  nn::save_params(ar, "model", model.params());
  if (const auto* bn = model.norm_state()) {
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

GecoCheckpoint GecoCheckpoint::load(const std::filesystem::path& path) {
  const auto ar = util::Archive::load(path);
  if (ar.kind != "geco") throw std::runtime_error(path.string() + " is a '" + ar.kind + "' checkpoint, not geco");
  auto model_cfg = ar.meta.at("model").get<GecoConfig>();
  // Weights come from the checkpoint, not from the original pretrained file.
  model_cfg.encoder.pretrained_path.clear();
  GecoCheckpoint ck(model_cfg, ar.meta.at("weights").get<LossWeights>(), ar.meta.at("train").get<GecoTrainConfig>());
  ck.model_cfg = ar.meta.at("model").get<GecoConfig>();
  ck.epoch = ar.meta.at("epoch").get<int>();
  nn::load_params(ar, "model", ck.model.params());
  if (auto* bn = ck.model.norm_state()) {
    for (auto& [name, state] : *bn) {
      if (!ar.has("bn/" + name + "/mean")) continue;
      state.running_mean = ar.get_f64("bn/" + name + "/mean");
      state.running_var = ar.get_f64("bn/" + name + "/var");
    }
  }
  nn::load_adam(ar, "opt", ck.opt);
  return ck;
}

namespace {

std::string template_key(const std::string& top_id) { return "template:" + top_id; }

void register_template(data::ImageStore& store, const TemplateIndex& templates, const std::string& top_id) {
  const auto it = templates.find(top_id);
  if (it == templates.end()) throw MissingTemplate(top_id);
  store.put(data::load_image(it->second.path, store.image_size(), template_key(top_id), data::Category::bottom));
}

constexpr std::size_t kChunk = 64;

}  // namespace

std::vector<float> embed_candidates(GecoModel<float>& model, std::span<const data::ItemImage> bottoms) {
  nn::NoGradGuard no_grad;
  std::vector<float> out;
  out.reserve(bottoms.size() * model.config().embed_dim);
  for (std::size_t i = 0; i < bottoms.size(); i += kChunk) {
    const auto chunk = bottoms.subspan(i, std::min(kChunk, bottoms.size() - i));
    const auto c = model.project_candidate(model.encode(data::stack_images<float>(chunk), false));
    out.insert(out.end(), c.data().begin(), c.data().end());
  }
  return out;
}

std::vector<float> embed_queries(GecoModel<float>& model, std::span<const data::ItemImage> tops,
                                 std::span<const data::ItemImage> templates) {
  if (tops.size() != templates.size()) throw std::invalid_argument("embed_queries: one template per top required");
  nn::NoGradGuard no_grad;
  std::vector<float> out;
  out.reserve(tops.size() * model.config().embed_dim);
  for (std::size_t i = 0; i < tops.size(); i += kChunk) {
    const auto n = std::min(kChunk, tops.size() - i);
    const auto ft = model.encode(data::stack_images<float>(tops.subspan(i, n)), false);
    const auto fb = model.encode(data::stack_images<float>(templates.subspan(i, n)), false);
    const auto q = model.compose_query(ft, fb);
    out.insert(out.end(), q.data().begin(), q.data().end());
  }
  return out;
}

std::vector<std::pair<std::string, double>> score_catalog(GecoCheckpoint& ckpt, const data::ItemImage& top,
                                                          const data::ItemImage& templ,
                                                          std::span<const std::string> candidate_ids,
                                                          std::span<const float> candidate_embeddings) {
  if (candidate_ids.empty()) throw std::invalid_argument("score_catalog: no candidates");
  const auto dim = static_cast<std::size_t>(ckpt.model_cfg.embed_dim);
  if (candidate_embeddings.size() != candidate_ids.size() * dim)
    throw std::invalid_argument("score_catalog: embedding matrix does not match the candidate list");
  const auto q = embed_queries(ckpt.model, std::span<const data::ItemImage>(&top, 1),
                               std::span<const data::ItemImage>(&templ, 1));
  std::vector<std::pair<std::string, double>> out;
  out.reserve(candidate_ids.size());
  for (std::size_t i = 0; i < candidate_ids.size(); ++i)
    out.emplace_back(candidate_ids[i], score(q, candidate_embeddings.subspan(i * dim, dim)));
  return eval::ranked(std::move(out));
}

std::vector<std::pair<std::string, double>> score_catalog(GecoCheckpoint& ckpt, const data::ItemImage& top,
                                                          const data::ItemImage& templ,
                                                          std::span<const data::ItemImage> candidates) {
  if (candidates.empty()) throw std::invalid_argument("score_catalog: no candidates");
  std::vector<std::string> ids;
  for (const auto& c : candidates) ids.push_back(c.item_id);
  const auto emb = embed_candidates(ckpt.model, candidates);
  return score_catalog(ckpt, top, templ, ids, emb);
}

GecoCheckpoint train_geco(const data::PairManifest& manifest, const TemplateIndex& templates, const GecoConfig& model_cfg,
                          const LossWeights& weights, const GecoTrainConfig& train_cfg,
                          const std::filesystem::path& out, const std::function<void(const GecoEpochLog&)>& on_epoch) {
  const auto train_idx = manifest.split_indices(data::Split::train);
  if (train_idx.size() < 2) throw std::invalid_argument("train_geco: train split needs at least 2 pairs");

  data::ImageStore store(manifest, model_cfg.image_size);
  for (std::size_t i : train_idx) {
    const auto& top = manifest.pairs()[i].top_id;
    if (!templates.count(top)) throw MissingTemplate(top);
  }
  for (std::size_t i : train_idx) register_template(store, templates, manifest.pairs()[i].top_id);
  bool validate = !manifest.split_indices(data::Split::val).empty();
  for (std::size_t i : manifest.split_indices(data::Split::val))
    if (!templates.count(manifest.pairs()[i].top_id)) validate = false;

  GecoCheckpoint ck(model_cfg, weights, train_cfg);
  std::filesystem::create_directories(out);
  std::ofstream log(out / "geco_train_log.tsv", std::ios::trunc);
  log << "epoch\tlr\tloss\tbpr\tinfonce\treg\tval_auc\twall_seconds\n";

  auto& params = ck.model.params();
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    ck.opt.set_lr(train_cfg.lr_at(epoch));
    const auto batches = data::batch_iter(manifest, data::Split::train, train_cfg.batch_size, true,
                                          util::derive_seed(train_cfg.seed, "geco-epoch-" + std::to_string(epoch)));
    GecoEpochLog row;
    row.epoch = epoch;
    row.lr = ck.opt.lr();
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      // A singleton batch has no in-batch negative; it is skipped.
      if (batches[bi].size() < 2) continue;
      const auto batch = data::materialize(batches[bi], store);
      const auto n = static_cast<std::int64_t>(batch.tops.size());
      std::vector<data::ItemImage> all;
      all.reserve(4 * batch.tops.size());
      all.insert(all.end(), batch.tops.begin(), batch.tops.end());
      for (const auto& t : batches[bi]) all.push_back(store.get(template_key(t.top_id)));
      all.insert(all.end(), batch.positive_bottoms.begin(), batch.positive_bottoms.end());
      all.insert(all.end(), batch.negative_bottoms.begin(), batch.negative_bottoms.end());

      const auto feats = ck.model.encode(data::stack_images<float>(all), true);
      const auto q = ck.model.compose_query(nn::slice0(feats, 0, n), nn::slice0(feats, n, n));
      const auto c_pos = ck.model.project_candidate(nn::slice0(feats, 2 * n, n));
      const auto c_neg = ck.model.project_candidate(nn::slice0(feats, 3 * n, n));
      const auto terms = batch_objective(q, c_pos, c_neg, weights, params);
      const double loss = terms.total.item();
      if (!std::isfinite(loss))
        throw TrainingDiverged("geco training diverged: loss = " + std::to_string(loss) + " at epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(bi));
      params.zero_grad();
      nn::backward(terms.total);
      ck.opt.step(params);

      row.loss += loss * n;
      row.bpr += terms.bpr.item() * n;
      row.nce += terms.nce.item() * n;
      row.reg = terms.reg.item();
      seen += static_cast<std::size_t>(n);
    }
    params.zero_grad();
    if (seen > 0) {
      row.loss /= seen;
      row.bpr /= seen;
      row.nce /= seen;
    }
    ck.epoch = epoch;
    row.val_auc = std::numeric_limits<double>::quiet_NaN();
    if (validate) {
      GecoScorer scorer(ck, manifest, templates);
      row.val_auc = eval::evaluate_full(scorer, manifest, data::Split::val, util::derive_seed(train_cfg.seed, "geco-val"))
                        .auc;
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char line[320];
    std::snprintf(line, sizeof line, "%d\t%.6g\t%.9g\t%.9g\t%.9g\t%.9g\t%.6f\t%.3f\n", row.epoch, row.lr, row.loss,
                  row.bpr, row.nce, row.reg, row.val_auc, row.wall_seconds);
    log << line << std::flush;
    if (on_epoch) on_epoch(row);
  }
  ck.save(out / "geco.ckpt");
  return ck;
}

namespace {

template <class V>
void put_le(std::ostream& os, V v) {
  unsigned char b[sizeof(V)];
  for (std::size_t i = 0; i < sizeof(V); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof b);
}

template <class V>
V get_le(std::istream& is) {
  unsigned char b[sizeof(V)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof b)) throw std::runtime_error("embedding cache truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(V); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<V>(v);
}

constexpr char kCacheMagic[8] = {'G', 'E', 'C', 'O', 'E', 'M', 'B', '1'};

}  // namespace

void write_embedding_cache(const EmbeddingCache& cache, const std::filesystem::path& path) {
  if (cache.values.size() != cache.ids.size() * static_cast<std::size_t>(cache.dim))
    throw std::invalid_argument("embedding cache: values do not match ids x dim");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(kCacheMagic, sizeof kCacheMagic);
  put_le<std::uint64_t>(os, cache.ids.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cache.dim));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cache.checkpoint_hash.size()));
  os.write(cache.checkpoint_hash.data(), static_cast<std::streamsize>(cache.checkpoint_hash.size()));
  for (std::size_t i = 0; i < cache.ids.size(); ++i) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cache.ids[i].size()));
    os.write(cache.ids[i].data(), static_cast<std::streamsize>(cache.ids[i].size()));
    for (int d = 0; d < cache.dim; ++d) {
      std::uint32_t bits;
      std::memcpy(&bits, &cache.values[i * cache.dim + d], 4);
      put_le<std::uint32_t>(os, bits);
    }
  }
  if (!os) throw std::runtime_error("cannot write embedding cache " + path.string());
}

EmbeddingCache read_embedding_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open embedding cache " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCacheMagic, 8) != 0)
    throw std::runtime_error(path.string() + " is not an embedding cache");
  EmbeddingCache cache;
  const auto count = get_le<std::uint64_t>(is);
  cache.dim = static_cast<int>(get_le<std::uint32_t>(is));
  cache.checkpoint_hash.resize(get_le<std::uint32_t>(is));
  is.read(cache.checkpoint_hash.data(), static_cast<std::streamsize>(cache.checkpoint_hash.size()));
  cache.ids.reserve(count);
  cache.values.reserve(count * cache.dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id(get_le<std::uint32_t>(is), '\0');
    if (!is.read(id.data(), static_cast<std::streamsize>(id.size()))) throw std::runtime_error("embedding cache truncated");
    cache.ids.push_back(std::move(id));
    for (int d = 0; d < cache.dim; ++d) {
      const auto bits = get_le<std::uint32_t>(is);
      float v;
      std::memcpy(&v, &bits, 4);
      cache.values.push_back(v);
    }
  }
  return cache;
}

GecoScorer::GecoScorer(GecoCheckpoint& ckpt, const data::PairManifest& manifest, TemplateIndex templates,
                       std::string checkpoint_hash)
    : ckpt_(&ckpt),
      store_(manifest, ckpt.model_cfg.image_size),
      templates_(std::move(templates)),
      hash_(std::move(checkpoint_hash)) {}

data::ItemImage GecoScorer::template_image(const std::string& top_id) {
  const auto key = template_key(top_id);
  const auto it = templates_.find(top_id);
  if (it == templates_.end()) throw MissingTemplate(top_id);
  if (!store_.contains(key)) register_template(store_, templates_, top_id);
  return store_.get(key);
}

void GecoScorer::precompute(std::span<const std::string> bottom_ids) {
  std::vector<data::ItemImage> todo;
  for (const auto& id : bottom_ids)
    if (!candidates_.count(id)) todo.push_back(store_.get(id));
  if (todo.empty()) return;
  const auto emb = embed_candidates(ckpt_->model, todo);
  const auto dim = static_cast<std::size_t>(ckpt_->model_cfg.embed_dim);
  for (std::size_t i = 0; i < todo.size(); ++i)
    candidates_[todo[i].item_id].assign(emb.begin() + i * dim, emb.begin() + (i + 1) * dim);
}

const std::vector<float>& GecoScorer::candidate_embedding(const std::string& bottom_id) {
  auto it = candidates_.find(bottom_id);
  if (it == candidates_.end()) {
    precompute(std::span<const std::string>(&bottom_id, 1));
    it = candidates_.find(bottom_id);
  }
  return it->second;
}

const std::vector<float>& GecoScorer::query_embedding(const std::string& top_id) {
  auto it = queries_.find(top_id);
  if (it != queries_.end()) return it->second;
  const auto templ = template_image(top_id);
  const auto& top = store_.get(top_id);
  auto q = embed_queries(ckpt_->model, std::span<const data::ItemImage>(&top, 1),
                         std::span<const data::ItemImage>(&templ, 1));
  return queries_.emplace(top_id, std::move(q)).first->second;
}

std::vector<double> GecoScorer::score(const std::string& top_id, std::span<const std::string> bottom_ids) {
  precompute(bottom_ids);
  const auto& q = query_embedding(top_id);
  std::vector<double> out;
  out.reserve(bottom_ids.size());
  for (const auto& id : bottom_ids) out.push_back(model::score(q, candidates_.at(id)));
  return out;
}

}  // namespace geco::model
