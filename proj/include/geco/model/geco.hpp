#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/cigm/cigm.hpp"
#include "geco/data/image.hpp"
#include "geco/data/manifest.hpp"
#include "geco/data/sampling.hpp"
#include "geco/eval/scorer.hpp"
#include "geco/model/encoder.hpp"
#include "geco/model/losses.hpp"
#include "geco/nn/adam.hpp"

namespace geco::model {

struct GecoConfig {
  EncoderConfig encoder;
  int hidden_dim = 512;
  int embed_dim = 128;
  int image_size = 128;

  void validate() const;
};

void to_json(nlohmann::json& j, const GecoConfig& c);
void from_json(const nlohmann::json& j, GecoConfig& c);

// Shared encoder, query head (2F -> H -> E) over [top ; template] features, and a separate
// candidate head (F -> H -> E).
template <class T>
class GecoModel {
 public:
  explicit GecoModel(GecoConfig cfg);

  // Random initialisation; the resnet18 variant then loads pretrained weights if configured.
  void init(std::uint64_t seed);

  nn::Var<T> encode(const nn::Var<T>& images, bool training);
  nn::Var<T> compose_query(const nn::Var<T>& top_feat, const nn::Var<T>& template_feat) const;
  nn::Var<T> project_candidate(const nn::Var<T>& bottom_feat) const;

  const GecoConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  // Batch-norm running statistics (empty for the tiny encoder).
  std::map<std::string, nn::BatchNormState>* norm_state() { return encoder_->norm_state(); }
  const std::map<std::string, nn::BatchNormState>* norm_state() const { return encoder_->norm_state(); }

 private:
  GecoConfig cfg_;
  nn::ParameterSet<T> params_;
  std::unique_ptr<Encoder<T>> encoder_;
};

// Loads "resnet18/<torchvision name>" arrays from an archive into the encoder parameters
// and batch-norm statistics.
void load_pretrained_resnet18(GecoModel<float>& model, const std::filesystem::path& path);

struct GecoTrainConfig {
  int epochs = 50;
  double lr = 1e-4;
  int batch_size = 64;
  int step_epochs = 8;
  double step_factor = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  // Learning rate used during 1-based epoch e.
  double lr_at(int epoch) const;
};

void to_json(nlohmann::json& j, const GecoTrainConfig& c);
void from_json(const nlohmann::json& j, GecoTrainConfig& c);

class MissingTemplate : public std::runtime_error {
 public:
  explicit MissingTemplate(const std::string& top_id)
      : std::runtime_error("missing template for top " + top_id), top_id_(top_id) {}
  const std::string& top_id() const { return top_id_; }

 private:
  std::string top_id_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GecoCheckpoint {
  GecoCheckpoint(GecoConfig model_cfg, LossWeights weights, GecoTrainConfig train);

  GecoConfig model_cfg;
  LossWeights weights;
  GecoTrainConfig train_cfg;
  GecoModel<float> model;
  nn::Adam opt;
  int epoch = 0;

  void save(const std::filesystem::path& path) const;
  static GecoCheckpoint load(const std::filesystem::path& path);
};

struct GecoEpochLog {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double bpr = 0;
  double nce = 0;
  double reg = 0;
  double val_auc = 0;  // NaN when the validation split is empty or lacks templates
  double wall_seconds = 0;
};

using TemplateIndex = std::map<std::string, cigm::TemplateRecord>;

// Writes <out>/geco.ckpt and <out>/geco_train_log.tsv.
GecoCheckpoint train_geco(const data::PairManifest& manifest, const TemplateIndex& templates, const GecoConfig& model_cfg,
                          const LossWeights& weights, const GecoTrainConfig& train_cfg,
                          const std::filesystem::path& out,
                          const std::function<void(const GecoEpochLog&)>& on_epoch = {});

// Inference-mode embeddings, [N, embed_dim] row-major, computed in chunks.
std::vector<float> embed_candidates(GecoModel<float>& model, std::span<const data::ItemImage> bottoms);
std::vector<float> embed_queries(GecoModel<float>& model, std::span<const data::ItemImage> tops,
                                 std::span<const data::ItemImage> templates);

// (bottom_id, score) by descending score, ties by ascending bottom_id.
std::vector<std::pair<std::string, double>> score_catalog(GecoCheckpoint& ckpt, const data::ItemImage& top,
                                                          const data::ItemImage& templ,
                                                          std::span<const data::ItemImage> candidates);

// Same ranking from candidate embeddings computed beforehand (aligned with ids).
std::vector<std::pair<std::string, double>> score_catalog(GecoCheckpoint& ckpt, const data::ItemImage& top,
                                                          const data::ItemImage& templ,
                                                          std::span<const std::string> candidate_ids,
                                                          std::span<const float> candidate_embeddings);

// Binary cache: "GECOEMB1", u64 count, u32 dim, u32 hash length, hash bytes, then per record
// u32 id length, id bytes, dim little-endian f32.
struct EmbeddingCache {
  std::string checkpoint_hash;
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> values;  // ids.size() * dim
};
void write_embedding_cache(const EmbeddingCache& cache, const std::filesystem::path& path);
EmbeddingCache read_embedding_cache(const std::filesystem::path& path);

// Evaluation adapter: loads tops, templates and bottoms lazily and caches embeddings.
class GecoScorer : public eval::Scorer {
 public:
  GecoScorer(GecoCheckpoint& ckpt, const data::PairManifest& manifest, TemplateIndex templates,
             std::string checkpoint_hash = {});

  std::string name() const override { return "geco"; }
  std::string checkpoint_hash() const override { return hash_; }
  std::vector<double> score(const std::string& top_id, std::span<const std::string> bottom_ids) override;

  // Embeds every listed bottom now (batched) so later queries only do dot products.
  void precompute(std::span<const std::string> bottom_ids);
  const std::vector<float>& candidate_embedding(const std::string& bottom_id);
  const std::vector<float>& query_embedding(const std::string& top_id);
  data::ItemImage template_image(const std::string& top_id);

 private:
  GecoCheckpoint* ckpt_;
  data::ImageStore store_;
  TemplateIndex templates_;
  std::string hash_;
  std::map<std::string, std::vector<float>> candidates_;
  std::map<std::string, std::vector<float>> queries_;
};

}  // namespace geco::model
