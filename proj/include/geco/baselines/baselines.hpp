#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/data/manifest.hpp"
#include "geco/data/sampling.hpp"
#include "geco/eval/scorer.hpp"
#include "geco/model/encoder.hpp"
#include "geco/nn/adam.hpp"

namespace geco::baselines {

// Uniform [0,1) deviate from a hash of (seed, top_id, bottom_id); never looks at pixels.
double random_score(std::uint64_t seed, const std::string& top_id, const std::string& bottom_id);

class RandomScorer : public eval::Scorer {
 public:
  explicit RandomScorer(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "random"; }
  std::vector<double> score(const std::string& top_id, std::span<const std::string> bottom_ids) override;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

struct SiameseBprConfig {
  model::EncoderConfig encoder;
  int embed_dim = 128;
  int image_size = 128;
  double lr = 1e-4;
  int epochs = 50;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SiameseBprConfig& c);
void from_json(const nlohmann::json& j, SiameseBprConfig& c);

// One encoder and one linear projection shared by tops and bottoms.
struct SiameseCheckpoint {
  explicit SiameseCheckpoint(SiameseBprConfig cfg);

  SiameseBprConfig cfg;
  nn::ParameterSet<float> params;
  std::unique_ptr<model::Encoder<float>> encoder;
  nn::Adam opt;
  int epoch = 0;

  // images [N,3,S,S] -> [N, embed_dim]
  nn::Var<float> embed(const nn::Var<float>& images, bool training);

  void save(const std::filesystem::path& path) const;
  static SiameseCheckpoint load(const std::filesystem::path& path);
};

struct SiameseEpochLog {
  int epoch = 0;
  double bpr = 0;
  double wall_seconds = 0;
};

// BPR-only training on (top, positive, sampled negative) triplets of the train split.
// Writes <out>/siamese.ckpt and <out>/siamese_train_log.tsv.
SiameseCheckpoint train_siamese_bpr(const data::PairManifest& manifest, const SiameseBprConfig& cfg,
                                    const std::filesystem::path& out,
                                    const std::function<void(const SiameseEpochLog&)>& on_epoch = {});

// Dot product of the two embeddings.
double siamese_score(SiameseCheckpoint& ckpt, const data::ItemImage& top, const data::ItemImage& bottom);

class SiameseScorer : public eval::Scorer {
 public:
  SiameseScorer(SiameseCheckpoint& ckpt, const data::PairManifest& manifest, std::string checkpoint_hash = {});
  std::string name() const override { return "siamese_bpr"; }
  std::string checkpoint_hash() const override { return hash_; }
  std::vector<double> score(const std::string& top_id, std::span<const std::string> bottom_ids) override;

 private:
  const std::vector<float>& embedding(const std::string& item_id);
  void precompute(std::span<const std::string> ids);

  SiameseCheckpoint* ckpt_;
  data::ImageStore store_;
  std::string hash_;
  std::map<std::string, std::vector<float>> cache_;
};

}  // namespace geco::baselines
