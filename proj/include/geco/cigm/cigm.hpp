#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/cigm/networks.hpp"
#include "geco/data/image.hpp"
#include "geco/data/manifest.hpp"
#include "geco/nn/adam.hpp"

namespace geco::cigm {

struct CigmTrainConfig {
  int epochs = 200;
  double lr = 2e-4;
  int batch_size = 64;
  double lambda = 100.0;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const CigmTrainConfig& c);
void from_json(const nlohmann::json& j, CigmTrainConfig& c);

struct EpochLog {
  int epoch = 0;
  double g_loss = 0;
  double d_loss = 0;
  double mean_l1 = 0;
  double wall_seconds = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Generator + discriminator + optimiser state. Constructing one initialises the weights
// from cfg.seed, so an untrained checkpoint is reproducible.
struct CigmCheckpoint {
  CigmCheckpoint(GeneratorConfig gen, DiscriminatorConfig disc, CigmTrainConfig train);

  GeneratorConfig gen_cfg;
  DiscriminatorConfig disc_cfg;
  CigmTrainConfig train_cfg;
  Generator<float> generator;
  Discriminator<float> discriminator;
  nn::Adam opt_g;
  nn::Adam opt_d;
  int epoch = 0;
  std::string rng_state;

  void save(const std::filesystem::path& path) const;
  static CigmCheckpoint load(const std::filesystem::path& path);
};

// Alternates one discriminator step and one generator step per batch over the train split.
// Writes <out>/cigm.ckpt, <out>/cigm_train_log.tsv and, when checkpoint_every > 0,
// <out>/cigm_epoch_NNNN.ckpt.
CigmCheckpoint train_cigm(const data::PairManifest& manifest, const GeneratorConfig& gen_cfg,
                          const DiscriminatorConfig& disc_cfg, const CigmTrainConfig& train_cfg,
                          const std::filesystem::path& out,
                          const std::function<void(const EpochLog&)>& on_epoch = {});

struct Template {
  std::string seed_top_id;
  std::uint64_t noise_seed = 0;
  int size = 0;
  std::vector<float> pixels;  // 3 x size x size in [-1,1]
};

Template generator_forward(const Generator<float>& generator, const data::ItemImage& top,
                           std::span<const float> noise);

// Sigmoid patch grid (c*c values, row-major).
std::vector<double> discriminator_forward(const Discriminator<float>& discriminator, const data::ItemImage& top,
                                          const data::ItemImage& candidate);

// Noise for one top: N(0, I) from a seed keyed by (noise_seed, top_id).
std::vector<float> template_noise(int noise_dim, std::uint64_t noise_seed, const std::string& top_id);

// One template per top, written to <out_dir>/<top_id>.png with index <out_dir>/index.tsv
// (seed_top_id, noise_seed, template_path).
std::vector<Template> generate_templates(const CigmCheckpoint& ckpt, std::span<const data::ItemImage> tops,
                                         std::uint64_t noise_seed, const std::filesystem::path& out_dir);

struct TemplateRecord {
  std::uint64_t noise_seed = 0;
  std::filesystem::path path;  // absolute or relative to the working directory
};

std::map<std::string, TemplateRecord> load_template_index(const std::filesystem::path& index_path);

}  // namespace geco::cigm
