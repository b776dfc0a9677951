#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/baselines/baselines.hpp"
#include "geco/cigm/cigm.hpp"
#include "geco/cigm/networks.hpp"
#include "geco/eval/protocol.hpp"
#include "geco/model/geco.hpp"

namespace geco::app {

// Every offending key, one message each ("geco.train.lr: must be > 0").
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct DatasetSection {
  std::string manifest;  // manifest.tsv or a directory holding one
  int synth_pairs = 200;
  int synth_image_size = 128;
};

struct CigmSection {
  cigm::GeneratorConfig generator;
  cigm::DiscriminatorConfig discriminator;
  cigm::CigmTrainConfig train;
};

struct GecoSection {
  model::GecoConfig model;
  model::LossWeights weights;
  model::GecoTrainConfig train;
};

struct EvalSection {
  eval::Protocol protocol = eval::Protocol::full;
  int n_auc = 3;
  int n_mrr = 9;
  int grid_k = 5;
  int grids = 0;  // number of retrieval grids rendered by evaluate
  std::string split = "test";
};

struct SweepSection {
  std::vector<double> alpha{0.25, 0.5, 0.75};
  std::vector<double> beta{1.0};
  std::vector<double> tau{0.5};
};

// Defaults are the published training constants. The per-stage seeds inside the sections
// are not part of the file format; they are derived from `seed` by resolve().
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  CigmSection cigm;
  GecoSection geco;
  baselines::SiameseBprConfig siamese;
  EvalSection eval;
  SweepSection sweep;

  nlohmann::json to_json() const;
  // Canonical serialisation: sorted keys, no whitespace.
  std::string canonical() const;
  // SHA-256 of canonical().
  std::string hash() const;

  // Fills the per-stage seeds from the global seed.
  ExperimentConfig resolve() const;
  std::uint64_t stage_seed(const std::string& stage) const;
};

// Strict: unknown keys and out-of-range values are collected and thrown together.
ExperimentConfig config_from_json(const nlohmann::json& j);

nlohmann::json default_config_json();
std::vector<std::string> preset_names();
// Partial document merged over the defaults.
nlohmann::json preset_json(const std::string& name);

struct ConfigSources {
  std::string preset;                       // optional
  std::filesystem::path file;               // optional JSON file
  std::map<std::string, std::string> env;   // GECO__a__b=value style variables
  std::vector<std::string> overrides;       // "a.b=value" from flags, applied last
};

// defaults <- preset <- file <- environment <- flag overrides.
ExperimentConfig load_config(const ConfigSources& sources);

// GECO__* entries of the process environment.
std::map<std::string, std::string> environment_overrides();

// Sets the value at a dotted path; the text is parsed as JSON when possible, else taken as
// a string.
void apply_override(nlohmann::json& doc, const std::string& dotted_path, const std::string& text);

}  // namespace geco::app
