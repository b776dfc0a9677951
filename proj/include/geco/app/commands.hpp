#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/app/config.hpp"
#include "geco/data/manifest.hpp"
#include "geco/eval/protocol.hpp"

namespace geco::app {

struct RunRecord {
  std::string run_id;
  std::string command;
  std::string config_hash;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::vector<std::string> outputs;
  double wall_seconds = 0;
  nlohmann::json metrics = nlohmann::json::object();

  nlohmann::json to_json() const;
};

// One JSON object per line, written with a single append so concurrent writers cannot
// interleave within a record.
void append_run_record(const std::filesystem::path& log, const RunRecord& record);
std::vector<RunRecord> read_run_records(const std::filesystem::path& log);

// Accepts a manifest file or a directory containing manifest.tsv.
std::filesystem::path resolve_manifest_path(const std::filesystem::path& p);
std::filesystem::path resolve_template_index(const std::filesystem::path& p);

// Every command writes its artifacts under `out` and appends to <out>/runs.jsonl.
struct SynthResult {
  std::filesystem::path manifest;
  std::string digest;
};
SynthResult cmd_synth_data(const ExperimentConfig& cfg, const std::filesystem::path& out);

std::filesystem::path cmd_train_cigm(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                                     const std::filesystem::path& out);

// Templates for every top of the manifest; returns the index path.
std::filesystem::path cmd_gen_templates(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                                        const std::filesystem::path& cigm_ckpt, const std::filesystem::path& out);

std::filesystem::path cmd_train_geco(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                                     const std::filesystem::path& templates, const std::filesystem::path& out);

std::filesystem::path cmd_train_siamese(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                                        const std::filesystem::path& out);

struct ScorerSpec {
  std::string kind = "geco";  // geco | random | siamese
  std::filesystem::path checkpoint;
  std::filesystem::path templates;  // geco only
};

eval::EvalReport cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                              const ScorerSpec& scorer, const std::filesystem::path& out);

struct AblationRow {
  std::string variant;  // w/o-InfoNCE, w/o-BPR, full
  double alpha = 0;
  double beta = 0;
  eval::EvalReport report;
  // |autograd total - (alpha*mean bpr + beta*mean nce + gamma*reg)| / |total| on a fixed batch
  double decomposition_rel_err = 0;
};

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                                    const std::filesystem::path& templates, const std::filesystem::path& out);

struct SweepRow {
  double alpha = 0;
  double beta = 0;
  double tau = 0;
  double auc = 0;
  double mrr = 0;
  std::uint64_t seed = 0;
};

// Rows are appended to <out>/sweep.tsv as each point finishes.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& manifest,
                                const std::filesystem::path& templates, const std::filesystem::path& out);

// Loss decomposition check used by ablate: copies a trained model into double precision and
// compares the differentiable objective with the scalar loss functions on one batch.
double decomposition_error(const std::filesystem::path& geco_ckpt, const data::PairManifest& manifest,
                           const std::filesystem::path& templates, std::size_t batch_size, std::uint64_t seed);

}  // namespace geco::app
