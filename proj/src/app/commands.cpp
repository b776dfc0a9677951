#include "geco/app/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "geco/baselines/baselines.hpp"
#include "geco/cigm/cigm.hpp"
#include "geco/data/sampling.hpp"
#include "geco/data/synth.hpp"
#include "geco/data/tensorize.hpp"
#include "geco/eval/grid.hpp"
#include "geco/model/geco.hpp"
#include "geco/nn/ops.hpp"
#include "geco/util/hash.hpp"

namespace geco::app {

namespace fs = std::filesystem;

nlohmann::json RunRecord::to_json() const {
  return {{"run_id", run_id}, {"command", command},           {"config_hash", config_hash}, {"inputs", inputs},
          {"outputs", outputs}, {"wall_seconds", wall_seconds}, {"metrics", metrics}};
}

void append_run_record(const fs::path& log, const RunRecord& record) {
  if (log.has_parent_path()) fs::create_directories(log.parent_path());
  const auto line = record.to_json().dump() + "\n";
  const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open run log " + log.string());
  const auto written = ::write(fd, line.data(), line.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) throw std::runtime_error("short write to run log " + log.string());
}

std::vector<RunRecord> read_run_records(const fs::path& log) {
  std::ifstream in(log);
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RunRecord r;
    r.run_id = j.at("run_id");
    r.command = j.at("command");
    r.config_hash = j.at("config_hash");
    r.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    r.outputs = j.at("outputs").get<std::vector<std::string>>();
    r.wall_seconds = j.at("wall_seconds");
    r.metrics = j.at("metrics");
    out.push_back(std::move(r));
  }
  return out;
}

fs::path resolve_manifest_path(const fs::path& p) {
  if (p.empty()) throw std::invalid_argument("no dataset given (use --data or dataset.manifest)");
  const auto candidate = fs::is_directory(p) ? p / "manifest.tsv" : p;
  if (!fs::exists(candidate)) throw std::invalid_argument("manifest not found: " + candidate.string());
  return candidate;
}

fs::path resolve_template_index(const fs::path& p) {
  if (p.empty()) throw std::invalid_argument("no template index given (use --templates)");
  const auto candidate = fs::is_directory(p) ? p / "index.tsv" : p;
  if (!fs::exists(candidate)) throw std::invalid_argument("template index not found: " + candidate.string());
  return candidate;
}

namespace {

using Clock = std::chrono::steady_clock;

class Recorder {
 public:
  Recorder(std::string command, const ExperimentConfig& cfg, fs::path out)
      : t0_(Clock::now()), out_(std::move(out)) {
    rec_.command = std::move(command);
    rec_.config_hash = cfg.hash();
  }
  void input(const fs::path& p) { rec_.inputs[p.string()] = util::sha256_file(p); }
  void output(const fs::path& p) { rec_.outputs.push_back(p.string()); }
  nlohmann::json& metrics() { return rec_.metrics; }

  void finish() {
    rec_.wall_seconds = std::chrono::duration<double>(Clock::now() - t0_).count();
    std::string key = rec_.command + "|" + rec_.config_hash;
    for (const auto& [p, h] : rec_.inputs) key += "|" + h;
    rec_.run_id = util::sha256_hex(key).substr(0, 16);
    append_run_record(out_ / "runs.jsonl", rec_);
  }

 private:
  Clock::time_point t0_;
  fs::path out_;
  RunRecord rec_;
};

data::Split split_of(const std::string& s) { return data::parse_split(s); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

eval::EvalReport run_protocol(const ExperimentConfig& cfg, eval::Scorer& scorer, const data::PairManifest& manifest) {
  const auto split = split_of(cfg.eval.split);
  const auto seed = cfg.stage_seed("eval");
  auto rep = cfg.eval.protocol == eval::Protocol::full
                 ? eval::evaluate_full(scorer, manifest, split, seed)
                 : eval::evaluate_mgcm(scorer, manifest, split, cfg.eval.n_auc, cfg.eval.n_mrr, seed);
  rep.config_hash = cfg.hash();
  return rep;
}

void log_epoch(const std::string& what, int epoch, const std::string& rest) {
  std::cerr << what << " epoch " << epoch << ": " << rest << '\n';
}

}  // namespace

SynthResult cmd_synth_data(const ExperimentConfig& cfg, const fs::path& out) {
  Recorder rec("synth-data", cfg, out);
  const auto m = data::synth_toy_dataset(cfg.dataset.synth_pairs, cfg.dataset.synth_image_size,
                                         cfg.stage_seed("synth"), out);
  SynthResult r{out / "manifest.tsv", m.digest()};
  rec.output(r.manifest);
  rec.metrics()["pairs"] = m.pairs().size();
  rec.metrics()["manifest_digest"] = r.digest;
  rec.finish();
  return r;
}

fs::path cmd_train_cigm(const ExperimentConfig& cfg_in, const fs::path& manifest_path, const fs::path& out) {
  const auto cfg = cfg_in.resolve();
  Recorder rec("train-cigm", cfg_in, out);
  const auto mp = resolve_manifest_path(manifest_path);
  rec.input(mp);
  const auto manifest = data::load_manifest(mp);
  const auto ck = cigm::train_cigm(manifest, cfg.cigm.generator, cfg.cigm.discriminator, cfg.cigm.train, out,
                                   [](const cigm::EpochLog& e) {
                                     char buf[160];
                                     std::snprintf(buf, sizeof buf, "g=%.4f d=%.4f L1=%.4f (%.1fs)", e.g_loss, e.d_loss,
                                                   e.mean_l1, e.wall_seconds);
                                     log_epoch("cigm", e.epoch, buf);
                                   });
  const auto path = out / "cigm.ckpt";
  rec.output(path);
  rec.output(out / "cigm_train_log.tsv");
  rec.metrics()["epochs"] = ck.epoch;
  rec.metrics()["checkpoint_sha256"] = util::sha256_file(path);
  rec.finish();
  return path;
}

fs::path cmd_gen_templates(const ExperimentConfig& cfg, const fs::path& manifest_path, const fs::path& cigm_ckpt,
                           const fs::path& out) {
  Recorder rec("gen-templates", cfg, out);
  const auto mp = resolve_manifest_path(manifest_path);
  rec.input(mp);
  rec.input(cigm_ckpt);
  const auto manifest = data::load_manifest(mp);
  const auto ck = cigm::CigmCheckpoint::load(cigm_ckpt);
  data::ImageStore store(manifest, ck.gen_cfg.image_size);
  std::vector<data::ItemImage> tops;
  for (const auto& id : manifest.item_ids(data::Category::top)) tops.push_back(store.get(id));
  cigm::generate_templates(ck, tops, cfg.stage_seed("templates"), out);
  const auto index = out / "index.tsv";
  rec.output(index);
  rec.metrics()["templates"] = tops.size();
  rec.finish();
  return index;
}

fs::path cmd_train_geco(const ExperimentConfig& cfg_in, const fs::path& manifest_path, const fs::path& templates,
                        const fs::path& out) {
  const auto cfg = cfg_in.resolve();
  Recorder rec("train-geco", cfg_in, out);
  const auto mp = resolve_manifest_path(manifest_path);
  rec.input(mp);
  const auto manifest = data::load_manifest(mp);
  model::TemplateIndex index;
  fs::path ip;
  try {
    ip = resolve_template_index(templates);
    index = cigm::load_template_index(ip);
  } catch (const std::invalid_argument&) {
    // No index at all: report the first top that lacks one.
    for (std::size_t i : manifest.split_indices(data::Split::train)) throw model::MissingTemplate(manifest.pairs()[i].top_id);
    throw;
  }
  rec.input(ip);
  const auto ck = model::train_geco(manifest, index, cfg.geco.model, cfg.geco.weights, cfg.geco.train, out,
                                    [](const model::GecoEpochLog& e) {
                                      char buf[200];
                                      std::snprintf(buf, sizeof buf,
                                                    "loss=%.4f bpr=%.4f nce=%.4f reg=%.2f val_auc=%.4f lr=%.2g (%.1fs)",
                                                    e.loss, e.bpr, e.nce, e.reg, e.val_auc, e.lr, e.wall_seconds);
                                      log_epoch("geco", e.epoch, buf);
                                    });
  const auto path = out / "geco.ckpt";
  rec.output(path);
  rec.output(out / "geco_train_log.tsv");
  rec.metrics()["epochs"] = ck.epoch;
  rec.metrics()["checkpoint_sha256"] = util::sha256_file(path);
  rec.finish();
  return path;
}

fs::path cmd_train_siamese(const ExperimentConfig& cfg_in, const fs::path& manifest_path, const fs::path& out) {
  const auto cfg = cfg_in.resolve();
  Recorder rec("train-siamese", cfg_in, out);
  const auto mp = resolve_manifest_path(manifest_path);
  rec.input(mp);
  const auto manifest = data::load_manifest(mp);
  const auto ck = baselines::train_siamese_bpr(manifest, cfg.siamese, out, [](const baselines::SiameseEpochLog& e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "bpr=%.4f (%.1fs)", e.bpr, e.wall_seconds);
    log_epoch("siamese", e.epoch, buf);
  });
  const auto path = out / "siamese.ckpt";
  rec.output(path);
  rec.metrics()["epochs"] = ck.epoch;
  rec.finish();
  return path;
}

eval::EvalReport cmd_evaluate(const ExperimentConfig& cfg, const fs::path& manifest_path, const ScorerSpec& spec,
                              const fs::path& out) {
  Recorder rec("evaluate", cfg, out);
  const auto mp = resolve_manifest_path(manifest_path);
  rec.input(mp);
  const auto manifest = data::load_manifest(mp);
  eval::EvalReport rep;
  const auto report_path = out / ("eval_" + spec.kind + "_" + eval::to_string(cfg.eval.protocol) + ".txt");

  if (spec.kind == "random") {
    baselines::RandomScorer scorer(cfg.stage_seed("random"));
    rep = run_protocol(cfg, scorer, manifest);
  } else if (spec.kind == "siamese") {
    rec.input(spec.checkpoint);
    auto ck = baselines::SiameseCheckpoint::load(spec.checkpoint);
    baselines::SiameseScorer scorer(ck, manifest, util::sha256_file(spec.checkpoint));
    rep = run_protocol(cfg, scorer, manifest);
  } else if (spec.kind == "geco") {
    rec.input(spec.checkpoint);
    const auto ip = resolve_template_index(spec.templates);
    rec.input(ip);
    auto ck = model::GecoCheckpoint::load(spec.checkpoint);
    model::GecoScorer scorer(ck, manifest, cigm::load_template_index(ip), util::sha256_file(spec.checkpoint));
    rep = run_protocol(cfg, scorer, manifest);
    if (cfg.eval.grids > 0) {
      const auto split = split_of(cfg.eval.split);
      const auto catalog = manifest.item_ids(data::Category::bottom, split);
      data::ImageStore store(manifest, ck.model_cfg.image_size);
      const auto idx = manifest.split_indices(split);
      for (std::size_t q = 0; q < idx.size() && q < static_cast<std::size_t>(cfg.eval.grids); ++q) {
        const auto& pair = manifest.pairs()[idx[q]];
        const auto scores = scorer.score(pair.top_id, catalog);
        std::vector<std::pair<std::string, double>> ranked;
        for (std::size_t c = 0; c < catalog.size(); ++c) ranked.emplace_back(catalog[c], scores[c]);
        ranked = eval::ranked(std::move(ranked));
        std::vector<std::pair<data::ItemImage, double>> shown;
        for (std::size_t k = 0; k < ranked.size() && k < static_cast<std::size_t>(cfg.eval.grid_k); ++k)
          shown.emplace_back(store.get(ranked[k].first), ranked[k].second);
        const auto templ_img = scorer.template_image(pair.top_id);
        cigm::Template templ{pair.top_id, 0, templ_img.size, templ_img.pixels};
        const auto grid_path = out / "grids" / (pair.pair_id + ".png");
        eval::render_retrieval_grid(store.get(pair.top_id), templ, shown, pair.bottom_id, grid_path);
        rec.output(grid_path);
      }
    }
  } else {
    throw std::invalid_argument("unknown scorer '" + spec.kind + "' (expected geco, random or siamese)");
  }
  rep.write(report_path);
  rec.output(report_path);
  rec.metrics() = {{"protocol", eval::to_string(rep.protocol)},
                   {"scorer", rep.scorer},
                   {"auc", rep.auc},
                   {"mrr", rep.mrr},
                   {"n_queries", rep.n_queries}};
  rec.finish();
  return rep;
}

double decomposition_error(const fs::path& geco_ckpt, const data::PairManifest& manifest, const fs::path& templates,
                           std::size_t batch_size, std::uint64_t seed) {
  auto ck = model::GecoCheckpoint::load(geco_ckpt);
  model::GecoModel<double> m(ck.model_cfg);
  m.params().copy_from(ck.model.params());
  if (auto* dst = m.norm_state()) *dst = *ck.model.norm_state();

  const auto index = cigm::load_template_index(resolve_template_index(templates));
  const auto batches = data::batch_iter(manifest, data::Split::train, batch_size, true, seed);
  if (batches.empty() || batches.front().size() < 2)
    throw std::invalid_argument("decomposition_error: need a training batch of at least 2 pairs");
  data::ImageStore store(manifest, ck.model_cfg.image_size);
  const auto batch = data::materialize(batches.front(), store);
  std::vector<data::ItemImage> templ;
  for (const auto& t : batches.front()) {
    const auto it = index.find(t.top_id);
    if (it == index.end()) throw model::MissingTemplate(t.top_id);
    templ.push_back(data::load_image(it->second.path, ck.model_cfg.image_size, "template:" + t.top_id,
                                     data::Category::bottom));
  }

  nn::NoGradGuard no_grad;
  const auto q = m.compose_query(m.encode(data::stack_images<double>(batch.tops), false),
                                 m.encode(data::stack_images<double>(templ), false));
  const auto cp = m.project_candidate(m.encode(data::stack_images<double>(batch.positive_bottoms), false));
  const auto cn = m.project_candidate(m.encode(data::stack_images<double>(batch.negative_bottoms), false));
  const auto& w = ck.weights;
  const double autograd_total = model::batch_objective(q, cp, cn, w, m.params()).total.item();

  // Independent scalar path.
  const auto n = static_cast<std::size_t>(q.dim(0)), d = static_cast<std::size_t>(q.dim(1));
  auto dot = [&](const nn::Var<double>& a, std::size_t i, const nn::Var<double>& b, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += a.data()[i * d + k] * b.data()[j * d + k];
    return s;
  };
  double bpr = 0, nce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = dot(q, i, cp, i);
    bpr += model::bpr_loss(pos, dot(q, i, cn, i));
    std::vector<double> negs;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) negs.push_back(dot(q, i, cp, j));
    nce += model::info_nce_loss(pos, negs, w.tau, w.form);
  }
  bpr /= static_cast<double>(n);
  nce /= static_cast<double>(n);
  const double scalar_total = w.alpha * bpr + w.beta * nce + w.gamma * model::reg_loss(m.params());
  return std::abs(autograd_total - scalar_total) / std::max(std::abs(scalar_total), 1e-300);
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg_in, const fs::path& manifest_path,
                                    const fs::path& templates, const fs::path& out) {
  const auto cfg = cfg_in.resolve();
  Recorder rec("ablate", cfg_in, out);
  const auto mp = resolve_manifest_path(manifest_path);
  const auto ip = resolve_template_index(templates);
  rec.input(mp);
  rec.input(ip);
  const auto manifest = data::load_manifest(mp);
  const auto index = cigm::load_template_index(ip);

  const double a = cfg.geco.weights.alpha, b = cfg.geco.weights.beta;
  if (a == 0 || b == 0) throw std::invalid_argument("ablate: geco.weights.alpha and beta must both be > 0");
  std::vector<AblationRow> rows{{"w/o-InfoNCE", a, 0.0, {}, 0}, {"w/o-BPR", 0.0, b, {}, 0}, {"full", a, b, {}, 0}};
  for (auto& row : rows) {
    auto variant = cfg;
    variant.geco.weights.alpha = row.alpha;
    variant.geco.weights.beta = row.beta;
    const auto dir = out / (row.variant == "w/o-InfoNCE" ? "wo_infonce" : row.variant == "w/o-BPR" ? "wo_bpr" : "full");
    std::cerr << "ablate: training " << row.variant << '\n';
    model::train_geco(manifest, index, variant.geco.model, variant.geco.weights, variant.geco.train, dir);
    const auto ckpt = dir / "geco.ckpt";
    auto ck = model::GecoCheckpoint::load(ckpt);
    model::GecoScorer scorer(ck, manifest, index, util::sha256_file(ckpt));
    row.report = run_protocol(variant, scorer, manifest);
    row.report.write(dir / "eval_report.txt");
    row.decomposition_rel_err = decomposition_error(ckpt, manifest, ip, static_cast<std::size_t>(cfg.geco.train.batch_size),
                                                    cfg.stage_seed("ablate-decomposition"));
    rec.output(ckpt);
  }
  const auto table = out / "ablation.tsv";
  std::ofstream f(table, std::ios::trunc);
  f << "variant\talpha\tbeta\tgamma\ttau\tauc\tmrr\tdecomposition_rel_err\tdataset_digest\tcheckpoint_hash\n";
  for (const auto& r : rows)
    f << r.variant << '\t' << fmt(r.alpha) << '\t' << fmt(r.beta) << '\t' << fmt(cfg.geco.weights.gamma) << '\t'
      << fmt(cfg.geco.weights.tau) << '\t' << fmt(r.report.auc) << '\t' << fmt(r.report.mrr) << '\t'
      << fmt(r.decomposition_rel_err) << '\t' << r.report.dataset_digest << '\t' << r.report.checkpoint_hash << '\n';
  f.close();
  rec.output(table);
  for (const auto& r : rows) rec.metrics()[r.variant] = {{"auc", r.report.auc}, {"mrr", r.report.mrr}};
  rec.finish();
  return rows;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg_in, const fs::path& manifest_path,
                                const fs::path& templates, const fs::path& out) {
  const auto cfg = cfg_in.resolve();
  Recorder rec("sweep", cfg_in, out);
  const auto mp = resolve_manifest_path(manifest_path);
  const auto ip = resolve_template_index(templates);
  rec.input(mp);
  rec.input(ip);
  const auto manifest = data::load_manifest(mp);
  const auto index = cigm::load_template_index(ip);

  fs::create_directories(out);
  const auto table = out / "sweep.tsv";
  {
    std::ofstream f(table, std::ios::trunc);
    f << "alpha\tbeta\ttau\tauc\tmrr\tseed\n";
  }
  rec.output(table);
  std::vector<SweepRow> rows;
  std::size_t point = 0;
  for (double a : cfg.sweep.alpha)
    for (double b : cfg.sweep.beta)
      for (double t : cfg.sweep.tau) {
        auto variant = cfg;
        variant.geco.weights.alpha = a;
        variant.geco.weights.beta = b;
        variant.geco.weights.tau = t;
        const auto dir = out / ("point_" + std::to_string(point++));
        std::cerr << "sweep: alpha=" << a << " beta=" << b << " tau=" << t << '\n';
        // A failing point aborts the sweep; rows already in sweep.tsv stay on disk.
        model::train_geco(manifest, index, variant.geco.model, variant.geco.weights, variant.geco.train, dir);
        auto ck = model::GecoCheckpoint::load(dir / "geco.ckpt");
        model::GecoScorer scorer(ck, manifest, index, util::sha256_file(dir / "geco.ckpt"));
        const auto rep = run_protocol(variant, scorer, manifest);
        rep.write(dir / "eval_report.txt");
        SweepRow row{a, b, t, rep.auc, rep.mrr, cfg.seed};
        std::ofstream f(table, std::ios::app);
        f << fmt(a) << '\t' << fmt(b) << '\t' << fmt(t) << '\t' << fmt(rep.auc) << '\t' << fmt(rep.mrr) << '\t'
          << cfg.seed << '\n';
        rows.push_back(row);
      }
  rec.metrics()["points"] = rows.size();
  rec.finish();
  return rows;
}

}  // namespace geco::app
