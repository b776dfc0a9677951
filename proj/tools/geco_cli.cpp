#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geco/app/commands.hpp"
#include "geco/app/config.hpp"
#include "geco/model/geco.hpp"

namespace fs = std::filesystem;
using namespace geco;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string out;
  std::string device = "cpu";
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "global seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--device", c.device, "compute device (cpu)");
  cmd->add_option("--preset", c.preset, "named config preset: paper, fashionvc, taobao, toy");
  cmd->add_option("--set", c.set, "config override key.path=value (repeatable)");
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string list_json(const std::string& csv) {
  std::string out = "[";
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const auto item = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out += (out.size() > 1 ? "," : "") + item;
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out + "]";
}

app::ExperimentConfig build_config(const Common& c, std::vector<std::string> extra) {
  if (c.device != "cpu") throw app::ConfigError({"--device: only 'cpu' is supported, got '" + c.device + "'"});
  app::ConfigSources src;
  src.preset = c.preset;
  src.file = c.config;
  src.env = app::environment_overrides();
  src.overrides = c.set;
  if (c.seed) extra.push_back("seed=" + std::to_string(*c.seed));
  src.overrides.insert(src.overrides.end(), extra.begin(), extra.end());
  return app::load_config(src);
}

fs::path data_path(const std::string& flag, const app::ExperimentConfig& cfg) {
  return flag.empty() ? fs::path(cfg.dataset.manifest) : fs::path(flag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Two-stage generative compatibility pipeline: template generation and composed retrieval"};
  cli.require_subcommand(1);

  Common synth_c, cigm_c, tmpl_c, geco_c, siam_c, eval_c, abl_c, sweep_c;
  std::optional<int> pairs, image_size, epochs, grids;
  std::optional<double> alpha, beta, gamma, tau;
  std::string data, cigm_ckpt, templates, checkpoint, scorer = "geco", protocol, split, alphas, betas, taus;

  auto* synth = cli.add_subcommand("synth-data", "write the synthetic toy dataset");
  add_common(synth, synth_c);
  synth->add_option("--pairs", pairs, "number of (top, bottom) pairs");
  synth->add_option("--image-size", image_size, "image side in pixels");

  auto* train_cigm = cli.add_subcommand("train-cigm", "train the template generator");
  add_common(train_cigm, cigm_c);
  train_cigm->add_option("--data", data, "manifest file or dataset directory");
  train_cigm->add_option("--epochs", epochs);

  auto* gen = cli.add_subcommand("gen-templates", "generate one template per top");
  add_common(gen, tmpl_c);
  gen->add_option("--data", data, "manifest file or dataset directory");
  gen->add_option("--cigm", cigm_ckpt, "generator checkpoint")->required()->check(CLI::ExistingFile);

  auto* train_geco = cli.add_subcommand("train-geco", "train the compatibility model");
  add_common(train_geco, geco_c);
  train_geco->add_option("--data", data, "manifest file or dataset directory");
  train_geco->add_option("--templates", templates, "template index or directory");
  train_geco->add_option("--epochs", epochs);
  train_geco->add_option("--alpha", alpha);
  train_geco->add_option("--beta", beta);
  train_geco->add_option("--gamma", gamma);
  train_geco->add_option("--tau", tau);

  auto* train_siam = cli.add_subcommand("train-siamese", "train the siamese BPR baseline");
  add_common(train_siam, siam_c);
  train_siam->add_option("--data", data, "manifest file or dataset directory");
  train_siam->add_option("--epochs", epochs);

  auto* evaluate = cli.add_subcommand("evaluate", "score the test split and write an evaluation report");
  add_common(evaluate, eval_c);
  evaluate->add_option("--data", data, "manifest file or dataset directory");
  evaluate->add_option("--scorer", scorer, "geco, random or siamese")->check(CLI::IsMember({"geco", "random", "siamese"}));
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint (geco / siamese)");
  evaluate->add_option("--templates", templates, "template index or directory (geco)");
  evaluate->add_option("--protocol", protocol, "full or mgcm");
  evaluate->add_option("--split", split, "train, val or test");
  evaluate->add_option("--grids", grids, "number of retrieval grids to render (geco)");

  auto* ablate = cli.add_subcommand("ablate", "train and evaluate the BPR-only, InfoNCE-only and full variants");
  add_common(ablate, abl_c);
  ablate->add_option("--data", data, "manifest file or dataset directory");
  ablate->add_option("--templates", templates, "template index or directory")->required();
  ablate->add_option("--epochs", epochs);

  auto* sweep = cli.add_subcommand("sweep", "grid over alpha, beta and tau");
  add_common(sweep, sweep_c);
  sweep->add_option("--data", data, "manifest file or dataset directory");
  sweep->add_option("--templates", templates, "template index or directory")->required();
  sweep->add_option("--alphas", alphas, "comma-separated alpha values");
  sweep->add_option("--betas", betas, "comma-separated beta values");
  sweep->add_option("--taus", taus, "comma-separated tau values");
  sweep->add_option("--epochs", epochs);

  CLI11_PARSE(cli, argc, argv);

  try {
    if (synth->parsed()) {
      std::vector<std::string> extra;
      if (pairs) extra.push_back("dataset.synth_pairs=" + std::to_string(*pairs));
      if (image_size) extra.push_back("dataset.synth_image_size=" + std::to_string(*image_size));
      const auto cfg = build_config(synth_c, extra);
      const auto r = app::cmd_synth_data(cfg, synth_c.out);
      std::cout << r.manifest.string() << "\nmanifest digest " << r.digest << '\n';
    } else if (train_cigm->parsed()) {
      std::vector<std::string> extra;
      if (epochs) extra.push_back("cigm.train.epochs=" + std::to_string(*epochs));
      const auto cfg = build_config(cigm_c, extra);
      std::cout << app::cmd_train_cigm(cfg, data_path(data, cfg), cigm_c.out).string() << '\n';
    } else if (gen->parsed()) {
      const auto cfg = build_config(tmpl_c, {});
      std::cout << app::cmd_gen_templates(cfg, data_path(data, cfg), cigm_ckpt, tmpl_c.out).string() << '\n';
    } else if (train_geco->parsed()) {
      std::vector<std::string> extra;
      if (epochs) extra.push_back("geco.train.epochs=" + std::to_string(*epochs));
      if (alpha) extra.push_back("geco.weights.alpha=" + num(*alpha));
      if (beta) extra.push_back("geco.weights.beta=" + num(*beta));
      if (gamma) extra.push_back("geco.weights.gamma=" + num(*gamma));
      if (tau) extra.push_back("geco.weights.tau=" + num(*tau));
      const auto cfg = build_config(geco_c, extra);
      std::cout << app::cmd_train_geco(cfg, data_path(data, cfg), templates, geco_c.out).string() << '\n';
    } else if (train_siam->parsed()) {
      std::vector<std::string> extra;
      if (epochs) extra.push_back("siamese.epochs=" + std::to_string(*epochs));
      const auto cfg = build_config(siam_c, extra);
      std::cout << app::cmd_train_siamese(cfg, data_path(data, cfg), siam_c.out).string() << '\n';
    } else if (evaluate->parsed()) {
      std::vector<std::string> extra;
      if (!protocol.empty()) extra.push_back("eval.protocol=" + protocol);
      if (!split.empty()) extra.push_back("eval.split=" + split);
      if (grids) extra.push_back("eval.grids=" + std::to_string(*grids));
      const auto cfg = build_config(eval_c, extra);
      if (scorer != "random" && checkpoint.empty()) throw std::invalid_argument("--checkpoint is required for " + scorer);
      const auto rep = app::cmd_evaluate(cfg, data_path(data, cfg), {scorer, checkpoint, templates}, eval_c.out);
      std::cout << "protocol " << eval::to_string(rep.protocol) << "  scorer " << rep.scorer << "  n_queries "
                << rep.n_queries << "\nAUC " << num(rep.auc) << "\nMRR " << num(rep.mrr) << '\n';
    } else if (ablate->parsed()) {
      std::vector<std::string> extra;
      if (epochs) extra.push_back("geco.train.epochs=" + std::to_string(*epochs));
      const auto cfg = build_config(abl_c, extra);
      const auto rows = app::cmd_ablate(cfg, data_path(data, cfg), templates, abl_c.out);
      std::cout << "variant\tauc\tmrr\tdecomposition_rel_err\n";
      for (const auto& r : rows)
        std::cout << r.variant << '\t' << num(r.report.auc) << '\t' << num(r.report.mrr) << '\t'
                  << num(r.decomposition_rel_err) << '\n';
    } else if (sweep->parsed()) {
      std::vector<std::string> extra;
      if (!alphas.empty()) extra.push_back("sweep.alpha=" + list_json(alphas));
      if (!betas.empty()) extra.push_back("sweep.beta=" + list_json(betas));
      if (!taus.empty()) extra.push_back("sweep.tau=" + list_json(taus));
      if (epochs) extra.push_back("geco.train.epochs=" + std::to_string(*epochs));
      const auto cfg = build_config(sweep_c, extra);
      const auto rows = app::cmd_sweep(cfg, data_path(data, cfg), templates, sweep_c.out);
      std::cout << "alpha\tbeta\ttau\tauc\tmrr\tseed\n";
      for (const auto& r : rows)
        std::cout << num(r.alpha) << '\t' << num(r.beta) << '\t' << num(r.tau) << '\t' << num(r.auc) << '\t'
                  << num(r.mrr) << '\t' << r.seed << '\n';
    }
  } catch (const app::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const model::MissingTemplate& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
