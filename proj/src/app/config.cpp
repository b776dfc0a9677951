#include "geco/app/config.hpp"

#include <cstdlib>
#include <fstream>

#include "geco/util/hash.hpp"

extern char** environ;

namespace geco::app {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() == 1 ? "" : "s") + "):";
  for (const auto& p : problems) msg += "\n  " + p;
  return msg;
}

nlohmann::json without_seed(nlohmann::json j) {
  j.erase("seed");
  return j;
}

void unknown_keys(const nlohmann::json& input, const nlohmann::json& reference, const std::string& path,
                  std::vector<std::string>& problems) {
  if (!input.is_object()) return;
  for (const auto& [key, value] : input.items()) {
    const auto full = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) {
      problems.push_back(full + ": unknown key");
      continue;
    }
    const auto& ref = reference.at(key);
    if (ref.is_object()) {
      if (!value.is_object()) problems.push_back(full + ": expected an object");
      else unknown_keys(value, ref, full, problems);
    } else if (ref.is_number() && !value.is_number()) {
      problems.push_back(full + ": expected a number");
    } else if (ref.is_string() && !value.is_string()) {
      problems.push_back(full + ": expected a string");
    } else if (ref.is_array() && !value.is_array()) {
      problems.push_back(full + ": expected a list");
    }
  }
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["dataset"] = {{"manifest", dataset.manifest},
                  {"synth_pairs", dataset.synth_pairs},
                  {"synth_image_size", dataset.synth_image_size}};
  j["cigm"] = {{"generator", cigm.generator},
               {"discriminator", cigm.discriminator},
               {"train", without_seed(cigm.train)}};
  j["geco"] = {{"model", geco.model}, {"weights", geco.weights}, {"train", without_seed(geco.train)}};
  j["siamese"] = without_seed(siamese);
  j["eval"] = {{"protocol", eval::to_string(eval.protocol)},
               {"n_auc", eval.n_auc},
               {"n_mrr", eval.n_mrr},
               {"grid_k", eval.grid_k},
               {"grids", eval.grids},
               {"split", eval.split}};
  j["sweep"] = {{"alpha", sweep.alpha}, {"beta", sweep.beta}, {"tau", sweep.tau}};
  return j;
}

std::string ExperimentConfig::canonical() const { return to_json().dump(); }

std::string ExperimentConfig::hash() const { return util::sha256_hex(canonical()); }

std::uint64_t ExperimentConfig::stage_seed(const std::string& stage) const { return util::derive_seed(seed, stage); }

ExperimentConfig ExperimentConfig::resolve() const {
  ExperimentConfig out = *this;
  out.cigm.train.seed = stage_seed("cigm");
  out.geco.train.seed = stage_seed("geco");
  out.siamese.seed = stage_seed("siamese");
  return out;
}

nlohmann::json default_config_json() { return ExperimentConfig{}.to_json(); }

ExperimentConfig config_from_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"<root>: expected an object"});
  const auto reference = default_config_json();
  unknown_keys(j, reference, "", problems);

  auto doc = reference;
  doc.merge_patch(j);
  ExperimentConfig c;
  auto section = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(std::string(name) + ": " + e.what());
    }
  };
  section("seed", [&] { c.seed = doc.at("seed").get<std::uint64_t>(); });
  section("dataset", [&] {
    c.dataset.manifest = doc["dataset"].at("manifest").get<std::string>();
    c.dataset.synth_pairs = doc["dataset"].at("synth_pairs").get<int>();
    c.dataset.synth_image_size = doc["dataset"].at("synth_image_size").get<int>();
  });
  section("cigm.generator", [&] { c.cigm.generator = doc["cigm"]["generator"].get<cigm::GeneratorConfig>(); });
  section("cigm.discriminator",
          [&] { c.cigm.discriminator = doc["cigm"]["discriminator"].get<cigm::DiscriminatorConfig>(); });
  section("cigm.train", [&] { c.cigm.train = doc["cigm"]["train"].get<cigm::CigmTrainConfig>(); });
  section("geco.model", [&] { c.geco.model = doc["geco"]["model"].get<model::GecoConfig>(); });
  section("geco.weights", [&] { c.geco.weights = doc["geco"]["weights"].get<model::LossWeights>(); });
  section("geco.train", [&] { c.geco.train = doc["geco"]["train"].get<model::GecoTrainConfig>(); });
  section("siamese", [&] { c.siamese = doc["siamese"].get<baselines::SiameseBprConfig>(); });
  section("eval.protocol", [&] { c.eval.protocol = eval::parse_protocol(doc["eval"].at("protocol").get<std::string>()); });
  section("eval", [&] {
    c.eval.n_auc = doc["eval"].at("n_auc").get<int>();
    c.eval.n_mrr = doc["eval"].at("n_mrr").get<int>();
    c.eval.grid_k = doc["eval"].at("grid_k").get<int>();
    c.eval.grids = doc["eval"].at("grids").get<int>();
    c.eval.split = doc["eval"].at("split").get<std::string>();
  });
  section("sweep", [&] {
    c.sweep.alpha = doc["sweep"].at("alpha").get<std::vector<double>>();
    c.sweep.beta = doc["sweep"].at("beta").get<std::vector<double>>();
    c.sweep.tau = doc["sweep"].at("tau").get<std::vector<double>>();
  });
  // sections that failed to parse keep their defaults, so the range checks below still run

  auto check = [&](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) problems.push_back(key + ": " + msg);
  };
  check(c.dataset.synth_pairs >= 4, "dataset.synth_pairs", "must be >= 4");
  check(c.dataset.synth_image_size >= 16, "dataset.synth_image_size", "must be >= 16");

  const auto& g = c.cigm.generator;
  check(g.image_size >= 16 && is_pow2(g.image_size), "cigm.generator.image_size", "must be a power of two >= 16");
  check(g.depth >= 2 && g.depth <= 16 && (g.image_size >> g.depth) >= 1 && (g.image_size % (1 << g.depth)) == 0,
        "cigm.generator.depth", "must be >= 2 with image_size / 2^depth >= 1");
  check(g.base_channels >= 1, "cigm.generator.base_channels", "must be >= 1");
  check(g.max_channels >= g.base_channels, "cigm.generator.max_channels", "must be >= base_channels");
  check(g.noise_dim >= 1, "cigm.generator.noise_dim", "must be >= 1");
  const auto& d = c.cigm.discriminator;
  check(d.base_channels >= 1, "cigm.discriminator.base_channels", "must be >= 1");
  check(d.max_channels >= d.base_channels, "cigm.discriminator.max_channels", "must be >= base_channels");
  check(d.downsample_stages >= 1 && (g.image_size >> d.downsample_stages) >= 3,
        "cigm.discriminator.downsample_stages", "must be >= 1 and leave a patch grid of at least 1x1");
  const auto& ct = c.cigm.train;
  check(ct.epochs >= 0, "cigm.train.epochs", "must be >= 0");
  check(ct.lr > 0, "cigm.train.lr", "must be > 0");
  check(ct.batch_size >= 1, "cigm.train.batch_size", "must be >= 1");
  check(ct.lambda >= 0, "cigm.train.lambda", "must be >= 0");
  check(ct.beta1 >= 0 && ct.beta1 < 1, "cigm.train.beta1", "must be in [0,1)");
  check(ct.beta2 >= 0 && ct.beta2 < 1, "cigm.train.beta2", "must be in [0,1)");
  check(ct.checkpoint_every >= 0, "cigm.train.checkpoint_every", "must be >= 0");

  auto check_encoder = [&](const model::EncoderConfig& e, const std::string& prefix) {
    check(e.feature_dim >= 1, prefix + ".feature_dim", "must be >= 1");
    check(e.variant != model::EncoderVariant::resnet18 || e.feature_dim == 512, prefix + ".feature_dim",
          "must be 512 for the resnet18 variant");
    check(e.tiny_channels.size() == 3, prefix + ".tiny_channels", "needs exactly 3 entries");
    for (int ch : e.tiny_channels) check(ch >= 1, prefix + ".tiny_channels", "entries must be >= 1");
    check(e.pretrained_path.empty() || std::filesystem::exists(e.pretrained_path), prefix + ".pretrained_path",
          "file does not exist");
  };
  const auto& gm = c.geco.model;
  check_encoder(gm.encoder, "geco.model.encoder");
  check(gm.hidden_dim >= 1, "geco.model.hidden_dim", "must be >= 1");
  check(gm.embed_dim >= 1, "geco.model.embed_dim", "must be >= 1");
  check(gm.image_size >= 8, "geco.model.image_size", "must be >= 8");
  const auto& w = c.geco.weights;
  check(w.alpha >= 0, "geco.weights.alpha", "must be >= 0");
  check(w.beta >= 0, "geco.weights.beta", "must be >= 0");
  check(w.gamma >= 0, "geco.weights.gamma", "must be >= 0");
  check(w.tau > 0, "geco.weights.tau", "must be > 0");
  check(!(w.alpha == 0 && w.beta == 0), "geco.weights.alpha", "alpha and beta cannot both be 0");
  const auto& gt = c.geco.train;
  check(gt.epochs >= 0, "geco.train.epochs", "must be >= 0");
  check(gt.lr > 0, "geco.train.lr", "must be > 0");
  check(gt.batch_size >= 2, "geco.train.batch_size", "must be >= 2");
  check(gt.step_epochs >= 1, "geco.train.step_epochs", "must be >= 1");
  check(gt.step_factor > 0, "geco.train.step_factor", "must be > 0");

  const auto& s = c.siamese;
  check_encoder(s.encoder, "siamese.encoder");
  check(s.embed_dim >= 1, "siamese.embed_dim", "must be >= 1");
  check(s.image_size >= 8, "siamese.image_size", "must be >= 8");
  check(s.lr > 0, "siamese.lr", "must be > 0");
  check(s.epochs >= 0, "siamese.epochs", "must be >= 0");
  check(s.batch_size >= 1, "siamese.batch_size", "must be >= 1");

  check(c.eval.n_auc >= 1, "eval.n_auc", "must be >= 1");
  check(c.eval.n_mrr >= 1, "eval.n_mrr", "must be >= 1");
  check(c.eval.grid_k >= 1, "eval.grid_k", "must be >= 1");
  check(c.eval.grids >= 0, "eval.grids", "must be >= 0");
  check(c.eval.split == "train" || c.eval.split == "val" || c.eval.split == "test", "eval.split",
        "must be train, val or test");

  check(!c.sweep.alpha.empty(), "sweep.alpha", "must not be empty");
  check(!c.sweep.beta.empty(), "sweep.beta", "must not be empty");
  check(!c.sweep.tau.empty(), "sweep.tau", "must not be empty");
  for (double a : c.sweep.alpha) check(a >= 0, "sweep.alpha", "values must be >= 0");
  for (double b : c.sweep.beta) check(b >= 0, "sweep.beta", "values must be >= 0");
  for (double t : c.sweep.tau) check(t > 0, "sweep.tau", "values must be > 0");

  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

std::vector<std::string> preset_names() { return {"paper", "fashionvc", "taobao", "toy"}; }

nlohmann::json preset_json(const std::string& name) {
  using nlohmann::json;
  if (name == "paper") return json::object();
  if (name == "fashionvc") return {{"geco", {{"weights", {{"alpha", 0.25}, {"beta", 0.25}, {"tau", 0.5}}}}}};
  if (name == "taobao") return {{"geco", {{"weights", {{"alpha", 0.5}, {"beta", 1.0}, {"tau", 0.5}}}}}};
  if (name == "toy") {
    const json tiny = {{"variant", "tiny"}, {"feature_dim", 512}, {"tiny_channels", {16, 32, 64}}};
    return {
        {"dataset", {{"synth_pairs", 200}, {"synth_image_size", 32}}},
        {"cigm",
         {{"generator", {{"image_size", 32}, {"depth", 5}, {"base_channels", 16}, {"max_channels", 128}, {"noise_dim", 16}}},
          {"discriminator", {{"base_channels", 16}, {"downsample_stages", 2}, {"max_channels", 128}}},
          {"train", {{"epochs", 30}, {"batch_size", 16}}}}},
        {"geco",
         {{"model", {{"encoder", tiny}, {"image_size", 32}}},
          {"train", {{"epochs", 20}, {"lr", 1e-3}, {"batch_size", 16}}}}},
        {"siamese", {{"encoder", tiny}, {"image_size", 32}, {"epochs", 20}, {"lr", 1e-3}, {"batch_size", 16}}},
    };
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError({"preset: unknown preset '" + name + "' (known: " + known + ")"});
}

void apply_override(nlohmann::json& doc, const std::string& dotted_path, const std::string& text) {
  if (dotted_path.empty()) throw ConfigError({"<override>: empty key"});
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_path.find('.', start);
    const auto key = dotted_path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError({dotted_path + ": '" + key + "' is not a section"});
    start = dot + 1;
  }
}

std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    if (entry.rfind("GECO__", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return out;
}

ExperimentConfig load_config(const ConfigSources& sources) {
  auto doc = default_config_json();
  if (!sources.preset.empty()) doc.merge_patch(preset_json(sources.preset));
  if (!sources.file.empty()) {
    std::ifstream in(sources.file);
    if (!in) throw ConfigError({"--config: cannot open " + sources.file.string()});
    try {
      doc.merge_patch(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError({sources.file.string() + ": " + e.what()});
    }
  }
  // GECO__geco__train__epochs=20 sets geco.train.epochs.
  for (const auto& [name, value] : sources.env) {
    std::string path = name.substr(6);
    for (std::size_t p = path.find("__"); p != std::string::npos; p = path.find("__", p + 1)) path.replace(p, 2, ".");
    apply_override(doc, path, value);
  }
  for (const auto& ov : sources.overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError({ov + ": expected key=value"});
    apply_override(doc, ov.substr(0, eq), ov.substr(eq + 1));
  }
  return config_from_json(doc);
}

}  // namespace geco::app
