#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "geco/app/commands.hpp"
#include "geco/app/config.hpp"
#include "geco/baselines/baselines.hpp"
#include "geco/cigm/losses.hpp"
#include "geco/data/manifest.hpp"
#include "geco/eval/metrics.hpp"
#include "geco/eval/protocol.hpp"
#include "geco/model/losses.hpp"
#include "geco/util/hash.hpp"

namespace py = pybind11;
using namespace geco;

namespace {

// (top_id, positive_id, [(bottom_id, score), ...]) tuples from Python
using QueryTuple = std::tuple<std::string, std::string, std::vector<std::pair<std::string, double>>>;

std::vector<eval::ScoredQuery> to_queries(const std::vector<QueryTuple>& in) {
  std::vector<eval::ScoredQuery> out;
  out.reserve(in.size());
  for (const auto& [top, pos, cands] : in) out.push_back({top, pos, cands});
  return out;
}

app::ExperimentConfig config_from_text(const std::string& text) {
  return app::config_from_json(nlohmann::json::parse(text));
}

py::dict report_dict(const eval::EvalReport& r) {
  py::dict d;
  d["protocol"] = eval::to_string(r.protocol);
  d["scorer"] = r.scorer;
  d["split"] = r.split;
  d["auc"] = r.auc;
  d["mrr"] = r.mrr;
  d["n_queries"] = r.n_queries;
  d["auc_comparisons"] = r.auc_comparisons;
  d["seed"] = r.seed;
  d["config_hash"] = r.config_hash;
  d["dataset_digest"] = r.dataset_digest;
  return d;
}

}  // namespace

PYBIND11_MODULE(_geco, m) {
  m.doc() = "Generative compatibility model: losses, metrics, config and pipeline commands.";

  py::register_exception<app::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<eval::MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<model::MissingTemplate>(m, "MissingTemplate", PyExc_LookupError);

  m.def("sha256_hex", [](const std::string& s) { return util::sha256_hex(s); });
  m.def("derive_seed", &util::derive_seed, py::arg("seed"), py::arg("label"));

  m.def("bpr_loss", &model::bpr_loss, py::arg("m_pos"), py::arg("m_neg"));
  m.def(
      "info_nce_loss",
      [](double m_pos, const std::vector<double>& negatives, double tau, bool canonical) {
        return model::info_nce_loss(m_pos, negatives, tau,
                                    canonical ? model::InfoNceForm::canonical : model::InfoNceForm::paper);
      },
      py::arg("m_pos"), py::arg("negatives"), py::arg("tau"), py::arg("canonical") = false);
  m.def("reg_loss", [](const std::vector<double>& v) { return model::reg_loss(v); });
  m.def(
      "generator_loss",
      [](const std::vector<double>& d_fake, const std::vector<float>& templ, const std::vector<float>& gt,
         double lambda) { return cigm::generator_loss(d_fake, templ, gt, lambda); },
      py::arg("d_fake"), py::arg("template"), py::arg("ground_truth"), py::arg("lam"));
  m.def(
      "discriminator_loss",
      [](const std::vector<double>& real, const std::vector<double>& fake) {
        return cigm::discriminator_loss(real, fake);
      },
      py::arg("d_real"), py::arg("d_fake"));

  m.def("auc_metric", [](const std::vector<QueryTuple>& q) { return eval::auc_metric(to_queries(q)); });
  m.def("mrr_metric", [](const std::vector<QueryTuple>& q) { return eval::mrr_metric(to_queries(q)); });
  m.def("random_score", &baselines::random_score, py::arg("seed"), py::arg("top_id"), py::arg("bottom_id"));

  m.def("default_config", [] { return app::default_config_json().dump(); });
  m.def("preset", [](const std::string& name) { return app::preset_json(name).dump(); });
  m.def("config_hash", [](const std::string& text) { return config_from_text(text).hash(); });
  m.def("resolve_config", [](const std::string& text) { return config_from_text(text).to_json().dump(); });

  m.def(
      "synth_data",
      [](const std::string& config, const std::filesystem::path& out) {
        const auto r = app::cmd_synth_data(config_from_text(config), out);
        return py::make_tuple(r.manifest, r.digest);
      },
      py::arg("config"), py::arg("out"));
  m.def(
      "manifest_summary",
      [](const std::filesystem::path& path) {
        const auto mf = data::load_manifest(app::resolve_manifest_path(path));
        py::dict d;
        d["pairs"] = mf.pairs().size();
        d["tops"] = mf.count(data::Category::top);
        d["bottoms"] = mf.count(data::Category::bottom);
        d["digest"] = mf.digest();
        return d;
      },
      py::arg("path"));
  m.def(
      "evaluate",
      [](const std::string& config, const std::filesystem::path& manifest, const std::string& kind,
         const std::filesystem::path& checkpoint, const std::filesystem::path& templates,
         const std::filesystem::path& out) {
        return report_dict(app::cmd_evaluate(config_from_text(config), manifest, {kind, checkpoint, templates}, out));
      },
      py::arg("config"), py::arg("manifest"), py::arg("kind") = "random", py::arg("checkpoint") = "",
      py::arg("templates") = "", py::arg("out"));
}
