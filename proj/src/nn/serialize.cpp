#include "geco/nn/serialize.hpp"

#include <stdexcept>

namespace geco::nn {

void save_params(util::Archive& ar, const std::string& prefix, const ParameterSet<float>& params) {
  for (const auto& [name, var] : params.items()) ar.put(prefix + "/" + name, var.shape(), var.data());
}

void load_params(const util::Archive& ar, const std::string& prefix, ParameterSet<float>& params) {
  for (const auto& [name, var] : params.items()) {
    const auto key = prefix + "/" + name;
    if (!ar.has(key)) throw std::runtime_error("checkpoint is missing parameter " + key);
    if (ar.shape(key) != var.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + key + ": " + shape_str(ar.shape(key)) +
                               " vs " + shape_str(var.shape()));
    auto values = ar.get_f32(key);
    Var<float> handle = var;
    std::copy(values.begin(), values.end(), handle.mutable_data().begin());
  }
}

void save_adam(util::Archive& ar, const std::string& prefix, const Adam& opt) {
  const auto& cfg = opt.config();
  ar.meta[prefix] = {{"steps", opt.step_count()},
                     {"lr", cfg.lr},
                     {"beta1", cfg.beta1},
                     {"beta2", cfg.beta2},
                     {"eps", cfg.eps}};
  for (const auto& [name, mom] : opt.state()) {
    const std::vector<std::int64_t> shape{static_cast<std::int64_t>(mom.m.size())};
    ar.put(prefix + "/m/" + name, shape, std::span<const float>(mom.m));
    ar.put(prefix + "/v/" + name, shape, std::span<const float>(mom.v));
  }
}

void load_adam(const util::Archive& ar, const std::string& prefix, Adam& opt) {
  const auto& meta = ar.meta.at(prefix);
  AdamConfig cfg;
  cfg.lr = meta.at("lr").get<double>();
  cfg.beta1 = meta.at("beta1").get<double>();
  cfg.beta2 = meta.at("beta2").get<double>();
  cfg.eps = meta.at("eps").get<double>();
  opt = Adam(cfg);
  std::map<std::string, Adam::Moments> state;
  const std::string m_prefix = prefix + "/m/";
  for (const auto& key : ar.names()) {
    if (key.rfind(m_prefix, 0) != 0) continue;
    const auto name = key.substr(m_prefix.size());
    state[name] = {ar.get_f32(key), ar.get_f32(prefix + "/v/" + name)};
  }
  opt.restore(meta.at("steps").get<std::int64_t>(), std::move(state));
}

}  // namespace geco::nn
