#include "geco/nn/adam.hpp"

#include <cmath>

namespace geco::nn {

void Adam::step(ParameterSet<float>& params) {
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const float step = static_cast<float>(cfg_.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float eps = static_cast<float>(cfg_.eps);
  for (const auto& [name, var] : params.items()) {
    auto& mom = state_[name];
    const auto n = static_cast<std::size_t>(var.size());
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0f);
      mom.v.assign(n, 0.0f);
    }
    Var<float> handle = var;
    auto p = handle.mutable_data();
    auto g = var.grad();
    if (g.size() != n) continue;
    for (std::size_t i = 0; i < n; ++i) {
      mom.m[i] = b1 * mom.m[i] + (1.0f - b1) * g[i];
      mom.v[i] = b2 * mom.v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step * mom.m[i] / (std::sqrt(mom.v[i] * inv_c2) + eps);
    }
  }
}

}  // namespace geco::nn
