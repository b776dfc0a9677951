#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geco/nn/parameters.hpp"

namespace geco::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation with bias correction; moments kept per named parameter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterSet<float>& params);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return steps_; }

  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  void restore(std::int64_t steps, std::map<std::string, Moments> state) {
    steps_ = steps;
    state_ = std::move(state);
  }

 private:
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace geco::nn
