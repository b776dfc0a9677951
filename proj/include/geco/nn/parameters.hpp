#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "geco/nn/autograd.hpp"

namespace geco::nn {

// Named trainable leaves in registration order. Names are unique.
template <class T>
class ParameterSet {
 public:
  Var<T>& add(const std::string& name, Shape shape);
  Var<T>& get(const std::string& name);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::int64_t scalar_count() const;
  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  std::vector<Var<T>> vars() const;

  void zero_grad();

  // Copies every value (with conversion) from a set with identical names and shapes.
  template <class U>
  void copy_from(const ParameterSet<U>& other);

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

// N(0, stddev)
template <class T>
void init_normal(Var<T>& v, double stddev, std::mt19937_64& rng);
// U(-bound, bound)
template <class T>
void init_uniform(Var<T>& v, double bound, std::mt19937_64& rng);
template <class T>
void init_constant(Var<T>& v, double value);

template <class T>
template <class U>
void ParameterSet<T>::copy_from(const ParameterSet<U>& other) {
  for (auto& [name, var] : params_) {
    const auto& src = other.get(name);
    if (src.shape() != var.shape())
      throw std::invalid_argument("copy_from: shape mismatch for " + name);
    auto dst = var.mutable_data();
    auto in = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(in[i]);
  }
}

}  // namespace geco::nn
