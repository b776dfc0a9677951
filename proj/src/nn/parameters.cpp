#include "geco/nn/parameters.hpp"

#include <stdexcept>

namespace geco::nn {

template <class T>
Var<T>& ParameterSet<T>::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  index_[name] = params_.size();
  const auto count = static_cast<std::size_t>(numel(shape));
  params_.emplace_back(name, Var<T>::leaf(std::move(shape), std::vector<T>(count, T(0))));
  return params_.back().second;
}

template <class T>
Var<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].second;
}

template <class T>
const Var<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].second;
}

template <class T>
std::int64_t ParameterSet<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& [_, v] : params_) n += v.size();
  return n;
}

template <class T>
std::vector<Var<T>> ParameterSet<T>::vars() const {
  std::vector<Var<T>> out;
  out.reserve(params_.size());
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

template <class T>
void ParameterSet<T>::zero_grad() {
  for (auto& [_, v] : params_) {
    auto g = v.mutable_grad();
    std::fill(g.begin(), g.end(), T(0));
  }
}

template <class T>
void init_normal(Var<T>& v, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v.mutable_data()) x = static_cast<T>(dist(rng));
}

template <class T>
void init_uniform(Var<T>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v.mutable_data()) x = static_cast<T>(dist(rng));
}

template <class T>
void init_constant(Var<T>& v, double value) {
  for (auto& x : v.mutable_data()) x = static_cast<T>(value);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void init_normal(Var<float>&, double, std::mt19937_64&);
template void init_normal(Var<double>&, double, std::mt19937_64&);
template void init_uniform(Var<float>&, double, std::mt19937_64&);
template void init_uniform(Var<double>&, double, std::mt19937_64&);
template void init_constant(Var<float>&, double);
template void init_constant(Var<double>&, double);

}  // namespace geco::nn
