#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "geco/data/image.hpp"
#include "geco/nn/autograd.hpp"

namespace testutil {

inline geco::data::ItemImage random_image(const std::string& id, int size, std::uint64_t seed,
                                          geco::data::Category cat = geco::data::Category::top) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  geco::data::ItemImage img{id, cat, size, std::vector<float>(3 * static_cast<std::size_t>(size) * size)};
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

template <class T>
geco::nn::Var<T> random_tensor(geco::nn::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(geco::nn::numel(shape)));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return geco::nn::Var<T>::constant(std::move(shape), std::move(v));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("geco_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
