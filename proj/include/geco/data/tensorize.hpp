#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>

#include "geco/data/image.hpp"
#include "geco/nn/autograd.hpp"

namespace geco::data {

// Packs equally sized images into a constant [N,3,S,S] tensor.
template <class T>
nn::Var<T> stack_images(std::span<const ItemImage> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const int s = images.front().size;
  const std::size_t per = 3 * static_cast<std::size_t>(s) * s;
  std::vector<T> values(per * images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size != s || images[i].pixels.size() != per)
      throw std::invalid_argument("stack_images: image " + images[i].item_id + " has a different size");
    std::transform(images[i].pixels.begin(), images[i].pixels.end(), values.begin() + i * per,
                   [](float v) { return static_cast<T>(v); });
  }
  return nn::Var<T>::constant({static_cast<std::int64_t>(images.size()), 3, s, s}, std::move(values));
}

}  // namespace geco::data
