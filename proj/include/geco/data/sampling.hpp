#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geco/data/manifest.hpp"

namespace geco::data {

class ExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform draw from `pool` (default: every bottom in the manifest) minus the positives
// of `top_id`. Pure function of its arguments.
std::string sample_negative(const PairManifest& manifest, const std::string& top_id, std::uint64_t rng_seed);
std::string sample_negative(const PairManifest& manifest, const std::string& top_id, std::uint64_t rng_seed,
                            std::span<const std::string> pool);

// Up to `count` distinct negatives drawn uniformly without replacement from pool.
std::vector<std::string> sample_negatives(const PairManifest& manifest, const std::string& top_id,
                                          std::size_t count, std::uint64_t rng_seed,
                                          std::span<const std::string> pool);

struct Triplet {
  std::string pair_id;
  std::string top_id;
  std::string positive_id;
  std::string negative_id;
};

// One epoch of triplets, grouped into batches. Each pair of the split appears exactly once;
// negatives come from the split's bottoms. Order depends only on (manifest, seed).
std::vector<std::vector<Triplet>> batch_iter(const PairManifest& manifest, Split split, std::size_t batch_size,
                                             bool shuffle, std::uint64_t rng_seed);

// Decoded, normalised images keyed by item id; loads lazily and caches.
class ImageStore {
 public:
  ImageStore(const PairManifest& manifest, int image_size) : manifest_(&manifest), size_(image_size) {}

  const ItemImage& get(const std::string& item_id);
  // Registers an image that is not in the manifest (e.g. a generated template).
  void put(ItemImage image);
  bool contains(const std::string& item_id) const { return cache_.count(item_id) != 0; }
  int image_size() const { return size_; }
  const PairManifest& manifest() const { return *manifest_; }

 private:
  const PairManifest* manifest_;
  int size_;
  std::map<std::string, ItemImage> cache_;
};

struct Batch {
  std::vector<ItemImage> tops;
  std::vector<ItemImage> positive_bottoms;
  std::vector<ItemImage> negative_bottoms;
};

Batch materialize(std::span<const Triplet> triplets, ImageStore& store);

}  // namespace geco::data
