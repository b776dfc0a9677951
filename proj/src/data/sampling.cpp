#include "geco/data/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "geco/util/hash.hpp"

namespace geco::data {

namespace {

std::vector<std::string> complement(const PairManifest& m, const std::string& top_id,
                                    std::span<const std::string> pool) {
  std::vector<std::string> out;
  const auto& pos = m.positives_of(top_id);
  for (const auto& b : pool)
    if (!pos.count(b)) out.push_back(b);
  return out;
}

}  // namespace

std::string sample_negative(const PairManifest& manifest, const std::string& top_id, std::uint64_t rng_seed) {
  const auto all = manifest.item_ids(Category::bottom);
  return sample_negative(manifest, top_id, rng_seed, all);
}

std::string sample_negative(const PairManifest& manifest, const std::string& top_id, std::uint64_t rng_seed,
                            std::span<const std::string> pool) {
  if (pool.empty()) throw ExhaustedError("no candidate bottoms to sample a negative for " + top_id);
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const auto& pos = manifest.positives_of(top_id);
  // Rejection first; the catalogue is normally much larger than one top's positives.
  for (int attempt = 0; attempt < 32; ++attempt) {
    const auto& b = pool[pick(rng)];
    if (!pos.count(b)) return b;
  }
  auto rest = complement(manifest, top_id, pool);
  if (rest.empty()) throw ExhaustedError("every candidate bottom is a positive for top " + top_id);
  std::uniform_int_distribution<std::size_t> pick_rest(0, rest.size() - 1);
  return rest[pick_rest(rng)];
}

std::vector<std::string> sample_negatives(const PairManifest& manifest, const std::string& top_id,
                                          std::size_t count, std::uint64_t rng_seed,
                                          std::span<const std::string> pool) {
  auto rest = complement(manifest, top_id, pool);
  if (rest.size() < count)
    throw ExhaustedError("need " + std::to_string(count) + " negatives for top " + top_id + ", only " +
                         std::to_string(rest.size()) + " available");
  std::mt19937_64 rng(rng_seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
    std::swap(rest[i], rest[pick(rng)]);
  }
  rest.resize(count);
  return rest;
}

std::vector<std::vector<Triplet>> batch_iter(const PairManifest& manifest, Split split, std::size_t batch_size,
                                             bool shuffle, std::uint64_t rng_seed) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch_size must be positive");
  auto order = manifest.split_indices(split);
  if (order.empty())
    throw std::invalid_argument("batch_iter: split " + std::string(to_string(split)) + " is empty");
  if (shuffle) {
    std::mt19937_64 rng(util::derive_seed(rng_seed, "batch-order"));
    std::shuffle(order.begin(), order.end(), rng);
  }
  const auto pool = manifest.item_ids(Category::bottom, split);
  const std::uint64_t neg_seed = util::derive_seed(rng_seed, "batch-negatives");

  std::vector<std::vector<Triplet>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<Triplet> batch;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      const auto& p = manifest.pairs()[order[i]];
      batch.push_back({p.pair_id, p.top_id, p.bottom_id,
                       sample_negative(manifest, p.top_id, util::keyed_seed(neg_seed, p.pair_id), pool)});
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

const ItemImage& ImageStore::get(const std::string& item_id) {
  auto it = cache_.find(item_id);
  if (it != cache_.end()) return it->second;
  const auto& rec = manifest_->items().at(item_id);
  auto img = load_image(manifest_->image_path(item_id), size_, item_id, rec.category);
  return cache_.emplace(item_id, std::move(img)).first->second;
}

void ImageStore::put(ItemImage image) {
  if (image.size != size_) throw std::invalid_argument("ImageStore: image size mismatch for " + image.item_id);
  auto id = image.item_id;
  cache_.insert_or_assign(std::move(id), std::move(image));
}

Batch materialize(std::span<const Triplet> triplets, ImageStore& store) {
  Batch b;
  for (const auto& t : triplets) {
    b.tops.push_back(store.get(t.top_id));
    b.positive_bottoms.push_back(store.get(t.positive_id));
    b.negative_bottoms.push_back(store.get(t.negative_id));
  }
  return b;
}

}  // namespace geco::data
