#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "geco/data/manifest.hpp"

namespace geco::data {

inline constexpr int kPaletteSize = 12;

// Evenly spaced hues (30 degrees apart) as 8-bit RGB.
const std::array<std::array<unsigned char, 3>, kPaletteSize>& toy_palette();

// Writes a toy paired dataset to out_dir:
//   images/top_NNNNN.png     solid rectangle of hue h on a white field
//   images/bottom_NNNNN.png  solid trapezoid of the same hue h
//   manifest.tsv             pairs split 70/15/15 (seeded shuffle)
//   synth_hues.tsv           item_id -> palette index (test/oracle metadata)
// Shapes are jittered per item, hues drawn uniformly from the palette.
PairManifest synth_toy_dataset(int n_pairs, int image_size, std::uint64_t rng_seed,
                               const std::filesystem::path& out_dir);

std::map<std::string, int> load_synth_hues(const std::filesystem::path& dataset_dir);

}  // namespace geco::data
