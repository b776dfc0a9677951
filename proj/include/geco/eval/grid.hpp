#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "geco/cigm/cigm.hpp"
#include "geco/data/image.hpp"

namespace geco::eval {

struct GridLayout {
  int tiles = 0;
  int tile_size = 0;
  int width = 0;
  int height = 0;
  int highlighted = -1;  // tile index of the outlined positive, -1 if not retrieved
};

// One strip: top, template, then the ranked bottoms left to right. The positive is outlined
// in red. Tiles are resized to the top's size. Written as PNG.
GridLayout render_retrieval_grid(const data::ItemImage& top, const cigm::Template& templ,
                                 const std::vector<std::pair<data::ItemImage, double>>& ranked,
                                 const std::string& positive_id, const std::filesystem::path& out);

}  // namespace geco::eval
