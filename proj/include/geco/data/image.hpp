#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace geco::data {

enum class Category { top, bottom };

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

// 3 x size x size, channel-major (RGB), values in [-1, 1].
struct ItemImage {
  std::string item_id;
  Category category = Category::top;
  int size = 0;
  std::vector<float> pixels;

  std::size_t channel_stride() const { return static_cast<std::size_t>(size) * size; }
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decodes an 8-bit raster (PNG, JPEG, BMP, ...), bilinear-resizes to size x size and maps
// each 8-bit value v to v / 127.5 - 1.
ItemImage load_image(const std::filesystem::path& path, int size, std::string item_id = {},
                     Category category = Category::top);

// Inverse map with rounding and clamping; always 8-bit RGB PNG.
void save_image_png(const std::filesystem::path& path, std::span<const float> pixels, int size);

// Converts [-1,1] CHW floats to interleaved 8-bit RGB.
std::vector<unsigned char> to_rgb8(std::span<const float> pixels, int size);

}  // namespace geco::data
