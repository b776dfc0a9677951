#include "geco/data/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace geco::data {

std::string_view to_string(Category c) { return c == Category::top ? "top" : "bottom"; }

Category parse_category(std::string_view s) {
  if (s == "top") return Category::top;
  if (s == "bottom") return Category::bottom;
  throw std::invalid_argument("unknown category '" + std::string(s) + "'");
}

ItemImage load_image(const std::filesystem::path& path, int size, std::string item_id,
                     Category category) {
  if (size <= 0) throw std::invalid_argument("load_image: size must be positive");
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ImageError("cannot decode image " + path.string());
  if (bgr.rows == 0 || bgr.cols == 0) throw ImageError("zero-dimension image " + path.string());

  cv::Mat resized;
  if (bgr.rows == size && bgr.cols == size)
    resized = bgr;
  else
    cv::resize(bgr, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);

  ItemImage img;
  img.item_id = std::move(item_id);
  img.category = category;
  img.size = size;
  img.pixels.resize(3 * static_cast<std::size_t>(size) * size);
  const std::size_t plane = img.channel_stride();
  for (int y = 0; y < size; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x) {
      const std::size_t at = static_cast<std::size_t>(y) * size + x;
      for (int c = 0; c < 3; ++c)  // BGR -> RGB
        img.pixels[c * plane + at] = static_cast<float>(row[x][2 - c]) / 127.5f - 1.0f;
    }
  }
  return img;
}

std::vector<unsigned char> to_rgb8(std::span<const float> pixels, int size) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (pixels.size() != 3 * plane) throw std::invalid_argument("to_rgb8: pixel count mismatch");
  std::vector<unsigned char> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::round((pixels[c * plane + i] + 1.0f) * 127.5f);
      out[3 * i + c] = static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f));
    }
  return out;
}

void save_image_png(const std::filesystem::path& path, std::span<const float> pixels, int size) {
  auto rgb = to_rgb8(pixels, size);
  cv::Mat mat(size, size, CV_8UC3, rgb.data());
  cv::Mat bgr;
  cv::cvtColor(mat, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw ImageError("cannot write image " + path.string());
}

}  // namespace geco::data
