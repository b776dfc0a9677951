#include "geco/eval/grid.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace geco::eval {

namespace {

constexpr int kMargin = 6;
constexpr int kOutline = 3;

cv::Mat tile_bgr(std::span<const float> pixels, int size, int tile) {
  auto rgb = data::to_rgb8(pixels, size);
  cv::Mat mat(size, size, CV_8UC3, rgb.data());
  cv::Mat bgr;
  cv::cvtColor(mat, bgr, cv::COLOR_RGB2BGR);
  if (size != tile) cv::resize(bgr, bgr, {tile, tile}, 0, 0, cv::INTER_NEAREST);
  return bgr.clone();
}

}  // namespace

GridLayout render_retrieval_grid(const data::ItemImage& top, const cigm::Template& templ,
                                 const std::vector<std::pair<data::ItemImage, double>>& ranked,
                                 const std::string& positive_id, const std::filesystem::path& out) {
  if (ranked.empty()) throw std::invalid_argument("render_retrieval_grid: no ranked candidates");
  GridLayout layout;
  layout.tile_size = top.size;
  layout.tiles = 2 + static_cast<int>(ranked.size());
  layout.width = kMargin + layout.tiles * (layout.tile_size + kMargin);
  layout.height = layout.tile_size + 2 * kMargin;

  cv::Mat canvas(layout.height, layout.width, CV_8UC3, cv::Scalar(255, 255, 255));
  auto place = [&](int index, const cv::Mat& tile) {
    tile.copyTo(canvas(cv::Rect(kMargin + index * (layout.tile_size + kMargin), kMargin, layout.tile_size,
                                layout.tile_size)));
  };
  place(0, tile_bgr(top.pixels, top.size, layout.tile_size));
  place(1, tile_bgr(templ.pixels, templ.size, layout.tile_size));
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& img = ranked[i].first;
    const int index = 2 + static_cast<int>(i);
    place(index, tile_bgr(img.pixels, img.size, layout.tile_size));
    if (img.item_id == positive_id && layout.highlighted < 0) {
      layout.highlighted = index;
      const int x = kMargin + index * (layout.tile_size + kMargin);
      cv::rectangle(canvas, cv::Rect(x - kOutline, kMargin - kOutline, layout.tile_size + 2 * kOutline,
                                     layout.tile_size + 2 * kOutline),
                    cv::Scalar(0, 0, 255), kOutline);
    }
  }
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  if (!cv::imwrite(out.string(), canvas, {cv::IMWRITE_PNG_COMPRESSION, 9}))
    throw data::ImageError("cannot write grid " + out.string());
  return layout;
}

}  // namespace geco::eval
