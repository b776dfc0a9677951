#include "geco/data/synth.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "geco/util/hash.hpp"

namespace geco::data {

const std::array<std::array<unsigned char, 3>, kPaletteSize>& toy_palette() {
  static const auto palette = [] {
    std::array<std::array<unsigned char, 3>, kPaletteSize> p{};
    for (int i = 0; i < kPaletteSize; ++i) {
      // HSV -> RGB with S = 0.85, V = 0.9
      const double h = 360.0 * i / kPaletteSize, s = 0.85, v = 0.9;
      const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60.0, 2.0) - 1)), m = v - c;
      double r = 0, g = 0, b = 0;
      switch (static_cast<int>(h / 60.0)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
      }
      p[i] = {static_cast<unsigned char>(std::lround((r + m) * 255)),
              static_cast<unsigned char>(std::lround((g + m) * 255)),
              static_cast<unsigned char>(std::lround((b + m) * 255))};
    }
    return p;
  }();
  return palette;
}

namespace {

std::string padded(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", prefix, i);
  return buf;
}

cv::Scalar bgr(int hue) {
  const auto& c = toy_palette()[hue];
  return {double(c[2]), double(c[1]), double(c[0])};
}

void write_png(const std::filesystem::path& path, const cv::Mat& img) {
  if (!cv::imwrite(path.string(), img, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw std::runtime_error("cannot write " + path.string());
}

cv::Mat draw_top(int size, int hue, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const double w = (0.45 + 0.3 * u(rng)) * size, h = (0.4 + 0.3 * u(rng)) * size;
  const double cx = size * (0.5 + 0.2 * (u(rng) - 0.5)), cy = size * (0.5 + 0.2 * (u(rng) - 0.5));
  cv::rectangle(img, cv::Point(int(cx - w / 2), int(cy - h / 2)), cv::Point(int(cx + w / 2), int(cy + h / 2)),
                bgr(hue), cv::FILLED, cv::LINE_8);
  return img;
}

cv::Mat draw_bottom(int size, int hue, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const double top_w = (0.3 + 0.2 * u(rng)) * size, bottom_w = (0.6 + 0.25 * u(rng)) * size;
  const double h = (0.55 + 0.25 * u(rng)) * size;
  const double cx = size * (0.5 + 0.16 * (u(rng) - 0.5)), cy = size * (0.5 + 0.16 * (u(rng) - 0.5));
  const cv::Point pts[4] = {{int(cx - top_w / 2), int(cy - h / 2)},
                            {int(cx + top_w / 2), int(cy - h / 2)},
                            {int(cx + bottom_w / 2), int(cy + h / 2)},
                            {int(cx - bottom_w / 2), int(cy + h / 2)}};
  cv::fillConvexPoly(img, pts, 4, bgr(hue), cv::LINE_8);
  return img;
}

}  // namespace

PairManifest synth_toy_dataset(int n_pairs, int image_size, std::uint64_t rng_seed,
                               const std::filesystem::path& out_dir) {
  if (n_pairs < 4) throw std::invalid_argument("synth_toy_dataset: n_pairs must be >= 4");
  if (image_size < 16) throw std::invalid_argument("synth_toy_dataset: image_size must be >= 16");

  std::filesystem::create_directories(out_dir / "images");
  std::mt19937_64 hue_rng(util::derive_seed(rng_seed, "synth-hue"));
  std::mt19937_64 shape_rng(util::derive_seed(rng_seed, "synth-shape"));
  std::uniform_int_distribution<int> pick_hue(0, kPaletteSize - 1);

  const int n_val = std::max(1, static_cast<int>(std::lround(0.15 * n_pairs)));
  const int n_test = std::max(1, static_cast<int>(std::lround(0.15 * n_pairs)));
  const int n_train = n_pairs - n_val - n_test;
  std::vector<int> order(n_pairs);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(util::derive_seed(rng_seed, "synth-split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<Split> split_of(n_pairs);
  for (int r = 0; r < n_pairs; ++r)
    split_of[order[r]] = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);

  std::vector<PairRecord> pairs;
  std::map<std::string, ItemRecord> items;
  std::ofstream hues(out_dir / "synth_hues.tsv", std::ios::binary | std::ios::trunc);
  hues << "item_id\thue\n";
  for (int i = 0; i < n_pairs; ++i) {
    const int hue = pick_hue(hue_rng);
    const auto top_id = padded("top", i), bottom_id = padded("bottom", i);
    const std::filesystem::path top_rel = "images/" + top_id + ".png";
    const std::filesystem::path bottom_rel = "images/" + bottom_id + ".png";
    write_png(out_dir / top_rel, draw_top(image_size, hue, shape_rng));
    write_png(out_dir / bottom_rel, draw_bottom(image_size, hue, shape_rng));
    items[top_id] = {Category::top, top_rel};
    items[bottom_id] = {Category::bottom, bottom_rel};
    pairs.push_back({padded("pair", i), top_id, bottom_id, split_of[i]});
    hues << top_id << '\t' << hue << '\n' << bottom_id << '\t' << hue << '\n';
  }
  if (!hues) throw std::runtime_error("cannot write " + (out_dir / "synth_hues.tsv").string());

  auto manifest = PairManifest::build(std::move(pairs), std::move(items), out_dir);
  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

std::map<std::string, int> load_synth_hues(const std::filesystem::path& dataset_dir) {
  std::ifstream in(dataset_dir / "synth_hues.tsv");
  if (!in) throw std::runtime_error("no synth_hues.tsv in " + dataset_dir.string());
  std::map<std::string, int> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    out[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
  }
  return out;
}

}  // namespace geco::data
