#include "geco/cigm/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "geco/nn/ops.hpp"

namespace geco::cigm {

namespace {
constexpr double kInitStd = 0.02;
constexpr nn::Conv2dGeometry kDown{4, 2, 1};
constexpr nn::Conv2dGeometry kFlat{4, 1, 1};

std::string key(const char* prefix, int level, const char* what) {
  return std::string(prefix) + std::to_string(level) + "." + what;
}
}  // namespace

int GeneratorConfig::channels(int level) const {
  return std::min(max_channels, base_channels << std::min(level - 1, 20));
}

void GeneratorConfig::validate() const {
  std::vector<std::string> bad;
  if (depth < 1) bad.push_back("depth must be >= 1");
  if (image_size < 2) bad.push_back("image_size must be >= 2");
  if (depth >= 1 && depth < 31 && (image_size % (1 << depth) != 0 || (image_size >> depth) < 1))
    bad.push_back("image_size must equal 2^depth x (bottleneck extent >= 1)");
  if (base_channels < 1) bad.push_back("base_channels must be >= 1");
  if (max_channels < base_channels) bad.push_back("max_channels must be >= base_channels");
  if (noise_dim < 1) bad.push_back("noise_dim must be >= 1");
  if (bad.empty()) return;
  std::string msg = "invalid generator config:";
  for (const auto& b : bad) msg += " " + b + ";";
  throw std::invalid_argument(msg);
}

int DiscriminatorConfig::patch_size(int image_size) const {
  return (image_size >> downsample_stages) - 2;
}

void DiscriminatorConfig::validate(int image_size) const {
  if (base_channels < 1 || max_channels < base_channels || downsample_stages < 1)
    throw std::invalid_argument("invalid discriminator config: channels/stages must be positive");
  if (image_size % (1 << downsample_stages) != 0 || patch_size(image_size) < 1)
    throw std::invalid_argument("invalid discriminator config: patch size c = " +
                                std::to_string(patch_size(image_size)) + " for image size " +
                                std::to_string(image_size) + " (need c >= 1)");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"image_size", c.image_size},       {"depth", c.depth},
       {"base_channels", c.base_channels}, {"max_channels", c.max_channels},
       {"noise_dim", c.noise_dim},         {"output_nonlinearity", "tanh"}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.depth = j.value("depth", d.depth);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.max_channels = j.value("max_channels", d.max_channels);
  c.noise_dim = j.value("noise_dim", d.noise_dim);
  const auto nl = j.value("output_nonlinearity", std::string("tanh"));
  if (nl != "tanh") throw std::invalid_argument("output_nonlinearity is fixed to tanh, got '" + nl + "'");
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"base_channels", c.base_channels},
       {"downsample_stages", c.downsample_stages},
       {"max_channels", c.max_channels}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  DiscriminatorConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.downsample_stages = j.value("downsample_stages", d.downsample_stages);
  c.max_channels = j.value("max_channels", d.max_channels);
}

template <class T>
Generator<T>::Generator(GeneratorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int depth = cfg_.depth;
  for (int l = 1; l <= depth; ++l) {
    const int in = l == 1 ? 3 : cfg_.channels(l - 1);
    params_.add(key("enc", l, "weight"), {cfg_.channels(l), in, 4, 4});
    params_.add(key("enc", l, "bias"), {cfg_.channels(l)});
  }
  for (int l = depth; l >= 1; --l) {
    const int in = l == depth ? cfg_.channels(depth) + cfg_.noise_dim : 2 * cfg_.channels(l);
    const int out = l == 1 ? 3 : cfg_.channels(l - 1);
    params_.add(key("dec", l, "weight"), {in, out, 4, 4});
    params_.add(key("dec", l, "bias"), {out});
  }
}

template <class T>
void Generator<T>::init(std::mt19937_64& rng) {
  for (const auto& [name, var] : params_.items()) {
    nn::Var<T> v = var;
    if (name.ends_with(".weight"))
      nn::init_normal(v, kInitStd, rng);
    else
      nn::init_constant(v, 0.0);
  }
}

template <class T>
nn::Var<T> Generator<T>::forward(const nn::Var<T>& tops, const nn::Var<T>& noise, const Options& opts) const {
  const int s = cfg_.image_size, depth = cfg_.depth;
  if (tops.shape().size() != 4 || tops.dim(1) != 3 || tops.dim(2) != s || tops.dim(3) != s)
    throw std::invalid_argument("generator: expected tops [N,3," + std::to_string(s) + "," + std::to_string(s) +
                                "], got " + nn::shape_str(tops.shape()));
  if (noise.shape().size() != 2 || noise.dim(0) != tops.dim(0) || noise.dim(1) != cfg_.noise_dim)
    throw std::invalid_argument("generator: expected noise [N," + std::to_string(cfg_.noise_dim) + "], got " +
                                nn::shape_str(noise.shape()));
  for (T v : noise.data())
    if (!std::isfinite(static_cast<double>(v))) throw std::invalid_argument("generator: non-finite noise");

  std::vector<nn::Var<T>> enc(depth + 1);
  enc[1] = nn::conv2d(tops, params_.get(key("enc", 1, "weight")), params_.get(key("enc", 1, "bias")), kDown);
  for (int l = 2; l <= depth; ++l) {
    auto h = nn::leaky_relu(enc[l - 1], T(0.2));
    h = nn::conv2d(h, params_.get(key("enc", l, "weight")), params_.get(key("enc", l, "bias")), kDown);
    enc[l] = l < depth ? nn::instance_norm(h) : h;
  }

  const int extent = cfg_.bottleneck_extent();
  // noise joins after the activation; a ReLU over it would zero every negative coordinate
  nn::Var<T> d = nn::concat1(nn::relu(enc[depth]), nn::broadcast_spatial(noise, extent, extent));
  for (int l = depth; l >= 1; --l) {
    auto h = nn::conv_transpose2d(l == depth ? d : nn::relu(d), params_.get(key("dec", l, "weight")),
                                  params_.get(key("dec", l, "bias")), kDown);
    if (l == 1) return nn::tanh(h);
    h = nn::instance_norm(h);
    const auto& skip = enc[l - 1];
    d = nn::concat1(h, opts.drop_skip_level == l - 1 ? nn::Var<T>::zeros(skip.shape()) : skip);
  }
  return d;  // unreachable: depth >= 1
}

template <class T>
Discriminator<T>::Discriminator(DiscriminatorConfig cfg, int image_size) : cfg_(cfg), image_size_(image_size) {
  cfg_.validate(image_size);
  auto ch = [&](int i) { return std::min(cfg_.max_channels, cfg_.base_channels << std::min(i, 20)); };
  int in = 6;
  for (int i = 0; i <= cfg_.downsample_stages; ++i) {
    params_.add(key("conv", i, "weight"), {ch(i), in, 4, 4});
    params_.add(key("conv", i, "bias"), {ch(i)});
    in = ch(i);
  }
  params_.add("out.weight", {1, in, 4, 4});
  params_.add("out.bias", {1});
}

template <class T>
void Discriminator<T>::init(std::mt19937_64& rng) {
  for (const auto& [name, var] : params_.items()) {
    nn::Var<T> v = var;
    if (name.ends_with(".weight"))
      nn::init_normal(v, kInitStd, rng);
    else
      nn::init_constant(v, 0.0);
  }
}

template <class T>
nn::Var<T> Discriminator<T>::logits(const nn::Var<T>& tops, const nn::Var<T>& candidates) const {
  const int s = image_size_;
  for (const auto* v : {&tops, &candidates})
    if (v->shape().size() != 4 || v->dim(1) != 3 || v->dim(2) != s || v->dim(3) != s)
      throw std::invalid_argument("discriminator: expected [N,3," + std::to_string(s) + "," + std::to_string(s) +
                                  "], got " + nn::shape_str(v->shape()));
  if (tops.dim(0) != candidates.dim(0)) throw std::invalid_argument("discriminator: batch size mismatch");

  auto h = nn::concat1(tops, candidates);
  const int stages = cfg_.downsample_stages;
  for (int i = 0; i <= stages; ++i) {
    h = nn::conv2d(h, params_.get(key("conv", i, "weight")), params_.get(key("conv", i, "bias")),
                   i < stages ? kDown : kFlat);
    if (i > 0) h = nn::instance_norm(h);
    h = nn::leaky_relu(h, T(0.2));
  }
  return nn::conv2d(h, params_.get("out.weight"), params_.get("out.bias"), kFlat);
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace geco::cigm
