#include "geco/model/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace geco::model {

std::string to_string(EncoderVariant v) { return v == EncoderVariant::tiny ? "tiny" : "resnet18"; }

EncoderVariant parse_encoder_variant(const std::string& s) {
  if (s == "tiny") return EncoderVariant::tiny;
  if (s == "resnet18" || s == "paper_backbone") return EncoderVariant::resnet18;
  throw std::invalid_argument("unknown encoder variant '" + s + "' (expected tiny or resnet18)");
}

void EncoderConfig::validate() const {
  if (feature_dim < 1) throw std::invalid_argument("encoder: feature_dim must be >= 1");
  if (variant == EncoderVariant::tiny) {
    if (tiny_channels.size() != 3) throw std::invalid_argument("encoder: tiny_channels needs 3 entries");
    for (int c : tiny_channels)
      if (c < 1) throw std::invalid_argument("encoder: tiny_channels must be positive");
  } else if (feature_dim != 512) {
    throw std::invalid_argument("encoder: resnet18 produces 512-d features");
  }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"feature_dim", c.feature_dim},
       {"tiny_channels", c.tiny_channels},
       {"pretrained_path", c.pretrained_path}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.variant = parse_encoder_variant(j.value("variant", to_string(d.variant)));
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.tiny_channels = j.value("tiny_channels", d.tiny_channels);
  c.pretrained_path = j.value("pretrained_path", d.pretrained_path);
}

namespace {

// He-uniform for conv/linear weights over fan-in.
template <class T>
void he_uniform(nn::Var<T>& w, std::mt19937_64& rng) {
  std::int64_t fan_in = 1;
  for (std::size_t i = 1; i < w.shape().size(); ++i) fan_in *= w.dim(i);
  nn::init_uniform(w, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace

template <class T>
TinyEncoder<T>::TinyEncoder(const EncoderConfig& cfg, nn::ParameterSet<T>& params)
    : channels_{cfg.tiny_channels[0], cfg.tiny_channels[1], cfg.tiny_channels[2], cfg.feature_dim} {
  int in = 3;
  for (std::size_t b = 0; b < channels_.size(); ++b) {
    params.add("enc.block" + std::to_string(b) + ".weight", {channels_[b], in, 3, 3});
    params.add("enc.block" + std::to_string(b) + ".bias", {channels_[b]});
    in = channels_[b];
  }
}

template <class T>
void TinyEncoder<T>::init(nn::ParameterSet<T>& params, std::mt19937_64& rng) const {
  for (std::size_t b = 0; b < channels_.size(); ++b) {
    auto& w = params.get("enc.block" + std::to_string(b) + ".weight");
    he_uniform(w, rng);
    nn::init_constant(params.get("enc.block" + std::to_string(b) + ".bias"), 0.0);
  }
}

template <class T>
nn::Var<T> TinyEncoder<T>::forward(const nn::ParameterSet<T>& params, const nn::Var<T>& images, bool) {
  if (images.shape().size() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("encoder: expected [N,3,S,S], got " + nn::shape_str(images.shape()));
  nn::Var<T> h = images;
  for (std::size_t b = 0; b < channels_.size(); ++b) {
    h = nn::conv2d(h, params.get("enc.block" + std::to_string(b) + ".weight"),
                   params.get("enc.block" + std::to_string(b) + ".bias"), {3, 2, 1});
    if (b + 1 < channels_.size()) h = nn::relu(h);
  }
  return nn::global_avg_pool(h);
}

template <class T>
ResNet18Encoder<T>::ResNet18Encoder(const EncoderConfig&, nn::ParameterSet<T>& params) {
  auto conv = [&](const std::string& name, int out, int in, int k) {
    params.add("enc." + name, {out, in, k, k});
    convs_.push_back(name);
  };
  auto norm = [&](const std::string& name, int c) {
    params.add("enc." + name + ".weight", {c});
    params.add("enc." + name + ".bias", {c});
    norms_.push_back(name);
    bn_[name] = {};
  };
  conv("conv1.weight", 64, 3, 7);
  norm("bn1", 64);
  int in = 64;
  const int widths[4] = {64, 128, 256, 512};
  for (int layer = 0; layer < 4; ++layer) {
    for (int block = 0; block < 2; ++block) {
      const std::string p = "layer" + std::to_string(layer + 1) + "." + std::to_string(block) + ".";
      const int out = widths[layer];
      conv(p + "conv1.weight", out, in, 3);
      norm(p + "bn1", out);
      conv(p + "conv2.weight", out, out, 3);
      norm(p + "bn2", out);
      if (block == 0 && layer > 0) {
        conv(p + "downsample.0.weight", out, in, 1);
        norm(p + "downsample.1", out);
      }
      in = out;
    }
  }
}

template <class T>
void ResNet18Encoder<T>::init(nn::ParameterSet<T>& params, std::mt19937_64& rng) const {
  for (const auto& c : convs_) {
    auto& w = params.get("enc." + c);
    // Kaiming normal, fan-out, as torchvision does for ResNet.
    const double fan_out = static_cast<double>(w.dim(0) * w.dim(2) * w.dim(3));
    nn::init_normal(w, std::sqrt(2.0 / fan_out), rng);
  }
  for (const auto& n : norms_) {
    nn::init_constant(params.get("enc." + n + ".weight"), 1.0);
    nn::init_constant(params.get("enc." + n + ".bias"), 0.0);
  }
}

template <class T>
nn::Var<T> ResNet18Encoder<T>::bn(const nn::ParameterSet<T>& params, const std::string& name, const nn::Var<T>& x,
                                  bool training) {
  return nn::batch_norm(x, params.get("enc." + name + ".weight"), params.get("enc." + name + ".bias"), bn_.at(name),
                        training);
}

template <class T>
nn::Var<T> ResNet18Encoder<T>::forward(const nn::ParameterSet<T>& params, const nn::Var<T>& images, bool training) {
  if (images.shape().size() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("encoder: expected [N,3,S,S], got " + nn::shape_str(images.shape()));
  const nn::Var<T> none;
  auto h = nn::conv2d(images, params.get("enc.conv1.weight"), none, {7, 2, 3});
  h = nn::relu(bn(params, "bn1", h, training));
  h = nn::max_pool2d(h, {3, 2, 1});
  for (int layer = 0; layer < 4; ++layer) {
    for (int block = 0; block < 2; ++block) {
      const std::string p = "layer" + std::to_string(layer + 1) + "." + std::to_string(block) + ".";
      const std::int64_t stride = (block == 0 && layer > 0) ? 2 : 1;
      auto y = nn::conv2d(h, params.get("enc." + p + "conv1.weight"), none, {3, stride, 1});
      y = nn::relu(bn(params, p + "bn1", y, training));
      y = nn::conv2d(y, params.get("enc." + p + "conv2.weight"), none, {3, 1, 1});
      y = bn(params, p + "bn2", y, training);
      nn::Var<T> shortcut = h;
      if (stride == 2) {
        shortcut = nn::conv2d(h, params.get("enc." + p + "downsample.0.weight"), none, {1, 2, 0});
        shortcut = bn(params, p + "downsample.1", shortcut, training);
      }
      h = nn::relu(nn::add(y, shortcut));
    }
  }
  return nn::global_avg_pool(h);
}

template <class T>
std::unique_ptr<Encoder<T>> make_encoder(const EncoderConfig& cfg, nn::ParameterSet<T>& params) {
  cfg.validate();
  if (cfg.variant == EncoderVariant::tiny) return std::make_unique<TinyEncoder<T>>(cfg, params);
  return std::make_unique<ResNet18Encoder<T>>(cfg, params);
}

template class TinyEncoder<float>;
template class TinyEncoder<double>;
template class ResNet18Encoder<float>;
template class ResNet18Encoder<double>;
template std::unique_ptr<Encoder<float>> make_encoder(const EncoderConfig&, nn::ParameterSet<float>&);
template std::unique_ptr<Encoder<double>> make_encoder(const EncoderConfig&, nn::ParameterSet<double>&);

}  // namespace geco::model
