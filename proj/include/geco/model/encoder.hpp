#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/nn/autograd.hpp"
#include "geco/nn/ops.hpp"
#include "geco/nn/parameters.hpp"

namespace geco::model {

enum class EncoderVariant { resnet18, tiny };

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::resnet18;
  int feature_dim = 512;
  std::vector<int> tiny_channels{32, 64, 128};  // first three blocks of the tiny variant
  std::string pretrained_path;                   // resnet18 only; archive with "resnet18/<name>" arrays

  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
std::string to_string(EncoderVariant v);
EncoderVariant parse_encoder_variant(const std::string& s);

// Image -> feature vector. Parameters live in a caller-owned set under "enc." names so the
// same backbone embeds tops, templates and bottoms.
template <class T>
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual void init(nn::ParameterSet<T>& params, std::mt19937_64& rng) const = 0;
  // images [N,3,S,S] -> [N,feature_dim]
  virtual nn::Var<T> forward(const nn::ParameterSet<T>& params, const nn::Var<T>& images, bool training) = 0;
  virtual std::map<std::string, nn::BatchNormState>* norm_state() { return nullptr; }
};

// Four stride-2 3x3 conv blocks (ReLU between blocks) followed by global average pooling.
template <class T>
class TinyEncoder final : public Encoder<T> {
 public:
  TinyEncoder(const EncoderConfig& cfg, nn::ParameterSet<T>& params);
  void init(nn::ParameterSet<T>& params, std::mt19937_64& rng) const override;
  nn::Var<T> forward(const nn::ParameterSet<T>& params, const nn::Var<T>& images, bool training) override;

 private:
  std::vector<int> channels_;
};

// Residual 18-layer encoder (BasicBlock x [2,2,2,2], 64..512 channels) with batch
// normalisation; parameter names mirror the common torchvision layout under "enc.".
template <class T>
class ResNet18Encoder final : public Encoder<T> {
 public:
  ResNet18Encoder(const EncoderConfig& cfg, nn::ParameterSet<T>& params);
  void init(nn::ParameterSet<T>& params, std::mt19937_64& rng) const override;
  nn::Var<T> forward(const nn::ParameterSet<T>& params, const nn::Var<T>& images, bool training) override;
  std::map<std::string, nn::BatchNormState>* norm_state() override { return &bn_; }

 private:
  nn::Var<T> bn(const nn::ParameterSet<T>& params, const std::string& name, const nn::Var<T>& x, bool training);
  std::map<std::string, nn::BatchNormState> bn_;
  std::vector<std::string> convs_;
  std::vector<std::string> norms_;
};

template <class T>
std::unique_ptr<Encoder<T>> make_encoder(const EncoderConfig& cfg, nn::ParameterSet<T>& params);

}  // namespace geco::model
