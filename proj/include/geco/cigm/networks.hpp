#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "geco/nn/autograd.hpp"
#include "geco/nn/parameters.hpp"

namespace geco::cigm {

struct GeneratorConfig {
  int image_size = 128;
  int depth = 7;  // stride-2 levels; bottleneck extent image_size / 2^depth
  int base_channels = 64;
  int max_channels = 512;
  int noise_dim = 64;

  int channels(int level) const;  // level in [1, depth]
  int bottleneck_extent() const { return image_size >> depth; }
  void validate() const;
};

struct DiscriminatorConfig {
  int base_channels = 64;
  int downsample_stages = 3;
  int max_channels = 512;

  // Spatial extent c of the c x c patch grid for a given input size.
  int patch_size(int image_size) const;
  void validate(int image_size) const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

// Skip-connected encoder/decoder. The noise vector is broadcast over the bottleneck grid
// and concatenated on the channel axis before the first decoder stage.
//
//   encoder  e1 = conv(x); e_l = [IN](conv(lrelu(e_{l-1})))  (no IN at l = 1 and l = depth)
//   decoder  d_depth = [e_depth, z];  h = convT(relu(d)); IN except at the output stage;
//            d_{l-1} = [h, e_{l-1}];  output = tanh(convT(relu(d_1)))
template <class T>
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  void init(std::mt19937_64& rng);

  struct Options {
    // Replaces the skip tensor feeding decoder level `drop_skip_level` with zeros.
    std::optional<int> drop_skip_level;
  };

  // tops [N,3,S,S], noise [N,noise_dim] -> [N,3,S,S] in [-1,1]
  nn::Var<T> forward(const nn::Var<T>& tops, const nn::Var<T>& noise, const Options& opts) const;
  nn::Var<T> forward(const nn::Var<T>& tops, const nn::Var<T>& noise) const { return forward(tops, noise, {}); }

  const GeneratorConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

 private:
  GeneratorConfig cfg_;
  nn::ParameterSet<T> params_;
};

// Patch discriminator over the channel-concatenated (top, candidate) pair. Returns logits;
// probabilities are sigmoid(logits).
//
//   conv s2 -> lrelu; (conv s2 -> IN -> lrelu) x (stages - 1); conv s1 -> IN -> lrelu; conv s1 -> 1 ch
template <class T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, int image_size);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  void init(std::mt19937_64& rng);

  // tops, candidates [N,3,S,S] -> logits [N,1,c,c]
  nn::Var<T> logits(const nn::Var<T>& tops, const nn::Var<T>& candidates) const;

  const DiscriminatorConfig& config() const { return cfg_; }
  int image_size() const { return image_size_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

 private:
  DiscriminatorConfig cfg_;
  int image_size_;
  nn::ParameterSet<T> params_;
};

}  // namespace geco::cigm
