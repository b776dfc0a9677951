#pragma once

#include <span>

#include "geco/nn/autograd.hpp"

namespace geco::cigm {

// Probability-space objectives. d_* are patch grids of discriminator outputs in (0,1);
// means run over every cell (and every grid when several are concatenated).

// -mean(log d_fake) + lambda * mean(|template - gt|)
double generator_loss(std::span<const double> d_fake, std::span<const float> templ, std::span<const float> gt,
                      double lambda);

// -mean(log d_real) - mean(log(1 - d_fake))
double discriminator_loss(std::span<const double> d_real, std::span<const double> d_fake);

// Logit-space forms used for training. -log(sigmoid(l)) = softplus(-l) and
// -log(1 - sigmoid(l)) = softplus(l), so these equal the functions above on sigmoid(logits).
template <class T>
nn::Var<T> generator_adversarial(const nn::Var<T>& fake_logits);
template <class T>
nn::Var<T> generator_objective(const nn::Var<T>& fake_logits, const nn::Var<T>& templates,
                               const nn::Var<T>& gt_bottoms, T lambda);
template <class T>
nn::Var<T> discriminator_objective(const nn::Var<T>& real_logits, const nn::Var<T>& fake_logits);

}  // namespace geco::cigm
