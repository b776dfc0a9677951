#include "geco/cigm/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "geco/nn/ops.hpp"

namespace geco::cigm {

namespace {
void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}
}  // namespace

double generator_loss(std::span<const double> d_fake, std::span<const float> templ, std::span<const float> gt,
                      double lambda) {
  if (lambda < 0) throw std::invalid_argument("generator_loss: lambda must be >= 0");
  if (d_fake.empty() || templ.size() != gt.size() || templ.empty())
    throw std::invalid_argument("generator_loss: empty grid or template/ground-truth size mismatch");
  require_finite(d_fake, "generator_loss");
  double adv = 0;
  for (double d : d_fake) adv -= std::log(d);
  adv /= static_cast<double>(d_fake.size());
  double l1 = 0;
  for (std::size_t i = 0; i < templ.size(); ++i) {
    if (!std::isfinite(templ[i]) || !std::isfinite(gt[i]))
      throw std::invalid_argument("generator_loss: non-finite input");
    l1 += std::abs(double(templ[i]) - double(gt[i]));
  }
  return adv + lambda * l1 / static_cast<double>(templ.size());
}

double discriminator_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.size() != d_fake.size() || d_real.empty())
    throw std::invalid_argument("discriminator_loss: grids must be non-empty and the same shape");
  require_finite(d_real, "discriminator_loss");
  require_finite(d_fake, "discriminator_loss");
  double real = 0, fake = 0;
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    real -= std::log(d_real[i]);
    fake -= std::log1p(-d_fake[i]);
  }
  const double n = static_cast<double>(d_real.size());
  return real / n + fake / n;
}

template <class T>
nn::Var<T> generator_adversarial(const nn::Var<T>& fake_logits) {
  return nn::mean(nn::softplus(nn::scale(fake_logits, T(-1))));
}

template <class T>
nn::Var<T> generator_objective(const nn::Var<T>& fake_logits, const nn::Var<T>& templates,
                               const nn::Var<T>& gt_bottoms, T lambda) {
  return nn::add(generator_adversarial(fake_logits), nn::scale(nn::l1_mean(templates, gt_bottoms), lambda));
}

template <class T>
nn::Var<T> discriminator_objective(const nn::Var<T>& real_logits, const nn::Var<T>& fake_logits) {
  return nn::add(nn::mean(nn::softplus(nn::scale(real_logits, T(-1)))), nn::mean(nn::softplus(fake_logits)));
}

template nn::Var<float> generator_adversarial(const nn::Var<float>&);
template nn::Var<double> generator_adversarial(const nn::Var<double>&);
template nn::Var<float> generator_objective(const nn::Var<float>&, const nn::Var<float>&, const nn::Var<float>&,
                                            float);
template nn::Var<double> generator_objective(const nn::Var<double>&, const nn::Var<double>&,
                                             const nn::Var<double>&, double);
template nn::Var<float> discriminator_objective(const nn::Var<float>&, const nn::Var<float>&);
template nn::Var<double> discriminator_objective(const nn::Var<double>&, const nn::Var<double>&);

}  // namespace geco::cigm
