#include "geco/model/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geco/nn/ops.hpp"

namespace geco::model {

void LossWeights::validate() const {
  std::vector<std::string> bad;
  if (!(alpha >= 0)) bad.push_back("alpha must be >= 0");
  if (!(beta >= 0)) bad.push_back("beta must be >= 0");
  if (!(gamma >= 0)) bad.push_back("gamma must be >= 0");
  if (!(tau > 0)) bad.push_back("tau must be > 0");
  if (alpha == 0 && beta == 0) bad.push_back("alpha and beta cannot both be 0");
  if (bad.empty()) return;
  std::string msg = "invalid loss weights:";
  for (const auto& b : bad) msg += " " + b + ";";
  throw std::invalid_argument(msg);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"alpha", w.alpha},
       {"beta", w.beta},
       {"gamma", w.gamma},
       {"tau", w.tau},
       {"infonce_form", w.form == InfoNceForm::paper ? "paper" : "canonical"}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  LossWeights d;
  w.alpha = j.value("alpha", d.alpha);
  w.beta = j.value("beta", d.beta);
  w.gamma = j.value("gamma", d.gamma);
  w.tau = j.value("tau", d.tau);
  const auto form = j.value("infonce_form", std::string("paper"));
  if (form != "paper" && form != "canonical")
    throw std::invalid_argument("infonce_form must be paper or canonical, got '" + form + "'");
  w.form = form == "paper" ? InfoNceForm::paper : InfoNceForm::canonical;
}

double score(std::span<const float> q, std::span<const float> c) {
  if (q.size() != c.size()) throw std::invalid_argument("score: dimension mismatch");
  double s = 0;
  for (std::size_t i = 0; i < q.size(); ++i) s += double(q[i]) * double(c[i]);
  return s;
}

namespace {
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
}  // namespace

double bpr_loss(double m_ij, double m_ik) { return softplus(m_ik - m_ij); }

double info_nce_loss(double m_ij, std::span<const double> negatives, double tau, InfoNceForm form) {
  if (!(tau > 0)) throw std::invalid_argument("info_nce_loss: tau must be > 0");
  if (negatives.empty()) throw std::invalid_argument("info_nce_loss: at least one negative required");
  double mx = m_ij / tau;
  for (double m : negatives) mx = std::max(mx, m / tau);
  double z = std::exp(m_ij / tau - mx);
  for (double m : negatives) z += std::exp(m / tau - mx);
  const double loss = mx + std::log(z) - m_ij / tau;
  return (form == InfoNceForm::paper ? 1.0 / tau : 1.0) * std::max(loss, 0.0);
}

double reg_loss(std::span<const double> values) {
  double s = 0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

template <class T>
double reg_loss(const nn::ParameterSet<T>& params) {
  double s = 0;
  for (const auto& [name, var] : params.items())
    for (T v : var.data()) s += double(v) * double(v);
  return std::sqrt(s);
}

template double reg_loss(const nn::ParameterSet<float>&);
template double reg_loss(const nn::ParameterSet<double>&);

LossBreakdown total_loss(const BatchScores& scores, const LossWeights& weights, double reg) {
  weights.validate();
  const std::size_t n = scores.positive.size();
  if (n == 0 || scores.bpr_negative.size() != n || scores.nce_negatives.size() != n)
    throw std::invalid_argument("total_loss: batch score vectors must be non-empty and aligned");
  double bpr = 0, nce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bpr += bpr_loss(scores.positive[i], scores.bpr_negative[i]);
    nce += info_nce_loss(scores.positive[i], scores.nce_negatives[i], weights.tau, weights.form);
  }
  LossBreakdown out;
  out.bpr = bpr / static_cast<double>(n);
  out.nce = nce / static_cast<double>(n);
  out.reg = reg;
  out.total = weights.alpha * out.bpr + weights.beta * out.nce + weights.gamma * out.reg;
  return out;
}

template <class T>
LossTerms<T> batch_objective(const nn::Var<T>& q, const nn::Var<T>& c_pos, const nn::Var<T>& c_neg,
                             const LossWeights& weights, const nn::ParameterSet<T>& params) {
  weights.validate();
  const auto b = q.dim(0);
  if (b < 2) throw std::invalid_argument("batch_objective: in-batch InfoNCE needs at least 2 examples");
  LossTerms<T> out;
  const auto m_ij = nn::rowdot(q, c_pos);
  const auto m_ik = nn::rowdot(q, c_neg);
  out.bpr = nn::mean(nn::softplus(nn::sub(m_ik, m_ij)));

  std::vector<std::int64_t> diag(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) diag[static_cast<std::size_t>(i)] = i;
  out.nce = nn::mean(nn::softmax_xent_rows(nn::matmul_nt(q, c_pos), std::span<const std::int64_t>(diag),
                                           static_cast<T>(weights.tau), static_cast<T>(weights.nce_prefactor())));

  const auto vars = params.vars();
  out.reg = nn::l2_norm(std::span<const nn::Var<T>>(vars));
  out.total = nn::add(nn::add(nn::scale(out.bpr, static_cast<T>(weights.alpha)),
                              nn::scale(out.nce, static_cast<T>(weights.beta))),
                      nn::scale(out.reg, static_cast<T>(weights.gamma)));
  return out;
}

template LossTerms<float> batch_objective(const nn::Var<float>&, const nn::Var<float>&, const nn::Var<float>&,
                                          const LossWeights&, const nn::ParameterSet<float>&);
template LossTerms<double> batch_objective(const nn::Var<double>&, const nn::Var<double>&, const nn::Var<double>&,
                                           const LossWeights&, const nn::ParameterSet<double>&);

BatchScores batch_scores(std::span<const float> q, std::span<const float> c_pos, std::span<const float> c_neg,
                         std::size_t batch, std::size_t dim) {
  if (q.size() != batch * dim || c_pos.size() != batch * dim || c_neg.size() != batch * dim)
    throw std::invalid_argument("batch_scores: size mismatch");
  BatchScores s;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto qi = q.subspan(i * dim, dim);
    s.positive.push_back(score(qi, c_pos.subspan(i * dim, dim)));
    s.bpr_negative.push_back(score(qi, c_neg.subspan(i * dim, dim)));
    std::vector<double> neg;
    for (std::size_t j = 0; j < batch; ++j)
      if (j != i) neg.push_back(score(qi, c_pos.subspan(j * dim, dim)));
    s.nce_negatives.push_back(std::move(neg));
  }
  return s;
}

}  // namespace geco::model
