#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geco/nn/autograd.hpp"
#include "geco/nn/parameters.hpp"

namespace geco::model {

// paper: (1/tau) * -log softmax, with the temperature also outside the log.
// canonical: -log softmax only.
enum class InfoNceForm { paper, canonical };

struct LossWeights {
  double alpha = 0.5;   // BPR
  double beta = 1.0;    // InfoNCE
  double gamma = 1e-4;  // L2 norm of the parameters
  double tau = 0.5;
  InfoNceForm form = InfoNceForm::paper;

  void validate() const;
  double nce_prefactor() const { return form == InfoNceForm::paper ? 1.0 / tau : 1.0; }
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

double score(std::span<const float> q, std::span<const float> c);

// -log sigmoid(m_ij - m_ik), as softplus(m_ik - m_ij).
double bpr_loss(double m_ij, double m_ik);

// negatives excludes the positive; the denominator sums over the positive and every negative.
double info_nce_loss(double m_ij, std::span<const double> negatives, double tau,
                     InfoNceForm form = InfoNceForm::paper);

// Unsquared L2 norm over every value.
double reg_loss(std::span<const double> values);
template <class T>
double reg_loss(const nn::ParameterSet<T>& params);

struct BatchScores {
  std::vector<double> positive;                    // m_ij per example
  std::vector<double> bpr_negative;                // m_ik of the sampled negative per example
  std::vector<std::vector<double>> nce_negatives;  // in-batch negative scores per example
};

struct LossBreakdown {
  double total = 0;
  double bpr = 0;  // batch means
  double nce = 0;
  double reg = 0;
};

// alpha * mean(bpr) + beta * mean(nce) + gamma * reg
LossBreakdown total_loss(const BatchScores& scores, const LossWeights& weights, double reg);

template <class T>
struct LossTerms {
  nn::Var<T> total;
  nn::Var<T> bpr;
  nn::Var<T> nce;
  nn::Var<T> reg;
};

// Differentiable batch objective. q, c_pos, c_neg are [B,E]. InfoNCE row i uses the other
// B-1 positives of the batch as negatives; BPR uses c_neg.
template <class T>
LossTerms<T> batch_objective(const nn::Var<T>& q, const nn::Var<T>& c_pos, const nn::Var<T>& c_neg,
                             const LossWeights& weights, const nn::ParameterSet<T>& params);

// The score matrix entries batch_objective consumes, for checking decompositions in double.
BatchScores batch_scores(std::span<const float> q, std::span<const float> c_pos, std::span<const float> c_neg,
                         std::size_t batch, std::size_t dim);

}  // namespace geco::model
