#pragma once

#include <functional>

#include "ssvi/model_dpmb.hpp"
#include "ssvi/model_lda.hpp"

namespace ssvi::eval {

struct KLEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t num_samples = 0;
};

// Monte-Carlo KL(p(y|truth) || p(y|est)): samples y from the
// data-generating mixture and averages the log-likelihood gap, both sides by
// log-sum-exp over components.
KLEstimate mc_kl_dpmb(const dpmb::Params& truth, const dpmb::Params& est,
                      std::size_t num_samples, Rng& rng);

// Mixture log-likelihood of one binary vector (shared by the KL estimator
// and its tests).
double mixture_log_likelihood(std::span<const std::uint8_t> y,
                              const dpmb::Params& params);

// Components whose assignment mass exceeds `threshold` (one observation by
// default).
int count_active_components(std::span<const double> mass, double threshold = 1.0);

// Sum of exact responsibilities at the point estimate over a dataset:
// the expected per-component assignment mass under the fitted model.
Vec expected_assignment_mass(const dpmb::Dataset& data, const dpmb::Params& est);

// Document-completion predictive: the first ceil(len/2) words fit the
// document-topic weights by the mean-field E-step against the fixed topics;
// the remaining words are scored under sum_k theta_k beta_{k,w}. Returns the
// average log probability per scored word; documents with fewer than 2 words
// are skipped.
double heldout_predictive_lda(const lda::Corpus& test, const Mat& topics,
                              double alpha);

struct ElboOracle {
  double elbo = 0.0;
  Vec grad;  // d elbo / d lambda, central differences with step 1e-6
};

// Numerically integrated ELBO for the scalar Beta-Bernoulli model: beta ~
// Beta(eta), y_i ~ Bernoulli(beta), q = Beta(lambda). Independent of the
// engine's digamma/Fisher machinery: adaptive Gauss-Kronrod quadrature over
// (0,1) to absolute 1e-10.
ElboOracle elbo_oracle_beta_bernoulli(std::span<const double> lambda,
                                      std::span<const double> eta,
                                      std::span<const int> data);

// Adaptive G7/K15 quadrature, exposed for test oracles.
double integrate_gauss_kronrod(const std::function<double(double)>& f, double a,
                               double b, double abs_tol);

}  // namespace ssvi::eval
