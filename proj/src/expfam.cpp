#include "ssvi/expfam.hpp"

#include <algorithm>
#include <cmath>

namespace ssvi {

namespace {
constexpr double kPdfUnderflow = 1e-300;

double clamp_uniform(double u) {
  return std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
}
}  // namespace

void validate_natural_params(const NaturalParams& lambda) {
  if (lambda.values.empty())
    throw std::domain_error("natural params: empty coordinate vector");
  for (double v : lambda.values) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::domain_error("natural params: coordinates must be positive and finite");
  }
}

double log_normalizer(Family family, std::span<const double> lambda) {
  double sum = 0.0, a = 0.0;
  for (double v : lambda) {
    a += log_gamma_fn(v);
    sum += v;
  }
  if (family == Family::Dirichlet) a -= log_gamma_fn(sum);
  return a;
}

void grad_log_normalizer(Family family, std::span<const double> lambda,
                         std::span<double> out) {
  if (family == Family::Gamma) {
    for (std::size_t i = 0; i < lambda.size(); ++i) out[i] = digamma(lambda[i]);
    return;
  }
  double sum = 0.0;
  for (double v : lambda) sum += v;
  const double psi_sum = digamma(sum);
  for (std::size_t i = 0; i < lambda.size(); ++i)
    out[i] = digamma(lambda[i]) - psi_sum;
}

Vec grad_log_normalizer(Family family, std::span<const double> lambda) {
  Vec out(lambda.size());
  grad_log_normalizer(family, lambda, out);
  return out;
}

double log_density(Family family, std::span<const double> lambda,
                   std::span<const double> beta) {
  double acc = -log_normalizer(family, lambda);
  if (family == Family::Gamma) {
    for (std::size_t i = 0; i < lambda.size(); ++i)
      acc += (lambda[i] - 1.0) * std::log(beta[i]) - beta[i];
    return acc;
  }
  for (std::size_t i = 0; i < lambda.size(); ++i)
    acc += (lambda[i] - 1.0) * std::log(beta[i]);
  return acc;
}

void sufficient_stat(Family, std::span<const double> beta, std::span<double> out) {
  for (std::size_t i = 0; i < beta.size(); ++i) out[i] = std::log(beta[i]);
}

void sample_by_inversion(Family family, std::span<const double> lambda,
                         std::span<const double> u, std::span<double> beta,
                         std::span<double> aux) {
  const std::size_t k = lambda.size();
  if (u.size() != k)
    throw std::domain_error("sample_by_inversion: uniform count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    aux[i] = gamma_quantile(clamp_uniform(u[i]), lambda[i]);
    sum += aux[i];
  }
  if (family == Family::Gamma) {
    std::copy(aux.begin(), aux.end(), beta.begin());
    return;
  }
  if (!(sum > 0.0))
    throw singularity_error("sample_by_inversion: all gamma variates underflowed");
  for (std::size_t i = 0; i < k; ++i) beta[i] = aux[i] / sum;
}

GlobalDraw sample_by_inversion(const NaturalParams& lambda,
                               std::span<const double> u) {
  validate_natural_params(lambda);
  GlobalDraw d;
  d.uniforms.assign(u.begin(), u.end());
  d.beta.resize(lambda.values.size());
  d.auxiliaries.resize(lambda.values.size());
  sample_by_inversion(lambda.family, lambda.values, u, d.beta, d.auxiliaries);
  return d;
}

Vec cdf_param_derivative(Family, std::size_t coord, double beta_coord,
                         std::span<const double> lambda) {
  if (coord >= lambda.size())
    throw std::domain_error("cdf_param_derivative: coordinate out of range");
  if (!(beta_coord > 0.0))
    throw std::domain_error("cdf_param_derivative: point outside support interior");
  Vec out(lambda.size(), 0.0);
  out[coord] = gamma_cdf_shape_derivative(beta_coord, lambda[coord]);
  return out;
}

Vec quantile_param_derivatives(Family, std::span<const double> lambda,
                               std::span<const double> aux) {
  Vec d(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const double pdf = gamma_pdf(aux[i], lambda[i]);
    // pdf -> Inf pins the quantile (derivative 0); pdf underflow does not.
    if (!(pdf >= kPdfUnderflow))
      throw singularity_error("quantile_param_derivatives: pdf underflow at draw");
    d[i] = std::isinf(pdf) ? 0.0
                           : -gamma_cdf_shape_derivative(aux[i], lambda[i]) / pdf;
  }
  return d;
}

Vec quantile_param_derivatives(Family family, std::span<const double> lambda,
                               const GlobalDraw& draw) {
  return quantile_param_derivatives(family, lambda, draw.auxiliaries);
}

Mat quantile_jacobian(const GlobalDraw& draw, const NaturalParams& lambda) {
  const std::size_t k = lambda.values.size();
  const Vec d = quantile_param_derivatives(lambda.family, lambda.values,
                                           draw.auxiliaries);
  Mat jac(k, k);
  if (lambda.family == Family::Gamma) {
    for (std::size_t i = 0; i < k; ++i) jac(i, i) = d[i];
    return jac;
  }
  double sum = 0.0;
  for (double a : draw.auxiliaries) sum += a;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double delta = i == j ? 1.0 : 0.0;
      jac(i, j) = (delta - draw.beta[i]) * d[j] / sum;
    }
  }
  return jac;
}

FisherMatrix fisher(Family family, std::span<const double> lambda) {
  FisherMatrix f;
  f.diag.resize(lambda.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    f.diag[i] = trigamma(lambda[i]);
    sum += lambda[i];
  }
  if (family == Family::Dirichlet) f.rank_one = trigamma(sum);
  return f;
}

void fisher_inverse_apply(Family family, std::span<const double> lambda,
                          std::span<const double> v, std::span<double> out) {
  const std::size_t k = lambda.size();
  double sum = 0.0;
  for (double x : lambda) sum += x;
  double dot = 0.0, trace_inv = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double di = trigamma(lambda[i]);
    out[i] = v[i] / di;
    dot += out[i];
    trace_inv += 1.0 / di;
  }
  if (family == Family::Gamma) return;
  const double c = trigamma(sum);
  const double denom = 1.0 - c * trace_inv;
  if (!(denom > 1e-12))
    throw conditioning_error("fisher_inverse_apply: matrix numerically singular");
  const double scale = c * dot / denom;
  for (std::size_t i = 0; i < k; ++i) out[i] += scale / trigamma(lambda[i]);
}

Vec fisher_inverse_apply(Family family, std::span<const double> lambda,
                         std::span<const double> v) {
  Vec out(lambda.size());
  fisher_inverse_apply(family, lambda, v, out);
  return out;
}

Vec mean_parameter(Family family, std::span<const double> lambda) {
  Vec out(lambda.begin(), lambda.end());
  if (family == Family::Gamma) return out;
  double sum = 0.0;
  for (double v : lambda) sum += v;
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace ssvi
