#pragma once

#include <stdexcept>

namespace ssvi {

// Raised when a quantile-Jacobian division would hit an underflowed pdf.
struct singularity_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a Fisher solve loses positive definiteness numerically.
struct conditioning_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double log_gamma_fn(double x);
double digamma(double x);
double trigamma(double x);

// Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a);
// series for x < a+1, continued fraction otherwise.
double gamma_p(double a, double x);

double gamma_log_pdf(double x, double shape);  // unit rate
double gamma_pdf(double x, double shape);

// Inverse of gamma_p in x: Newton on the CDF with a bracketed bisection
// fallback, stops at |P(a,x) - u| < 1e-10 or 100 iterations.
double gamma_quantile(double u, double shape);

// Central finite difference of P(a, x) in the shape parameter,
// step h = 1e-5 * max(1, |a|) (halved if it would leave the domain).
double gamma_cdf_shape_derivative(double x, double shape);

double inverse_normal_cdf(double p);

}  // namespace ssvi
