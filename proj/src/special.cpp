#include "ssvi/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ssvi {

namespace {
constexpr double kQuantileTol = 1e-10;
constexpr int kQuantileMaxIter = 100;
constexpr int kIncompleteGammaMaxIter = 10000;
}  // namespace

double log_gamma_fn(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma_fn: x must be positive");
  return std::lgamma(x);
}

// Recurrence down to x >= 8, then the asymptotic series
// psi(x) ~ ln x - 1/(2x) - sum_n B_2n / (2n x^2n).
double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: x must be positive");
  double acc = 0.0;
  while (x < 8.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

// psi'(x) ~ 1/x + 1/(2x^2) + sum_n B_2n / x^(2n+1), same recurrence.
double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: x must be positive");
  double acc = 0.0;
  while (x < 8.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  double series =
      1.0 +
      inv * (0.5 +
             inv * (1.0 / 6.0 -
                    inv2 * (1.0 / 30.0 -
                            inv2 * (1.0 / 42.0 -
                                    inv2 * (1.0 / 30.0 -
                                            inv2 * (5.0 / 66.0 -
                                                    inv2 * (691.0 / 2730.0)))))));
  return acc + inv * series;
}

double gamma_p(double a, double x) {
  if (!(a > 0.0)) throw std::domain_error("gamma_p: shape must be positive");
  if (!(x >= 0.0)) throw std::domain_error("gamma_p: x must be non-negative");
  if (x == 0.0) return 0.0;
  const double lg = std::lgamma(a);
  const double log_prefactor = a * std::log(x) - x - lg;
  if (x < a + 1.0) {
    // series: P(a,x) = x^a e^-x / Gamma(a) * sum_i x^i / (a(a+1)...(a+i))
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int i = 0; i < kIncompleteGammaMaxIter; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return std::min(1.0, sum * std::exp(log_prefactor));
  }
  // modified Lentz continued fraction for Q(a,x)
  const double fpmin = std::numeric_limits<double>::min() / 1e-16;
  double b = x + 1.0 - a;
  double c = 1.0 / fpmin;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kIncompleteGammaMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = b + an / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) <= 1e-16) break;
  }
  return std::max(0.0, 1.0 - std::exp(log_prefactor) * h);
}

double gamma_log_pdf(double x, double shape) {
  if (!(shape > 0.0)) throw std::domain_error("gamma_log_pdf: shape must be positive");
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return (shape - 1.0) * std::log(x) - x - std::lgamma(shape);
}

double gamma_pdf(double x, double shape) {
  if (!(shape > 0.0)) throw std::domain_error("gamma_pdf: shape must be positive");
  if (!(x > 0.0)) {
    if (x == 0.0 && shape < 1.0) return std::numeric_limits<double>::infinity();
    return x == 0.0 && shape == 1.0 ? 1.0 : 0.0;
  }
  return std::exp(gamma_log_pdf(x, shape));
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("inverse_normal_cdf: p outside (0,1)");
  // Acklam's rational approximation, |relative error| < 1.15e-9.
  static const double A[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double B[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double C[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double D[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) /
           ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) /
           ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
  }
  const double q = p - 0.5, r = q * q;
  return (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q /
         (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0);
}

double gamma_quantile(double u, double shape) {
  if (!(u > 0.0 && u < 1.0))
    throw std::domain_error("gamma_quantile: u outside (0,1)");
  if (!(shape > 0.0))
    throw std::domain_error("gamma_quantile: shape must be positive");

  double x;
  if (shape > 1.0) {
    // Wilson-Hilferty; falls back to the small-x series inversion when the
    // cube would go non-positive (deep lower tail of small shapes)
    const double z = inverse_normal_cdf(u);
    const double t = 1.0 - 1.0 / (9.0 * shape) + z / (3.0 * std::sqrt(shape));
    if (t > 0.0) {
      x = shape * t * t * t;
    } else {
      x = std::exp((std::log(u) + std::lgamma(shape + 1.0)) / shape);
    }
  } else {
    const double t = 1.0 - shape * (0.253 + 0.12 * shape);
    if (u < t) {
      x = std::pow(u / t, 1.0 / shape);
    } else {
      x = 1.0 - std::log((1.0 - u) / (1.0 - t));
    }
  }
  if (x == 0.0) return 0.0;  // quantile below the smallest positive double

  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < kQuantileMaxIter; ++it) {
    const double f = gamma_p(shape, x) - u;
    if (std::fabs(f) < kQuantileTol) return x;
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double pdf = gamma_pdf(x, shape);
    double next = std::isfinite(pdf) && pdf > 0.0 ? x - f / pdf : lo;
    if (!(next > lo && next < hi)) {
      next = std::isinf(hi) ? std::max(2.0 * x, x + 1.0) : 0.5 * (lo + hi);
    }
    if (next == x) break;  // bracket exhausted at double resolution
    x = next;
  }
  return x;
}

double gamma_cdf_shape_derivative(double x, double shape) {
  if (!(shape > 0.0))
    throw std::domain_error("gamma_cdf_shape_derivative: shape must be positive");
  double h = 1e-5 * std::max(1.0, std::fabs(shape));
  h = std::min(h, 0.5 * shape);
  return (gamma_p(shape + h, x) - gamma_p(shape - h, x)) / (2.0 * h);
}

}  // namespace ssvi
