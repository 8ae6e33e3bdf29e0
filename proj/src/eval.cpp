#include "ssvi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace ssvi::eval {

namespace {

// log p(y | pi, phi) via base + active-dimension gaps, precomputed per
// parameter set so one sample costs O(K * #ones).
struct MixtureTables {
  std::size_t K, D;
  Vec base;  // log pi_k + sum_d log(1 - phi)
  Mat gap;   // log phi - log(1 - phi)

  explicit MixtureTables(const dpmb::Params& p) : K(p.K), D(p.D), base(p.K), gap(p.K, p.D) {
    for (std::size_t k = 0; k < K; ++k) {
      double b = std::log(p.pi[k]);
      for (std::size_t d = 0; d < D; ++d) {
        const double phi = p.phi(k, d);
        b += std::log1p(-phi);
        gap(k, d) = std::log(phi) - std::log1p(-phi);
      }
      base[k] = b;
    }
  }

  double log_lik(const std::vector<std::size_t>& ones) const {
    Vec score(K);
    for (std::size_t k = 0; k < K; ++k) {
      double s = base[k];
      const double* g = gap.data.data() + k * D;
      for (std::size_t d : ones) s += g[d];
      score[k] = s;
    }
    return log_sum_exp(score);
  }
};

}  // namespace

double mixture_log_likelihood(std::span<const std::uint8_t> y,
                              const dpmb::Params& params) {
  Vec score(params.K);
  for (std::size_t k = 0; k < params.K; ++k) {
    double s = std::log(params.pi[k]);
    for (std::size_t d = 0; d < y.size(); ++d) {
      const double phi = params.phi(k, d);
      s += y[d] ? std::log(phi) : std::log1p(-phi);
    }
    score[k] = s;
  }
  return log_sum_exp(score);
}

KLEstimate mc_kl_dpmb(const dpmb::Params& truth, const dpmb::Params& est,
                      std::size_t num_samples, Rng& rng) {
  if (truth.D != est.D || truth.K == 0 || est.K == 0)
    throw std::domain_error("mc_kl_dpmb: incompatible parameter sets");
  const MixtureTables p_true(truth), p_est(est);
  MeanVar acc;
  std::vector<std::size_t> ones;
  for (std::size_t s = 0; s < num_samples; ++s) {
    const std::size_t k = rng.categorical(truth.pi);
    ones.clear();
    for (std::size_t d = 0; d < truth.D; ++d)
      if (rng.uniform() < truth.phi(k, d)) ones.push_back(d);
    acc.add(p_true.log_lik(ones) - p_est.log_lik(ones));
  }
  return {acc.mean, acc.std_error(), num_samples};
}

int count_active_components(std::span<const double> mass, double threshold) {
  int n = 0;
  for (double m : mass)
    if (m > threshold) ++n;
  return n;
}

Vec expected_assignment_mass(const dpmb::Dataset& data, const dpmb::Params& est) {
  Vec mass(est.K, 0.0);
  for (std::size_t n = 0; n < data.N; ++n) {
    const Vec r = dpmb::exact_responsibilities(data.row(n), est.pi, est.phi);
    for (std::size_t k = 0; k < est.K; ++k) mass[k] += r[k];
  }
  return mass;
}

double heldout_predictive_lda(const lda::Corpus& test, const Mat& topics,
                              double alpha) {
  const std::size_t K = topics.rows;
  double total_log = 0.0;
  std::size_t total_words = 0;
  Vec gamma;
  Vec scratch(topics.rows * topics.cols);
  for (const auto& doc : test.docs) {
    if (doc.size() < 2) continue;
    const std::size_t half = (doc.size() + 1) / 2;
    const std::vector<int> head(doc.begin(), doc.begin() + half);
    std::fill(scratch.begin(), scratch.end(), 0.0);
    lda::meanfield_stats(head, topics, alpha, 100, 1e-6, scratch, &gamma);
    double gamma_sum = 0.0;
    for (double g : gamma) gamma_sum += g;
    for (std::size_t i = half; i < doc.size(); ++i) {
      const auto w = static_cast<std::size_t>(doc[i]);
      double p = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        p += gamma[k] / gamma_sum * topics(k, w);
      total_log += std::log(std::max(p, 1e-300));
      ++total_words;
    }
  }
  if (total_words == 0)
    throw std::domain_error("heldout_predictive_lda: no scorable documents");
  return total_log / static_cast<double>(total_words);
}

// ---- quadrature ----

namespace {

// QUADPACK G7/K15 nodes and weights on [-1, 1].
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct GkResult {
  double integral;
  double error;
};

GkResult gk15(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  const double fc = f(c);
  double gauss = fc * kWg[3];
  double kronrod = fc * kWgk[7];
  for (int i = 0; i < 7; ++i) {
    const double dx = h * kXgk[i];
    const double fsum = f(c - dx) + f(c + dx);
    kronrod += fsum * kWgk[i];
    if (i % 2 == 1) gauss += fsum * kWg[i / 2];
  }
  kronrod *= h;
  gauss *= h;
  return {kronrod, std::fabs(kronrod - gauss)};
}

double adaptive_gk(const std::function<double(double)>& f, double a, double b,
                   double tol, int depth) {
  if (depth > 40)
    throw std::runtime_error("integrate_gauss_kronrod: did not converge");
  const GkResult r = gk15(f, a, b);
  if (r.error <= tol || b - a < 1e-14) return r.integral;
  const double m = 0.5 * (a + b);
  return adaptive_gk(f, a, m, 0.5 * tol, depth + 1) +
         adaptive_gk(f, m, b, 0.5 * tol, depth + 1);
}

double beta_log_density(double x, double a, double b) {
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) -
         (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

}  // namespace

double integrate_gauss_kronrod(const std::function<double(double)>& f, double a,
                               double b, double abs_tol) {
  return adaptive_gk(f, a, b, abs_tol, 0);
}

ElboOracle elbo_oracle_beta_bernoulli(std::span<const double> lambda,
                                      std::span<const double> eta,
                                      std::span<const int> data) {
  if (lambda.size() != 2 || eta.size() != 2)
    throw std::domain_error("elbo_oracle_beta_bernoulli: expects 2-dim Beta params");
  if (data.size() > 20)
    throw std::domain_error("elbo_oracle_beta_bernoulli: oracle is for small data");
  double n1 = 0.0, n0 = 0.0;
  for (int y : data) (y ? n1 : n0) += 1.0;

  const auto elbo_at = [&](double l1, double l2) {
    const auto integrand = [&](double x) {
      const double lq = beta_log_density(x, l1, l2);
      const double lp = beta_log_density(x, eta[0], eta[1]);
      const double loglik = n1 * std::log(x) + n0 * std::log1p(-x);
      return std::exp(lq) * (lp - lq + loglik);
    };
    return integrate_gauss_kronrod(integrand, 0.0, 1.0, 1e-10);
  };

  ElboOracle out;
  out.elbo = elbo_at(lambda[0], lambda[1]);
  const double h = 1e-6;
  out.grad = {(elbo_at(lambda[0] + h, lambda[1]) - elbo_at(lambda[0] - h, lambda[1])) / (2.0 * h),
              (elbo_at(lambda[0], lambda[1] + h) - elbo_at(lambda[0], lambda[1] - h)) / (2.0 * h)};
  return out;
}

}  // namespace ssvi::eval
