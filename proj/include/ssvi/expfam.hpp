#pragma once

#include <span>

#include "ssvi/special.hpp"
#include "ssvi/util.hpp"

namespace ssvi {

// Both families share the sufficient statistic t(beta) = log beta
// coordinate-wise; a Beta variable is carried as a 2-dimensional Dirichlet so
// sampling, Jacobians and Fisher algebra have a single code path.
enum class Family { Gamma, Dirichlet };

struct NaturalParams {
  Family family = Family::Dirichlet;
  Vec values;  // Dirichlet concentrations / Gamma shapes (unit rate)
};

// One draw from q together with the uniforms that produced it and the
// pre-normalization gamma variates. Re-applying inversion sampling to
// `uniforms` under the same parameters reproduces `beta` bit-for-bit.
struct GlobalDraw {
  Vec beta;
  Vec uniforms;
  Vec auxiliaries;  // Dirichlet: gamma draws before normalization; Gamma: = beta
};

// Uniforms are clamped here before inversion so boundary RNG output cannot
// produce infinite quantiles.
constexpr double kUniformClamp = 1e-12;

void validate_natural_params(const NaturalParams& lambda);

double log_normalizer(Family family, std::span<const double> lambda);
void grad_log_normalizer(Family family, std::span<const double> lambda,
                         std::span<double> out);
Vec grad_log_normalizer(Family family, std::span<const double> lambda);

// log of h(beta) exp{lambda . t(beta) - A(lambda)}; the Dirichlet density is
// with respect to Lebesgue measure on the first K-1 simplex coordinates.
double log_density(Family family, std::span<const double> lambda,
                   std::span<const double> beta);

void sufficient_stat(Family family, std::span<const double> beta,
                     std::span<double> out);

void sample_by_inversion(Family family, std::span<const double> lambda,
                         std::span<const double> u, std::span<double> beta,
                         std::span<double> aux);
GlobalDraw sample_by_inversion(const NaturalParams& lambda,
                               std::span<const double> u);

// d/dlambda of the univariate CDF of coordinate `coord` at a fixed point of
// the support (finite differences). Coordinates are parameterwise independent
// before the simplex transform, so entries away from `coord` are zero.
Vec cdf_param_derivative(Family family, std::size_t coord, double beta_coord,
                         std::span<const double> lambda);

// Per-coordinate dRhat_k/dlambda_k of the univariate quantile functions,
// evaluated at the draw's pre-transform coordinates:
//   dRhat_k/dlambda_k = -(dQhat_k/dlambda_k) / pdf_k.
// pdf underflow (< 1e-300) raises singularity_error instead of returning Inf.
Vec quantile_param_derivatives(Family family, std::span<const double> lambda,
                               std::span<const double> aux);
Vec quantile_param_derivatives(Family family, std::span<const double> lambda,
                               const GlobalDraw& draw);

// Dense Jacobian dR/dlambda at fixed u. Gamma: diag of the per-coordinate
// derivatives; Dirichlet: (1/S)(I - beta 1^T) diag(dRhat/dlambda) with
// S the sum of the gamma auxiliaries. Tests and dense oracles only; the
// update path uses the structured product in engine.hpp.
Mat quantile_jacobian(const GlobalDraw& draw, const NaturalParams& lambda);

// F = diag(d) - rank_one * 1 1^T; rank_one is 0 for the Gamma family.
struct FisherMatrix {
  Vec diag;
  double rank_one = 0.0;
};
FisherMatrix fisher(Family family, std::span<const double> lambda);

// Solves F x = v in O(K) via Sherman-Morrison.
void fisher_inverse_apply(Family family, std::span<const double> lambda,
                          std::span<const double> v, std::span<double> out);
Vec fisher_inverse_apply(Family family, std::span<const double> lambda,
                         std::span<const double> v);

// E_q[beta]: lambda / sum(lambda) for Dirichlet, lambda for unit-rate Gamma.
Vec mean_parameter(Family family, std::span<const double> lambda);

}  // namespace ssvi
