#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssvi/engine.hpp"

namespace ssvi::dpmb {

struct Params {
  std::size_t K = 0, D = 0;
  double alpha = 0.0;
  Vec pi;   // K, on the simplex
  Mat phi;  // K x D, Bernoulli means in (0,1)
};

struct Dataset {
  std::size_t N = 0, D = 0;
  std::vector<std::uint8_t> y;  // N x D row-major, entries in {0,1}
  std::vector<int> true_z;      // empty when ground truth is absent
  Params truth;
  bool has_truth = false;

  std::span<const std::uint8_t> row(std::size_t n) const {
    return {y.data() + n * D, D};
  }
  std::uint64_t digest() const;
};

// pi ~ Dirichlet(alpha/K, ...), phi_{k,d} ~ Beta(1,1), z_n ~ Mult(pi),
// y_{n,d} ~ Bernoulli(phi_{z_n,d}); ground truth retained.
Dataset generate(std::size_t K, std::size_t D, std::size_t N, double alpha,
                 std::uint64_t seed);

std::size_t distinct_assignments(const Dataset& data);

// Natural-parameter layout: one K-dim Dirichlet for the mixture weights,
// then one 2-dim Dirichlet per (k,d) Bernoulli mean; phi block (k,d) holds
// (success count + 1, failure count + 1).
BlockLayout make_layout(std::size_t K, std::size_t D);
Vec make_prior(std::size_t K, std::size_t D, double alpha);

std::size_t phi_offset(std::size_t K, std::size_t D, std::size_t k, std::size_t d);

// Posterior-mean point estimate (pi_hat, phi_hat) from the natural params.
Params point_estimate(std::size_t K, std::size_t D, double alpha, const Vec& lambda);

// Exact conditional over assignments, log-space: r_k ∝ pi_k prod_d
// phi^(y) (1-phi)^(1-y). `pi`/`phi` are beta-scale values (an actual draw or
// exp of expected logs); they need not be normalized.
Vec exact_responsibilities(std::span<const std::uint8_t> y,
                           std::span<const double> pi, const Mat& phi);

// Conjugate sufficient-statistic increment for one observation under
// assignment weights w (responsibilities or Monte-Carlo frequencies):
// weight block += w, phi block (k,d) += (w_k y_d, w_k (1-y_d)).
void add_stats(std::span<const std::uint8_t> y, std::span<const double> weights,
               std::size_t K, std::size_t D, std::span<double> accum);

// Monte-Carlo assignment frequencies: z ~ Categorical(r) `num_samples` times.
// The conditional is sampled directly, so burn-in is accepted but unused.
Vec sampled_weights(const Vec& r, int num_samples, Rng& rng);

struct CollapsedGibbsResult {
  Params estimate;             // averaged smoothed posterior means
  Vec mean_counts;             // averaged per-component counts n_k
  std::vector<int> final_z;
  std::vector<int> occupied_trace;  // occupied components per retained sweep
};

// Finite-mixture collapsed Gibbs: z_n | z_-n, y with pi and phi integrated
// out. After burn-in, estimates average pi_k ∝ n_k + alpha/K and
// phi_{k,d} = (s_{k,d}+1)/(n_k+2) across sweeps.
CollapsedGibbsResult collapsed_gibbs(const Dataset& data, double alpha,
                                     std::size_t K, int sweeps, int burn_in,
                                     Rng& rng);

// One-site conditional p(z_n = . | z_-n, y) of the collapsed sampler, exposed
// for kernel-correctness checks.
Vec collapsed_conditional(const Dataset& data, const std::vector<int>& z,
                          std::size_t n, double alpha, std::size_t K);

class DPMBModel final : public Model {
 public:
  DPMBModel(const Dataset& data, std::size_t K, double alpha);

  std::string_view name() const override { return "dpmb"; }
  const BlockLayout& layout() const override { return layout_; }
  const Vec& prior() const override { return prior_; }
  std::size_t num_groups() const override { return data_->N; }
  bool supports(EStepKind) const override { return true; }
  void batch_stats(std::span<const double> point,
                   std::span<const std::size_t> groups, const EStepConfig& estep,
                   Rng& rng, Vec& accum) override;
  double diagnostic(const Vec& lambda) const override;

  std::size_t K() const { return K_; }
  double alpha() const { return alpha_; }

 private:
  const Dataset* data_;
  std::size_t K_;
  double alpha_;
  BlockLayout layout_;
  Vec prior_;
};

void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_csv(const Dataset& data, const std::string& path);

}  // namespace ssvi::dpmb
