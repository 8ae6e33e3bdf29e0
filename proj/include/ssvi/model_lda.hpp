#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssvi/engine.hpp"

namespace ssvi::lda {

struct Corpus {
  std::size_t vocab_size = 0;
  std::vector<std::vector<int>> docs;  // word indices in [0, vocab_size)

  std::size_t total_words() const;
  std::uint64_t digest() const;
};

// Forward samples of the generative process. Topics are sampled once; train
// and test documents share them.
Mat sample_topics(std::size_t K, std::size_t V, double eta, Rng& rng);
Corpus sample_docs(const Mat& topics, std::size_t n_docs, std::size_t doc_len,
                   double alpha, Rng& rng);

struct SynthCorpus {
  Corpus corpus;
  Mat topics;  // K x V ground truth
};
SynthCorpus synth_corpus(std::size_t K, std::size_t V, std::size_t n_docs,
                         std::size_t doc_len, double alpha, double eta,
                         std::uint64_t seed);

// K topic blocks of V Dirichlet coordinates each; prior is symmetric eta.
BlockLayout make_layout(std::size_t K, std::size_t V);
Vec make_prior(std::size_t K, std::size_t V, double eta);

// Row-normalized point estimate E_q[beta] of the topic matrix.
Mat point_topics(std::size_t K, std::size_t V, const Vec& lambda);

// Local mean-field E-step for one document against beta-scale topic values:
// phi_{m,k} ∝ beta[k][w_m] exp(psi(gamma_k)), gamma = alpha + sum_m phi_m.
// Adds eta_hat_{k,v} = sum_m 1[w_m=v] phi_{m,k} into `accum` (K*V flat).
// Returns false when the coordinate ascent hit max_iters before `tol`.
bool meanfield_stats(const std::vector<int>& doc, const Mat& beta, double alpha,
                     int max_iters, double tol, std::span<double> accum,
                     Vec* gamma_out = nullptr, const Vec* gamma_init = nullptr);

// Collapsed local Gibbs E-step: p(z_m = k | z_-m) ∝ (alpha + c_k^{-m}) *
// beta[k][w_m] with the document-topic weights integrated out. eta_hat
// averages the topic-word count matrix over the retained sweeps. `z_state`
// persists across calls; empty means initialize from beta[., w].
void gibbs_stats(const std::vector<int>& doc, const Mat& beta, double alpha,
                 int num_samples, int burn_in, Rng& rng,
                 std::vector<int>& z_state, std::span<double> accum);

// Per-topic V-product: (grad^2 A)^-1 (dR/dlambda)(dt/dbeta)^T stats using
// only O(V) structured pieces.
Vec apply_v_topic(std::span<const double> lambda_k, std::span<const double> beta_k,
                  std::span<const double> aux_k, std::span<const double> stats_k);

class LDAModel final : public Model {
 public:
  LDAModel(const Corpus& corpus, std::size_t K, double alpha, double eta);

  std::string_view name() const override { return "lda"; }
  const BlockLayout& layout() const override { return layout_; }
  const Vec& prior() const override { return prior_; }
  std::size_t num_groups() const override { return corpus_->docs.size(); }
  bool supports(EStepKind kind) const override {
    return kind != EStepKind::ExactConditional;  // intractable for this model
  }
  void batch_stats(std::span<const double> point,
                   std::span<const std::size_t> groups, const EStepConfig& estep,
                   Rng& rng, Vec& accum) override;
  double diagnostic(const Vec& lambda) const override;

  std::size_t K() const { return K_; }
  std::size_t V() const { return corpus_->vocab_size; }

 private:
  const Corpus* corpus_;
  std::size_t K_;
  double alpha_;
  BlockLayout layout_;
  Vec prior_;
  std::vector<std::vector<int>> gibbs_state_;  // per-document assignments
};

// One document per line of space-separated word indices after a "V <int>"
// header line; empty lines are empty documents.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

void export_topics_csv(const Mat& topics, const std::string& path);

}  // namespace ssvi::lda
