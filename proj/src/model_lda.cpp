#include "ssvi/model_lda.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ssvi::lda {

namespace {
constexpr double kPointFloor = 1e-12;
constexpr std::uint64_t kDataStream = 0x434f5250;  // "CORP"

// (word index, multiplicity) pairs; repeated words share one phi row.
std::vector<std::pair<int, double>> word_counts(const std::vector<int>& doc) {
  std::vector<int> sorted = doc;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<int, double>> counts;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    counts.emplace_back(sorted[i], static_cast<double>(j - i));
    i = j;
  }
  return counts;
}
}  // namespace

std::size_t Corpus::total_words() const {
  std::size_t n = 0;
  for (const auto& d : docs) n += d.size();
  return n;
}

std::uint64_t Corpus::digest() const {
  std::uint64_t h = fnv1a(&vocab_size, sizeof(vocab_size));
  for (const auto& d : docs) {
    const std::size_t len = d.size();
    h = fnv1a(&len, sizeof(len), h);
    h = fnv1a(d.data(), d.size() * sizeof(int), h);
  }
  return h;
}

Mat sample_topics(std::size_t K, std::size_t V, double eta, Rng& rng) {
  Mat topics(K, V);
  NaturalParams prior{Family::Dirichlet, Vec(V, eta)};
  Vec u(V);
  for (std::size_t k = 0; k < K; ++k) {
    for (double& x : u) x = rng.uniform();
    GlobalDraw draw = sample_by_inversion(prior, u);
    std::copy(draw.beta.begin(), draw.beta.end(), topics.row(k).begin());
  }
  return topics;
}

Corpus sample_docs(const Mat& topics, std::size_t n_docs, std::size_t doc_len,
                   double alpha, Rng& rng) {
  const std::size_t K = topics.rows;
  Corpus corpus;
  corpus.vocab_size = topics.cols;
  corpus.docs.resize(n_docs);
  NaturalParams theta_prior{Family::Dirichlet, Vec(K, alpha)};
  Vec u(K);
  for (auto& doc : corpus.docs) {
    for (double& x : u) x = rng.uniform();
    GlobalDraw theta = sample_by_inversion(theta_prior, u);
    doc.resize(doc_len);
    for (auto& w : doc) {
      const std::size_t z = rng.categorical(theta.beta);
      w = static_cast<int>(rng.categorical(topics.row(z)));
    }
  }
  return corpus;
}

SynthCorpus synth_corpus(std::size_t K, std::size_t V, std::size_t n_docs,
                         std::size_t doc_len, double alpha, double eta,
                         std::uint64_t seed) {
  Rng rng(derive_seed(seed, kDataStream));
  SynthCorpus out;
  out.topics = sample_topics(K, V, eta, rng);
  out.corpus = sample_docs(out.topics, n_docs, doc_len, alpha, rng);
  return out;
}

BlockLayout make_layout(std::size_t K, std::size_t V) {
  return BlockLayout::uniform(Family::Dirichlet, K, V);
}

Vec make_prior(std::size_t K, std::size_t V, double eta) {
  return Vec(K * V, eta);
}

Mat point_topics(std::size_t K, std::size_t V, const Vec& lambda) {
  Mat topics(K, V);
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += lambda[k * V + v];
    for (std::size_t v = 0; v < V; ++v) topics(k, v) = lambda[k * V + v] / sum;
  }
  return topics;
}

bool meanfield_stats(const std::vector<int>& doc, const Mat& beta, double alpha,
                     int max_iters, double tol, std::span<double> accum,
                     Vec* gamma_out, const Vec* gamma_init) {
  const std::size_t K = beta.rows, V = beta.cols;
  if (max_iters < 1)
    throw std::domain_error("meanfield_stats: max_iters must be >= 1");
  if (doc.empty()) {
    if (gamma_out) gamma_out->assign(K, alpha);
    return true;
  }
  const auto words = word_counts(doc);
  const auto len = static_cast<double>(doc.size());

  Vec gamma = gamma_init ? *gamma_init
                         : Vec(K, alpha + len / static_cast<double>(K));
  Mat phi(words.size(), K);
  bool converged = false;
  for (int it = 0; it < max_iters; ++it) {
    Vec weight(K);
    for (std::size_t k = 0; k < K; ++k) weight[k] = std::exp(digamma(gamma[k]));
    Vec gamma_next(K, alpha);
    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto [v, count] = words[i];
      double norm = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        phi(i, k) = std::max(beta(k, static_cast<std::size_t>(v)), kPointFloor) *
                    weight[k];
        norm += phi(i, k);
      }
      for (std::size_t k = 0; k < K; ++k) {
        phi(i, k) /= norm;
        gamma_next[k] += count * phi(i, k);
      }
    }
    double change = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      change = std::max(change, std::fabs(gamma_next[k] - gamma[k]));
    gamma = std::move(gamma_next);
    if (change < tol) {
      converged = true;
      break;
    }
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto [v, count] = words[i];
    for (std::size_t k = 0; k < K; ++k)
      accum[k * V + static_cast<std::size_t>(v)] += count * phi(i, k);
  }
  if (gamma_out) *gamma_out = gamma;
  return converged;
}

void gibbs_stats(const std::vector<int>& doc, const Mat& beta, double alpha,
                 int num_samples, int burn_in, Rng& rng,
                 std::vector<int>& z_state, std::span<double> accum) {
  if (doc.empty()) return;
  if (num_samples < 1)
    throw std::domain_error("gibbs_stats: num_samples must be >= 1");
  const std::size_t K = beta.rows, V = beta.cols, M = doc.size();

  Vec p(K);
  std::vector<int> counts(K, 0);
  if (z_state.size() != M) {
    z_state.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
      const auto w = static_cast<std::size_t>(doc[m]);
      for (std::size_t k = 0; k < K; ++k)
        p[k] = std::max(beta(k, w), kPointFloor);
      z_state[m] = static_cast<int>(rng.categorical(p));
    }
  }
  for (std::size_t m = 0; m < M; ++m) ++counts[static_cast<std::size_t>(z_state[m])];

  Vec count_acc(K * V, 0.0);
  const int total_sweeps = burn_in + num_samples;
  for (int sweep = 0; sweep < total_sweeps; ++sweep) {
    for (std::size_t m = 0; m < M; ++m) {
      const auto w = static_cast<std::size_t>(doc[m]);
      --counts[static_cast<std::size_t>(z_state[m])];
      for (std::size_t k = 0; k < K; ++k) {
        p[k] = (alpha + static_cast<double>(counts[k])) *
               std::max(beta(k, w), kPointFloor);
      }
      z_state[m] = static_cast<int>(rng.categorical(p));
      ++counts[static_cast<std::size_t>(z_state[m])];
    }
    if (sweep >= burn_in) {
      for (std::size_t m = 0; m < M; ++m) {
        count_acc[static_cast<std::size_t>(z_state[m]) * V +
                  static_cast<std::size_t>(doc[m])] += 1.0;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(num_samples);
  for (std::size_t i = 0; i < count_acc.size(); ++i)
    accum[i] += count_acc[i] * inv;
}

Vec apply_v_topic(std::span<const double> lambda_k, std::span<const double> beta_k,
                  std::span<const double> aux_k, std::span<const double> stats_k) {
  Vec out(lambda_k.size());
  apply_v_block(Family::Dirichlet, lambda_k, beta_k, aux_k, stats_k, out);
  return out;
}

LDAModel::LDAModel(const Corpus& corpus, std::size_t K, double alpha, double eta)
    : corpus_(&corpus), K_(K), alpha_(alpha),
      layout_(make_layout(K, corpus.vocab_size)),
      prior_(make_prior(K, corpus.vocab_size, eta)),
      gibbs_state_(corpus.docs.size()) {}

void LDAModel::batch_stats(std::span<const double> point,
                           std::span<const std::size_t> groups,
                           const EStepConfig& estep, Rng& rng, Vec& accum) {
  const std::size_t V = corpus_->vocab_size;
  Mat beta(K_, V);
  std::copy(point.begin(), point.end(), beta.data.begin());

  for (std::size_t n : groups) {
    const auto& doc = corpus_->docs[n];
    if (doc.empty()) continue;  // zero increment by count semantics
    if (estep.kind == EStepKind::MeanField) {
      meanfield_stats(doc, beta, alpha_, estep.max_iters, estep.tol, accum);
    } else {
      gibbs_stats(doc, beta, alpha_, estep.num_samples, estep.burn_in, rng,
                  gibbs_state_[n], accum);
    }
  }
}

double LDAModel::diagnostic(const Vec& lambda) const {
  const std::size_t V = corpus_->vocab_size;
  int active = 0;
  for (std::size_t k = 0; k < K_; ++k) {
    double mass = 0.0;
    for (std::size_t v = 0; v < V; ++v)
      mass += lambda[k * V + v] - prior_[k * V + v];
    if (mass > 1.0) ++active;
  }
  return static_cast<double>(active);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_corpus: cannot write " + path);
  out << "V " << corpus.vocab_size << "\n";
  for (const auto& doc : corpus.docs) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      if (i) out << ' ';
      out << doc[i];
    }
    out << '\n';
  }
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_corpus: cannot read " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_corpus: missing header");
  std::istringstream header(line);
  std::string tag;
  Corpus corpus;
  header >> tag >> corpus.vocab_size;
  if (tag != "V" || !header)
    throw std::runtime_error("load_corpus: malformed header, expected 'V <int>'");
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<int> doc;
    int w;
    while (ls >> w) {
      if (w < 0 || static_cast<std::size_t>(w) >= corpus.vocab_size)
        throw std::runtime_error("load_corpus: word index out of range");
      doc.push_back(w);
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

void export_topics_csv(const Mat& topics, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_topics_csv: cannot write " + path);
  out.precision(17);
  for (std::size_t k = 0; k < topics.rows; ++k) {
    for (std::size_t v = 0; v < topics.cols; ++v) {
      if (v) out << ',';
      out << topics(k, v);
    }
    out << '\n';
  }
}

}  // namespace ssvi::lda
