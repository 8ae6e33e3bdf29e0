#include "ssvi/model_dpmb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace ssvi::dpmb {

namespace {
constexpr double kPointFloor = 1e-12;
constexpr std::uint64_t kDataStream = 0x44415441;  // "DATA"
}  // namespace

std::uint64_t Dataset::digest() const {
  std::uint64_t h = fnv1a(&N, sizeof(N));
  h = fnv1a(&D, sizeof(D), h);
  h = fnv1a(y.data(), y.size(), h);
  return h;
}

Dataset generate(std::size_t K, std::size_t D, std::size_t N, double alpha,
                 std::uint64_t seed) {
  if (K == 0 || D == 0) throw std::domain_error("generate: K and D must be positive");
  Rng rng(derive_seed(seed, kDataStream));

  NaturalParams pi_prior{Family::Dirichlet, Vec(K, alpha / static_cast<double>(K))};
  Vec u(K);
  for (double& x : u) x = rng.uniform();
  GlobalDraw pi_draw = sample_by_inversion(pi_prior, u);

  Dataset data;
  data.N = N;
  data.D = D;
  data.has_truth = true;
  data.truth.K = K;
  data.truth.D = D;
  data.truth.alpha = alpha;
  data.truth.pi = pi_draw.beta;
  data.truth.phi = Mat(K, D);
  for (double& v : data.truth.phi.data) v = rng.uniform();  // Beta(1,1)

  data.y.resize(N * D);
  data.true_z.resize(N);
  for (std::size_t n = 0; n < N; ++n) {
    const auto k = rng.categorical(data.truth.pi);
    data.true_z[n] = static_cast<int>(k);
    for (std::size_t d = 0; d < D; ++d)
      data.y[n * D + d] = rng.uniform() < data.truth.phi(k, d) ? 1 : 0;
  }
  return data;
}

std::size_t distinct_assignments(const Dataset& data) {
  std::vector<int> z = data.true_z;
  std::sort(z.begin(), z.end());
  return static_cast<std::size_t>(
      std::unique(z.begin(), z.end()) - z.begin());
}

BlockLayout make_layout(std::size_t K, std::size_t D) {
  BlockLayout layout;
  const std::size_t blocks = 1 + K * D;
  layout.families.assign(blocks, Family::Dirichlet);
  layout.offsets.resize(blocks + 1);
  layout.offsets[0] = 0;
  layout.offsets[1] = K;
  for (std::size_t b = 1; b < blocks; ++b)
    layout.offsets[b + 1] = layout.offsets[b] + 2;
  return layout;
}

Vec make_prior(std::size_t K, std::size_t D, double alpha) {
  Vec prior(K + 2 * K * D, 1.0);  // Beta(1,1) on every Bernoulli mean
  for (std::size_t k = 0; k < K; ++k) prior[k] = alpha / static_cast<double>(K);
  return prior;
}

std::size_t phi_offset(std::size_t K, std::size_t D, std::size_t k, std::size_t d) {
  return K + 2 * (k * D + d);
}

Params point_estimate(std::size_t K, std::size_t D, double alpha,
                      const Vec& lambda) {
  Params p;
  p.K = K;
  p.D = D;
  p.alpha = alpha;
  p.pi.resize(K);
  p.phi = Mat(K, D);
  double pi_sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) pi_sum += lambda[k];
  for (std::size_t k = 0; k < K; ++k) {
    p.pi[k] = lambda[k] / pi_sum;
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t o = phi_offset(K, D, k, d);
      p.phi(k, d) = lambda[o] / (lambda[o] + lambda[o + 1]);
    }
  }
  return p;
}

Vec exact_responsibilities(std::span<const std::uint8_t> y,
                           std::span<const double> pi, const Mat& phi) {
  const std::size_t K = pi.size(), D = y.size();
  Vec score(K);
  for (std::size_t k = 0; k < K; ++k) {
    double s = std::log(std::max(pi[k], kPointFloor));
    const auto row = phi.row(k);
    for (std::size_t d = 0; d < D; ++d) {
      const double p1 = std::max(row[d], kPointFloor);
      const double p0 = std::max(1.0 - row[d], kPointFloor);
      s += y[d] ? std::log(p1) : std::log(p0);
    }
    score[k] = s;
  }
  const double lse = log_sum_exp(score);
  if (!std::isfinite(lse))
    throw std::runtime_error("exact_responsibilities: all assignments have zero mass");
  for (double& s : score) s = std::exp(s - lse);
  return score;
}

void add_stats(std::span<const std::uint8_t> y, std::span<const double> weights,
               std::size_t K, std::size_t D, std::span<double> accum) {
  for (std::size_t k = 0; k < K; ++k) {
    const double w = weights[k];
    accum[k] += w;
    if (w == 0.0) continue;
    double* phi = accum.data() + phi_offset(K, D, k, 0);
    for (std::size_t d = 0; d < D; ++d) {
      phi[2 * d] += w * y[d];
      phi[2 * d + 1] += w * (1.0 - y[d]);
    }
  }
}

Vec sampled_weights(const Vec& r, int num_samples, Rng& rng) {
  if (num_samples < 1)
    throw std::domain_error("sampled_weights: num_samples must be >= 1");
  Vec w(r.size(), 0.0);
  const double unit = 1.0 / static_cast<double>(num_samples);
  for (int s = 0; s < num_samples; ++s) w[rng.categorical(r)] += unit;
  return w;
}

// ---- collapsed Gibbs ----

namespace {

// Per-component predictive tables under the Beta(1,1) prior:
//   L1 = log((s+1)/(n+2)),  L0 = log((n-s+1)/(n+2)).
// Scores use base_k = sum_d L0 plus the L1-L0 gap on the active dimensions,
// so one observation costs O(K * #ones) after an O(D) row refresh.
struct GibbsState {
  std::size_t K, D;
  double alpha_k;
  std::vector<int> counts;       // n_k
  std::vector<int> ones;         // s_{k,d}, K x D
  Vec gap;                       // L1 - L0, K x D
  Vec base;                      // sum_d L0 per component

  GibbsState(std::size_t K_, std::size_t D_, double alpha, std::size_t K_total)
      : K(K_), D(D_), alpha_k(alpha / static_cast<double>(K_total)),
        counts(K_, 0), ones(K_ * D_, 0), gap(K_ * D_, 0.0), base(K_, 0.0) {}

  void refresh_row(std::size_t k) {
    const double n2 = std::log(static_cast<double>(counts[k]) + 2.0);
    double b = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double s = static_cast<double>(ones[k * D + d]);
      const double l1 = std::log(s + 1.0) - n2;
      const double l0 = std::log(static_cast<double>(counts[k]) - s + 1.0) - n2;
      gap[k * D + d] = l1 - l0;
      b += l0;
    }
    base[k] = b;
  }

  void add(std::size_t k, std::span<const std::uint8_t> y, int sign) {
    counts[k] += sign;
    for (std::size_t d = 0; d < D; ++d)
      if (y[d]) ones[k * D + d] += sign;
    refresh_row(k);
  }

  Vec scores(const std::vector<std::size_t>& active_dims) const {
    Vec s(K);
    for (std::size_t k = 0; k < K; ++k) {
      double v = std::log(static_cast<double>(counts[k]) + alpha_k) + base[k];
      const double* g = gap.data() + k * D;
      for (std::size_t d : active_dims) v += g[d];
      s[k] = v;
    }
    return s;
  }
};

std::vector<std::size_t> ones_of(std::span<const std::uint8_t> y) {
  std::vector<std::size_t> idx;
  for (std::size_t d = 0; d < y.size(); ++d)
    if (y[d]) idx.push_back(d);
  return idx;
}

std::size_t sample_from_log_scores(const Vec& score, Rng& rng) {
  Vec p(score.size());
  const double m = *std::max_element(score.begin(), score.end());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(score[k] - m);
  return rng.categorical(p);
}

}  // namespace

Vec collapsed_conditional(const Dataset& data, const std::vector<int>& z,
                          std::size_t n, double alpha, std::size_t K) {
  GibbsState state(K, data.D, alpha, K);
  for (std::size_t m = 0; m < data.N; ++m)
    if (m != n) state.add(static_cast<std::size_t>(z[m]), data.row(m), +1);
  Vec score = state.scores(ones_of(data.row(n)));
  const double lse = log_sum_exp(score);
  for (double& s : score) s = std::exp(s - lse);
  return score;
}

CollapsedGibbsResult collapsed_gibbs(const Dataset& data, double alpha,
                                     std::size_t K, int sweeps, int burn_in,
                                     Rng& rng) {
  if (sweeps < 1) throw std::domain_error("collapsed_gibbs: sweeps must be >= 1");
  if (burn_in >= sweeps)
    throw std::domain_error("collapsed_gibbs: burn_in must be < sweeps");
  const std::size_t N = data.N, D = data.D;

  GibbsState state(K, D, alpha, K);
  std::vector<int> z(N);
  std::vector<std::vector<std::size_t>> active(N);
  for (std::size_t n = 0; n < N; ++n) {
    active[n] = ones_of(data.row(n));
    z[n] = static_cast<int>(rng.uniform_index(K));
    state.add(static_cast<std::size_t>(z[n]), data.row(n), +1);
  }

  CollapsedGibbsResult result;
  Vec pi_acc(K, 0.0);
  Mat phi_acc(K, D);
  Vec count_acc(K, 0.0);
  int retained = 0;

  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t n = 0; n < N; ++n) {
      state.add(static_cast<std::size_t>(z[n]), data.row(n), -1);
      const Vec score = state.scores(active[n]);
      z[n] = static_cast<int>(sample_from_log_scores(score, rng));
      state.add(static_cast<std::size_t>(z[n]), data.row(n), +1);
    }
    if (sweep < burn_in) continue;
    ++retained;
    int occupied = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double nk = static_cast<double>(state.counts[k]);
      if (state.counts[k] > 0) ++occupied;
      pi_acc[k] += (nk + state.alpha_k) /
                   (static_cast<double>(N) + state.alpha_k * static_cast<double>(K));
      count_acc[k] += nk;
      for (std::size_t d = 0; d < D; ++d) {
        phi_acc(k, d) += (static_cast<double>(state.ones[k * D + d]) + 1.0) / (nk + 2.0);
      }
    }
    result.occupied_trace.push_back(occupied);
  }

  const double inv = 1.0 / static_cast<double>(retained);
  result.estimate.K = K;
  result.estimate.D = D;
  result.estimate.alpha = alpha;
  result.estimate.pi = pi_acc;
  for (double& v : result.estimate.pi) v *= inv;
  result.estimate.phi = phi_acc;
  for (double& v : result.estimate.phi.data) v *= inv;
  result.mean_counts = count_acc;
  for (double& v : result.mean_counts) v *= inv;
  result.final_z = z;
  return result;
}

// ---- engine model ----

DPMBModel::DPMBModel(const Dataset& data, std::size_t K, double alpha)
    : data_(&data), K_(K), alpha_(alpha), layout_(make_layout(K, data.D)),
      prior_(make_prior(K, data.D, alpha)) {}

void DPMBModel::batch_stats(std::span<const double> point,
                            std::span<const std::size_t> groups,
                            const EStepConfig& estep, Rng& rng, Vec& accum) {
  const std::size_t K = K_, D = data_->D;

  // score_k(y) = log pi_k + sum_d log phi0 + sum_{d: y_d=1} (log phi1 - log phi0)
  Vec log_pi(K), base(K, 0.0);
  Mat gap(K, D);
  for (std::size_t k = 0; k < K; ++k) {
    log_pi[k] = std::log(std::max(point[k], kPointFloor));
    for (std::size_t d = 0; d < D; ++d) {
      const std::size_t o = phi_offset(K, D, k, d);
      const double l1 = std::log(std::max(point[o], kPointFloor));
      const double l0 = std::log(std::max(point[o + 1], kPointFloor));
      gap(k, d) = l1 - l0;
      base[k] += l0;
    }
  }

  Mat ones_acc(K, D);
  Vec total_w(K, 0.0);
  Vec score(K), weights;
  std::vector<std::size_t> act;

  for (std::size_t n : groups) {
    const auto y = data_->row(n);
    act.clear();
    for (std::size_t d = 0; d < D; ++d)
      if (y[d]) act.push_back(d);

    for (std::size_t k = 0; k < K; ++k) {
      double s = log_pi[k] + base[k];
      const double* g = gap.data.data() + k * D;
      for (std::size_t d : act) s += g[d];
      score[k] = s;
    }
    const double lse = log_sum_exp(score);
    if (!std::isfinite(lse))
      throw std::runtime_error("dpmb E-step: all assignments have zero mass");
    weights.resize(K);
    for (std::size_t k = 0; k < K; ++k) weights[k] = std::exp(score[k] - lse);
    if (estep.kind == EStepKind::Gibbs)
      weights = sampled_weights(weights, estep.num_samples, rng);

    for (std::size_t k = 0; k < K; ++k) {
      const double w = weights[k];
      if (w == 0.0) continue;
      total_w[k] += w;
      double* row = ones_acc.data.data() + k * D;
      for (std::size_t d : act) row[d] += w;
    }
    for (std::size_t k = 0; k < K; ++k) accum[k] += weights[k];
  }

  // phi block (k,d) += (sum_n w_nk y_nd, sum_n w_nk (1 - y_nd))
  for (std::size_t k = 0; k < K; ++k) {
    const double* row = ones_acc.data.data() + k * D;
    double* phi = accum.data() + phi_offset(K, D, k, 0);
    for (std::size_t d = 0; d < D; ++d) {
      phi[2 * d] += row[d];
      phi[2 * d + 1] += total_w[k] - row[d];
    }
  }
}

double DPMBModel::diagnostic(const Vec& lambda) const {
  int active = 0;
  for (std::size_t k = 0; k < K_; ++k)
    if (lambda[k] - prior_[k] > 1.0) ++active;
  return static_cast<double>(active);
}

// ---- serialization ----

void save_dataset(const Dataset& data, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = "dpmb_dataset";
  j["N"] = data.N;
  j["D"] = data.D;
  std::vector<std::string> rows(data.N);
  for (std::size_t n = 0; n < data.N; ++n) {
    auto& s = rows[n];
    s.resize(data.D);
    for (std::size_t d = 0; d < data.D; ++d)
      s[d] = data.y[n * data.D + d] ? '1' : '0';
  }
  j["y"] = rows;
  if (data.has_truth) {
    nlohmann::json t;
    t["K"] = data.truth.K;
    t["alpha"] = data.truth.alpha;
    t["pi"] = data.truth.pi;
    std::vector<Vec> phi(data.truth.K);
    for (std::size_t k = 0; k < data.truth.K; ++k) {
      auto row = data.truth.phi.row(k);
      phi[k].assign(row.begin(), row.end());
    }
    t["phi"] = phi;
    t["z"] = data.true_z;
    j["truth"] = t;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot write " + path);
  out << j.dump() << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("version").get<int>() != 1 ||
      j.at("kind").get<std::string>() != "dpmb_dataset")
    throw std::runtime_error("load_dataset: not a dpmb dataset file");
  Dataset data;
  data.N = j.at("N").get<std::size_t>();
  data.D = j.at("D").get<std::size_t>();
  data.y.resize(data.N * data.D);
  const auto rows = j.at("y").get<std::vector<std::string>>();
  if (rows.size() != data.N)
    throw std::runtime_error("load_dataset: row count mismatch");
  for (std::size_t n = 0; n < data.N; ++n) {
    if (rows[n].size() != data.D)
      throw std::runtime_error("load_dataset: row length mismatch");
    for (std::size_t d = 0; d < data.D; ++d)
      data.y[n * data.D + d] = rows[n][d] == '1' ? 1 : 0;
  }
  if (j.contains("truth")) {
    const auto& t = j.at("truth");
    data.has_truth = true;
    data.truth.K = t.at("K").get<std::size_t>();
    data.truth.D = data.D;
    data.truth.alpha = t.at("alpha").get<double>();
    data.truth.pi = t.at("pi").get<Vec>();
    const auto phi = t.at("phi").get<std::vector<Vec>>();
    data.truth.phi = Mat(data.truth.K, data.D);
    for (std::size_t k = 0; k < data.truth.K; ++k)
      std::copy(phi[k].begin(), phi[k].end(), data.truth.phi.row(k).begin());
    data.true_z = t.at("z").get<std::vector<int>>();
  }
  return data;
}

void export_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_csv: cannot write " + path);
  for (std::size_t d = 0; d < data.D; ++d) out << "y" << d << ",";
  out << "true_z\n";
  for (std::size_t n = 0; n < data.N; ++n) {
    for (std::size_t d = 0; d < data.D; ++d)
      out << static_cast<int>(data.y[n * data.D + d]) << ",";
    out << (data.true_z.empty() ? -1 : data.true_z[n]) << "\n";
  }
}

}  // namespace ssvi::dpmb
