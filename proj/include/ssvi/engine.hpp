#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssvi/expfam.hpp"
#include "ssvi/rng.hpp"
#include "ssvi/util.hpp"

namespace ssvi {

// rho(t) = scale * t^-kappa
struct Schedule {
  double scale = 1.0;
  double kappa = 0.75;
  bool ramp = false;  // ramp the data multiplier up over the first sweep
};

double step_size(std::size_t t, const Schedule& sched);

// N_eff/S with N_eff = min(t*S, N) while ramping, else N.
double data_multiplier(std::size_t t, std::size_t total_groups,
                       std::size_t minibatch, const Schedule& sched);

enum class MStepKind { MeanFieldSVI, SSVI, SSVI_A };
enum class EStepKind { ExactConditional, MeanField, Gibbs };

struct EStepConfig {
  EStepKind kind = EStepKind::ExactConditional;
  int num_samples = 5;  // Gibbs sweeps retained per group
  int burn_in = 5;
  int max_iters = 100;  // mean-field coordinate-ascent cap
  double tol = 1e-6;
};

// Natural-parameter domain floor applied after every M-step; the stochastic
// V term can transiently push coordinates negative.
constexpr double kDomainFloor = 1e-8;

// The global state is a concatenation of independent exponential-family
// blocks (e.g. one Dirichlet for mixture weights plus one 2-dim Dirichlet per
// Bernoulli mean). All engine updates run blockwise over this layout.
struct BlockLayout {
  std::vector<std::size_t> offsets;  // size blocks()+1, offsets[0] == 0
  std::vector<Family> families;

  std::size_t blocks() const { return families.size(); }
  std::size_t dim() const { return offsets.empty() ? 0 : offsets.back(); }
  std::size_t block_size(std::size_t b) const {
    return offsets[b + 1] - offsets[b];
  }
  std::span<double> block(Vec& v, std::size_t b) const {
    return {v.data() + offsets[b], block_size(b)};
  }
  std::span<const double> block(const Vec& v, std::size_t b) const {
    return {v.data() + offsets[b], block_size(b)};
  }

  static BlockLayout uniform(Family family, std::size_t blocks,
                             std::size_t block_dim);
};

// One global draw for every block, stored flat in layout order.
struct BlockedDraw {
  Vec beta;
  Vec uniforms;
  Vec auxiliaries;
};

BlockedDraw sample_global(const BlockLayout& layout, const Vec& lambda, Rng& rng);

// exp(E_q[t(beta)]) blockwise: the conditioning point classic SVI E-steps use
// in place of a draw.
Vec mean_point(const BlockLayout& layout, const Vec& lambda);

// (grad^2 A)^-1 (dR/dlambda) (dt/dbeta)^T stats for one block, assembled from
// the structured pieces in O(block size):
//   Dirichlet: diag(d) (I - 1 beta^T) diag(beta)^-1 stats / sum(aux),
//   then the Sherman-Morrison Fisher solve. Draw coordinates are floored at
//   1e-12 before the division.
void apply_v_block(Family family, std::span<const double> lambda,
                   std::span<const double> beta, std::span<const double> aux,
                   std::span<const double> stats, std::span<double> out);

Vec apply_v(const BlockLayout& layout, const Vec& lambda,
            const BlockedDraw& draw, const Vec& stats);

// lambda' = (1-rho) lambda + rho (prior + scaled_stats), floored to the
// natural-parameter domain. The mean-field and averaged updates share this
// arithmetic; they differ only in how the stats were conditioned upstream.
Vec mstep_meanfield(const Vec& lambda, const Vec& prior, const Vec& scaled_stats,
                    double rho);
Vec mstep_ssvi_a(const Vec& lambda, const Vec& prior, const Vec& scaled_stats,
                 double rho);

// lambda' = (1-rho) lambda + rho (prior + V(beta,lambda) scaled_stats)
Vec mstep_ssvi(const BlockLayout& layout, const Vec& lambda, const Vec& prior,
               const BlockedDraw& draw, const Vec& scaled_stats, double rho);

// A model plugs its global-block layout, prior and local E-steps into the
// driver. `point` carries beta-scale values per block: an actual draw for the
// structured M-steps, exp(E[t(beta)]) for classic mean-field SVI.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string_view name() const = 0;
  virtual const BlockLayout& layout() const = 0;
  virtual const Vec& prior() const = 0;
  virtual std::size_t num_groups() const = 0;
  virtual bool supports(EStepKind kind) const = 0;

  // Accumulates sum over `groups` of the local sufficient-statistic estimates
  // into `accum` (same layout as lambda, += semantics).
  virtual void batch_stats(std::span<const double> point,
                           std::span<const std::size_t> groups,
                           const EStepConfig& estep, Rng& rng, Vec& accum) = 0;

  // Cheap per-iteration scalar recorded in the trace.
  virtual double diagnostic(const Vec& lambda) const = 0;
};

struct RunConfig {
  MStepKind mstep = MStepKind::SSVI_A;
  EStepConfig estep;
  Schedule schedule;
  std::size_t minibatch = 0;  // 0 = full data
  std::size_t iterations = 0;
  double tol = 0.0;  // advisory relative-change stop; 0 disables
  int patience = 5;
  std::uint64_t seed = 0;
  Vec lambda_init;               // empty = prior + scaled Exponential(1) noise
  double init_noise_scale = 1.0;
};

struct TraceRow {
  std::size_t t = 0;
  double rho = 0.0;
  double multiplier = 0.0;
  std::uint64_t lambda_hash = 0;
  double diagnostic = 0.0;
  double wall_ms = 0.0;
};

struct RunTrace {
  std::vector<TraceRow> rows;
  // Excludes wall_ms so identical (seed, config) runs hash identically.
  std::uint64_t replay_hash() const;
};

struct RunResult {
  Vec lambda;
  RunTrace trace;
  std::size_t iterations_run = 0;
  std::string rng_state;
};

// Carries the partial trace when an E-step aborts an iteration.
struct run_error : std::runtime_error {
  run_error(const std::string& what, RunTrace partial_trace)
      : std::runtime_error(what), partial(std::move(partial_trace)) {}
  RunTrace partial;
};

Vec default_lambda_init(const Vec& prior, double noise_scale, Rng& rng);

RunResult run(Model& model, const RunConfig& config);

struct Checkpoint {
  int version = 1;
  std::string model_name;
  std::size_t iteration = 0;
  Vec lambda;
  std::string rng_state;
  std::uint64_t config_digest = 0;
  std::uint64_t dataset_digest = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ssvi
