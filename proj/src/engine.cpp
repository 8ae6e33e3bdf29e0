#include "ssvi/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace ssvi {

namespace {
constexpr double kBetaFloor = 1e-12;
constexpr std::uint64_t kRunStream = 0x52554e; // "RUN"
}  // namespace

double step_size(std::size_t t, const Schedule& sched) {
  if (t < 1) throw std::domain_error("step_size: t must be >= 1");
  return sched.scale * std::pow(static_cast<double>(t), -sched.kappa);
}

double data_multiplier(std::size_t t, std::size_t total_groups,
                       std::size_t minibatch, const Schedule& sched) {
  if (minibatch < 1 || minibatch > total_groups)
    throw std::domain_error("data_multiplier: need 1 <= minibatch <= total_groups");
  const auto n = static_cast<double>(total_groups);
  const auto s = static_cast<double>(minibatch);
  if (!sched.ramp) return n / s;
  const double n_eff = std::min(static_cast<double>(t) * s, n);
  return n_eff / s;
}

BlockLayout BlockLayout::uniform(Family family, std::size_t blocks,
                                 std::size_t block_dim) {
  BlockLayout layout;
  layout.families.assign(blocks, family);
  layout.offsets.resize(blocks + 1);
  for (std::size_t b = 0; b <= blocks; ++b) layout.offsets[b] = b * block_dim;
  return layout;
}

BlockedDraw sample_global(const BlockLayout& layout, const Vec& lambda, Rng& rng) {
  BlockedDraw draw;
  draw.beta.resize(layout.dim());
  draw.uniforms.resize(layout.dim());
  draw.auxiliaries.resize(layout.dim());
  for (double& u : draw.uniforms) u = rng.uniform();
  for (std::size_t b = 0; b < layout.blocks(); ++b) {
    sample_by_inversion(layout.families[b], layout.block(lambda, b),
                        layout.block(draw.uniforms, b),
                        layout.block(draw.beta, b),
                        layout.block(draw.auxiliaries, b));
  }
  return draw;
}

Vec mean_point(const BlockLayout& layout, const Vec& lambda) {
  Vec point(layout.dim());
  for (std::size_t b = 0; b < layout.blocks(); ++b) {
    grad_log_normalizer(layout.families[b], layout.block(lambda, b),
                        layout.block(point, b));
  }
  for (double& v : point) v = std::exp(v);
  return point;
}

void apply_v_block(Family family, std::span<const double> lambda,
                   std::span<const double> beta, std::span<const double> aux,
                   std::span<const double> stats, std::span<double> out) {
  const std::size_t k = lambda.size();
  const Vec d = quantile_param_derivatives(family, lambda, aux);
  if (family == Family::Gamma) {
    for (std::size_t i = 0; i < k; ++i) {
      const double b = std::max(beta[i], kBetaFloor);
      out[i] = d[i] * stats[i] / b / trigamma(lambda[i]);
    }
    return;
  }
  double aux_sum = 0.0, stat_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    aux_sum += aux[i];
    stat_sum += stats[i];
  }
  if (!(aux_sum > 0.0))
    throw singularity_error("apply_v_block: degenerate draw (zero gamma mass)");
  Vec y(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double b = std::max(beta[i], kBetaFloor);
    y[i] = d[i] * (stats[i] / b - stat_sum) / aux_sum;
  }
  fisher_inverse_apply(family, lambda, y, out);
}

Vec apply_v(const BlockLayout& layout, const Vec& lambda,
            const BlockedDraw& draw, const Vec& stats) {
  Vec out(layout.dim());
  for (std::size_t b = 0; b < layout.blocks(); ++b) {
    apply_v_block(layout.families[b], layout.block(lambda, b),
                  layout.block(draw.beta, b), layout.block(draw.auxiliaries, b),
                  layout.block(stats, b), layout.block(out, b));
  }
  return out;
}

namespace {

void check_rho(double rho) {
  if (!(rho > 0.0 && rho <= 1.0))
    throw std::domain_error("m-step: rho must lie in (0, 1]");
}

Vec blend_to_target(const Vec& lambda, const Vec& target, double rho) {
  Vec next(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    next[i] = (1.0 - rho) * lambda[i] + rho * target[i];
    next[i] = std::max(next[i], kDomainFloor);
  }
  return next;
}

}  // namespace

Vec mstep_meanfield(const Vec& lambda, const Vec& prior, const Vec& scaled_stats,
                    double rho) {
  check_rho(rho);
  Vec target(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i)
    target[i] = prior[i] + scaled_stats[i];
  return blend_to_target(lambda, target, rho);
}

Vec mstep_ssvi_a(const Vec& lambda, const Vec& prior, const Vec& scaled_stats,
                 double rho) {
  return mstep_meanfield(lambda, prior, scaled_stats, rho);
}

Vec mstep_ssvi(const BlockLayout& layout, const Vec& lambda, const Vec& prior,
               const BlockedDraw& draw, const Vec& scaled_stats, double rho) {
  check_rho(rho);
  const Vec v_stats = apply_v(layout, lambda, draw, scaled_stats);
  Vec target(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i)
    target[i] = prior[i] + v_stats[i];
  return blend_to_target(lambda, target, rho);
}

std::uint64_t RunTrace::replay_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& r : rows) {
    h = fnv1a(&r.t, sizeof(r.t), h);
    h = fnv1a(&r.rho, sizeof(r.rho), h);
    h = fnv1a(&r.multiplier, sizeof(r.multiplier), h);
    h = fnv1a(&r.lambda_hash, sizeof(r.lambda_hash), h);
    h = fnv1a(&r.diagnostic, sizeof(r.diagnostic), h);
  }
  return h;
}

Vec default_lambda_init(const Vec& prior, double noise_scale, Rng& rng) {
  Vec lambda(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i)
    lambda[i] = prior[i] + noise_scale * rng.exponential();
  return lambda;
}

RunResult run(Model& model, const RunConfig& config) {
  const BlockLayout& layout = model.layout();
  const Vec& prior = model.prior();
  const std::size_t n_groups = model.num_groups();
  const std::size_t batch =
      config.minibatch == 0 ? n_groups : config.minibatch;
  if (n_groups == 0) throw std::domain_error("run: model has no groups");
  if (batch < 1 || batch > n_groups)
    throw std::domain_error("run: need 1 <= minibatch <= groups");
  if (!model.supports(config.estep.kind))
    throw std::domain_error(std::string("run: model '") +
                            std::string(model.name()) +
                            "' does not support the requested E-step");

  Rng rng(derive_seed(config.seed, kRunStream));
  Vec lambda = config.lambda_init.empty()
                   ? default_lambda_init(prior, config.init_noise_scale, rng)
                   : config.lambda_init;
  if (lambda.size() != layout.dim())
    throw std::domain_error("run: lambda_init has the wrong dimension");

  std::vector<std::size_t> order(n_groups);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n_groups;  // forces a shuffle before the first batch

  RunResult result;
  Vec accum(layout.dim());
  std::vector<std::size_t> groups(batch);
  int stable = 0;

  for (std::size_t t = 1; t <= config.iterations; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const double rho = step_size(t, config.schedule);
    const double mult = data_multiplier(t, n_groups, batch, config.schedule);

    // without-replacement sampling within a sweep, reshuffled per sweep
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == n_groups) {
        rng.shuffle(order);
        cursor = 0;
      }
      groups[i] = order[cursor++];
    }

    Vec next;
    try {
      std::fill(accum.begin(), accum.end(), 0.0);
      if (config.mstep == MStepKind::MeanFieldSVI) {
        const Vec point = mean_point(layout, lambda);
        model.batch_stats(point, groups, config.estep, rng, accum);
        for (double& v : accum) v *= mult;
        next = mstep_meanfield(lambda, prior, accum, rho);
      } else {
        const BlockedDraw draw = sample_global(layout, lambda, rng);
        model.batch_stats(draw.beta, groups, config.estep, rng, accum);
        for (double& v : accum) v *= mult;
        next = config.mstep == MStepKind::SSVI
                   ? mstep_ssvi(layout, lambda, prior, draw, accum, rho)
                   : mstep_ssvi_a(lambda, prior, accum, rho);
      }
    } catch (const std::exception& e) {
      throw run_error("run: iteration " + std::to_string(t) +
                          " aborted: " + e.what(),
                      std::move(result.trace));
    }

    TraceRow row;
    row.t = t;
    row.rho = rho;
    row.multiplier = mult;
    row.lambda_hash = hash_doubles(next);
    row.diagnostic = model.diagnostic(next);
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.trace.rows.push_back(row);

    if (config.tol > 0.0) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < lambda.size(); ++i) {
        num += (next[i] - lambda[i]) * (next[i] - lambda[i]);
        den += lambda[i] * lambda[i];
      }
      stable = num <= config.tol * config.tol * den ? stable + 1 : 0;
    }
    lambda = std::move(next);
    result.iterations_run = t;
    if (config.tol > 0.0 && stable >= config.patience) break;
  }

  result.lambda = std::move(lambda);
  result.rng_state = rng.state();
  return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json j;
  j["version"] = ckpt.version;
  j["model"] = ckpt.model_name;
  j["iteration"] = ckpt.iteration;
  j["lambda"] = ckpt.lambda;
  j["rng_state"] = ckpt.rng_state;
  j["config_digest"] = ckpt.config_digest;
  j["dataset_digest"] = ckpt.dataset_digest;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  nlohmann::json j;
  in >> j;
  Checkpoint ckpt;
  ckpt.version = j.at("version").get<int>();
  if (ckpt.version != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");
  ckpt.model_name = j.at("model").get<std::string>();
  ckpt.iteration = j.at("iteration").get<std::size_t>();
  ckpt.lambda = j.at("lambda").get<Vec>();
  ckpt.rng_state = j.at("rng_state").get<std::string>();
  ckpt.config_digest = j.at("config_digest").get<std::uint64_t>();
  ckpt.dataset_digest = j.at("dataset_digest").get<std::uint64_t>();
  return ckpt;
}

}  // namespace ssvi
