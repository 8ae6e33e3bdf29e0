#include "ssvi/harness.hpp"

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace ssvi::harness {

namespace {
constexpr std::uint64_t kEvalStream = 0x4556414c;  // "EVAL"
constexpr std::uint64_t kCgsStream = 0x434753;     // "CGS"
constexpr std::uint64_t kTestDocStream = 0x54455354;
}  // namespace

std::uint64_t HarnessConfig::digest() const {
  const std::string canonical = raw.dump();
  return fnv1a(canonical.data(), canonical.size());
}

MStepKind parse_mstep(const std::string& name) {
  if (name == "meanfield") return MStepKind::MeanFieldSVI;
  if (name == "ssvi") return MStepKind::SSVI;
  if (name == "ssvi_a") return MStepKind::SSVI_A;
  throw std::domain_error("config: unknown mstep '" + name +
                          "' (expected meanfield | ssvi | ssvi_a)");
}

EStepKind parse_estep(const std::string& name) {
  if (name == "exact") return EStepKind::ExactConditional;
  if (name == "meanfield") return EStepKind::MeanField;
  if (name == "gibbs") return EStepKind::Gibbs;
  throw std::domain_error("config: unknown estep '" + name +
                          "' (expected exact | meanfield | gibbs)");
}

std::string mstep_name(MStepKind kind) {
  switch (kind) {
    case MStepKind::MeanFieldSVI: return "meanfield";
    case MStepKind::SSVI: return "ssvi";
    case MStepKind::SSVI_A: return "ssvi_a";
  }
  return "?";
}

std::string estep_name(EStepKind kind) {
  switch (kind) {
    case EStepKind::ExactConditional: return "exact";
    case EStepKind::MeanField: return "meanfield";
    case EStepKind::Gibbs: return "gibbs";
  }
  return "?";
}

namespace {

void validate(const HarnessConfig& cfg) {
  if (cfg.model != "dpmb" && cfg.model != "lda")
    throw std::domain_error("config: model must be 'dpmb' or 'lda'");
  if (cfg.model == "lda" && cfg.fit.estep.kind == EStepKind::ExactConditional)
    throw std::domain_error("config: the exact-conditional E-step is intractable for lda");
  const auto& s = cfg.fit.schedule;
  if (!(s.scale > 0.0 && s.scale <= 1.0))
    throw std::domain_error("config: schedule.s must lie in (0, 1]");
  if (!(s.kappa > 0.5 && s.kappa <= 1.0))
    throw std::domain_error("config: schedule.kappa must lie in (0.5, 1]");
  const std::size_t n_groups = cfg.model == "dpmb" ? cfg.dpmb.N : cfg.lda.docs;
  if (cfg.fit.minibatch > n_groups)
    throw std::domain_error("config: minibatch exceeds the number of groups");
  if (cfg.fit.estep.num_samples < 1 || cfg.fit.estep.burn_in < 0)
    throw std::domain_error("config: estep sampling parameters out of range");
}

}  // namespace

HarnessConfig parse_config(const nlohmann::json& j) {
  HarnessConfig cfg;
  cfg.raw = j;
  cfg.model = j.at("model").get<std::string>();
  if (!j.contains("seed")) throw std::domain_error("config: seed is mandatory");
  cfg.seed = j.at("seed").get<std::uint64_t>();

  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (cfg.model == "dpmb") {
      cfg.dpmb.K = d.value("K", cfg.dpmb.K);
      cfg.dpmb.D = d.value("D", cfg.dpmb.D);
      cfg.dpmb.N = d.value("N", cfg.dpmb.N);
      cfg.dpmb.alpha = d.value("alpha", cfg.dpmb.alpha);
      cfg.dpmb.path = d.value("path", cfg.dpmb.path);
      cfg.dpmb.csv = d.value("csv", cfg.dpmb.csv);
    } else {
      cfg.lda.K = d.value("K", cfg.lda.K);
      cfg.lda.V = d.value("V", cfg.lda.V);
      cfg.lda.docs = d.value("docs", cfg.lda.docs);
      cfg.lda.test_docs = d.value("test_docs", cfg.lda.test_docs);
      cfg.lda.doc_len = d.value("doc_len", cfg.lda.doc_len);
      cfg.lda.alpha = d.value("alpha", cfg.lda.alpha);
      cfg.lda.eta = d.value("eta", cfg.lda.eta);
      cfg.lda.train_path = d.value("train_path", cfg.lda.train_path);
      cfg.lda.test_path = d.value("test_path", cfg.lda.test_path);
      cfg.lda.topics_csv = d.value("topics_csv", cfg.lda.topics_csv);
    }
  }

  cfg.fit.alpha = cfg.model == "dpmb" ? cfg.dpmb.alpha : cfg.lda.alpha;
  cfg.fit.eta = cfg.lda.eta;
  if (j.contains("fit")) {
    const auto& f = j.at("fit");
    if (f.contains("estep")) {
      const auto& e = f.at("estep");
      cfg.fit.estep.kind = parse_estep(e.value("kind", std::string("exact")));
      cfg.fit.estep.num_samples = e.value("num_samples", cfg.fit.estep.num_samples);
      cfg.fit.estep.burn_in = e.value("burn_in", cfg.fit.estep.burn_in);
      cfg.fit.estep.max_iters = e.value("max_iters", cfg.fit.estep.max_iters);
      cfg.fit.estep.tol = e.value("tol", cfg.fit.estep.tol);
    }
    cfg.fit.mstep = parse_mstep(f.value("mstep", std::string("ssvi_a")));
    if (f.contains("schedule")) {
      const auto& s = f.at("schedule");
      cfg.fit.schedule.scale = s.value("s", cfg.fit.schedule.scale);
      cfg.fit.schedule.kappa = s.value("kappa", cfg.fit.schedule.kappa);
      cfg.fit.schedule.ramp = s.value("ramp", cfg.fit.schedule.ramp);
    }
    cfg.fit.minibatch = f.value("minibatch", cfg.fit.minibatch);
    cfg.fit.iterations = f.value("iterations", cfg.fit.iterations);
    cfg.fit.tol = f.value("tol", cfg.fit.tol);
    cfg.fit.patience = f.value("patience", cfg.fit.patience);
    cfg.fit.alpha = f.value("alpha", cfg.fit.alpha);
    cfg.fit.eta = f.value("eta", cfg.fit.eta);
    cfg.fit.checkpoint = f.value("checkpoint", cfg.fit.checkpoint);
    cfg.fit.trace = f.value("trace", cfg.fit.trace);
  }

  if (j.contains("evaluate")) {
    const auto& e = j.at("evaluate");
    cfg.evaluate.kl_samples = e.value("kl_samples", cfg.evaluate.kl_samples);
    cfg.evaluate.active_threshold =
        e.value("active_threshold", cfg.evaluate.active_threshold);
    cfg.evaluate.metrics = e.value("metrics", cfg.evaluate.metrics);
  }

  if (j.contains("cgs")) {
    cfg.cgs.sweeps = j.at("cgs").value("sweeps", cfg.cgs.sweeps);
    cfg.cgs.burn_in = j.at("cgs").value("burn_in", cfg.cgs.burn_in);
  }

  if (j.contains("matrix")) {
    const auto& m = j.at("matrix");
    for (const auto& e : m.value("esteps", std::vector<std::string>{}))
      cfg.matrix.esteps.push_back(parse_estep(e));
    for (const auto& s : m.value("msteps", std::vector<std::string>{}))
      cfg.matrix.msteps.push_back(parse_mstep(s));
    cfg.matrix.etas = m.value("etas", std::vector<double>{});
    cfg.matrix.seeds = m.value("seeds", std::vector<std::uint64_t>{});
    cfg.matrix.out = m.value("out", cfg.matrix.out);
  }
  if (cfg.matrix.esteps.empty()) cfg.matrix.esteps = {cfg.fit.estep.kind};
  if (cfg.matrix.msteps.empty()) cfg.matrix.msteps = {cfg.fit.mstep};
  if (cfg.matrix.etas.empty()) cfg.matrix.etas = {cfg.fit.eta};
  if (cfg.matrix.seeds.empty()) cfg.matrix.seeds = {cfg.seed};

  validate(cfg);
  return cfg;
}

HarnessConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot read " + path);
  nlohmann::json j;
  in >> j;
  return parse_config(j);
}

void write_trace_csv(const RunTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot write " + path);
  out << "t,rho,multiplier,lambda_hash,diag,wall_ms\n";
  out.precision(17);
  for (const auto& r : trace.rows) {
    out << r.t << ',' << r.rho << ',' << r.multiplier << ',' << std::hex
        << r.lambda_hash << std::dec << ',' << r.diagnostic << ',' << r.wall_ms
        << '\n';
  }
}

void cmd_generate(const HarnessConfig& cfg) {
  if (cfg.model == "dpmb") {
    const auto data = dpmb::generate(cfg.dpmb.K, cfg.dpmb.D, cfg.dpmb.N,
                                     cfg.dpmb.alpha, cfg.seed);
    dpmb::save_dataset(data, cfg.dpmb.path);
    if (!cfg.dpmb.csv.empty()) dpmb::export_csv(data, cfg.dpmb.csv);
    std::cout << "generated model=dpmb N=" << data.N << " D=" << data.D
              << " true_components=" << dpmb::distinct_assignments(data)
              << " path=" << cfg.dpmb.path << "\n";
    return;
  }
  Rng rng(derive_seed(cfg.seed, kTestDocStream));
  const Mat topics = lda::sample_topics(cfg.lda.K, cfg.lda.V, cfg.lda.eta, rng);
  const auto train =
      lda::sample_docs(topics, cfg.lda.docs, cfg.lda.doc_len, cfg.lda.alpha, rng);
  const auto test = lda::sample_docs(topics, cfg.lda.test_docs, cfg.lda.doc_len,
                                     cfg.lda.alpha, rng);
  lda::save_corpus(train, cfg.lda.train_path);
  lda::save_corpus(test, cfg.lda.test_path);
  if (!cfg.lda.topics_csv.empty()) lda::export_topics_csv(topics, cfg.lda.topics_csv);
  std::cout << "generated model=lda docs=" << train.docs.size()
            << " test_docs=" << test.docs.size() << " V=" << train.vocab_size
            << " path=" << cfg.lda.train_path << "\n";
}

namespace {

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::uint64_t dataset_digest = 0;
  // dpmb only
  std::unique_ptr<dpmb::Dataset> dataset;
  // lda only
  std::unique_ptr<lda::Corpus> corpus;
};

LoadedModel load_model(const HarnessConfig& cfg) {
  LoadedModel lm;
  if (cfg.model == "dpmb") {
    lm.dataset = std::make_unique<dpmb::Dataset>(dpmb::load_dataset(cfg.dpmb.path));
    if (lm.dataset->N != cfg.dpmb.N || lm.dataset->D != cfg.dpmb.D)
      throw std::domain_error("fit: dataset dimensions do not match the config");
    lm.dataset_digest = lm.dataset->digest();
    lm.model = std::make_unique<dpmb::DPMBModel>(*lm.dataset, cfg.dpmb.K,
                                                 cfg.fit.alpha);
  } else {
    lm.corpus = std::make_unique<lda::Corpus>(lda::load_corpus(cfg.lda.train_path));
    if (lm.corpus->vocab_size != cfg.lda.V ||
        lm.corpus->docs.size() != cfg.lda.docs)
      throw std::domain_error("fit: corpus dimensions do not match the config");
    lm.dataset_digest = lm.corpus->digest();
    lm.model = std::make_unique<lda::LDAModel>(*lm.corpus, cfg.lda.K,
                                               cfg.fit.alpha, cfg.fit.eta);
  }
  return lm;
}

RunConfig make_run_config(const HarnessConfig& cfg, std::size_t n_groups,
                          std::size_t components) {
  RunConfig rc;
  rc.mstep = cfg.fit.mstep;
  rc.estep = cfg.fit.estep;
  rc.schedule = cfg.fit.schedule;
  rc.minibatch = cfg.fit.minibatch;
  rc.iterations = cfg.fit.iterations;
  rc.tol = cfg.fit.tol;
  rc.patience = cfg.fit.patience;
  rc.seed = cfg.seed;
  rc.init_noise_scale =
      static_cast<double>(n_groups) / static_cast<double>(components);
  return rc;
}

FitOutcome fit_impl(const HarnessConfig& cfg, const Vec* lambda_init) {
  LoadedModel lm = load_model(cfg);
  RunConfig rc = make_run_config(cfg, lm.model->num_groups(),
                                 cfg.model == "dpmb" ? cfg.dpmb.K : cfg.lda.K);
  if (lambda_init) rc.lambda_init = *lambda_init;

  const RunResult result = run(*lm.model, rc);

  FitOutcome out;
  out.trace = result.trace;
  out.checkpoint.model_name = cfg.model;
  out.checkpoint.iteration = result.iterations_run;
  out.checkpoint.lambda = result.lambda;
  out.checkpoint.rng_state = result.rng_state;
  out.checkpoint.config_digest = cfg.digest();
  out.checkpoint.dataset_digest = lm.dataset_digest;
  save_checkpoint(out.checkpoint, cfg.fit.checkpoint);
  write_trace_csv(out.trace, cfg.fit.trace);
  std::cout << "fit model=" << cfg.model << " mstep=" << mstep_name(cfg.fit.mstep)
            << " estep=" << estep_name(cfg.fit.estep.kind)
            << " iterations=" << result.iterations_run
            << " trace_hash=" << std::hex << out.trace.replay_hash() << std::dec
            << " checkpoint=" << cfg.fit.checkpoint << "\n";
  return out;
}

}  // namespace

FitOutcome cmd_fit(const HarnessConfig& cfg) { return fit_impl(cfg, nullptr); }

FitOutcome cmd_warmstart(const HarnessConfig& cfg,
                         const std::string& checkpoint_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.model_name != cfg.model)
    throw std::domain_error("warmstart: checkpoint model '" + ckpt.model_name +
                            "' does not match config model '" + cfg.model + "'");
  LoadedModel lm = load_model(cfg);
  if (ckpt.dataset_digest != lm.dataset_digest)
    throw std::domain_error("warmstart: checkpoint dataset digest mismatch");
  if (ckpt.lambda.size() != lm.model->layout().dim())
    throw std::domain_error("warmstart: checkpoint dimension mismatch");
  return fit_impl(cfg, &ckpt.lambda);
}

nlohmann::json cmd_evaluate(const HarnessConfig& cfg,
                            const std::string& checkpoint_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.model_name != cfg.model)
    throw std::domain_error("evaluate: checkpoint model mismatch");

  nlohmann::json metrics;
  metrics["schema_version"] = 1;
  metrics["model"] = cfg.model;
  metrics["seed"] = cfg.seed;
  metrics["config_digest"] = cfg.digest();
  metrics["checkpoint"] = checkpoint_path;
  metrics["checkpoint_iteration"] = ckpt.iteration;

  if (cfg.model == "dpmb") {
    const auto data = dpmb::load_dataset(cfg.dpmb.path);
    const auto est = dpmb::point_estimate(cfg.dpmb.K, data.D, cfg.fit.alpha,
                                          ckpt.lambda);
    const Vec mass = eval::expected_assignment_mass(data, est);
    metrics["active_components"] =
        eval::count_active_components(mass, cfg.evaluate.active_threshold);
    if (data.has_truth) {
      Rng rng(derive_seed(cfg.seed, kEvalStream));
      const auto kl =
          eval::mc_kl_dpmb(data.truth, est, cfg.evaluate.kl_samples, rng);
      metrics["kl"] = kl.value;
      metrics["kl_std_error"] = kl.std_error;
      metrics["kl_samples"] = kl.num_samples;
    } else {
      metrics["kl"] = nullptr;
      metrics["note"] = "dataset has no ground truth; KL disabled";
    }
  } else {
    const auto test = lda::load_corpus(cfg.lda.test_path);
    if (test.vocab_size != cfg.lda.V)
      throw std::domain_error("evaluate: test corpus vocabulary mismatch");
    const Mat topics = lda::point_topics(cfg.lda.K, cfg.lda.V, ckpt.lambda);
    metrics["heldout_log_lik_per_word"] =
        eval::heldout_predictive_lda(test, topics, cfg.fit.alpha);
  }

  std::ofstream out(cfg.evaluate.metrics);
  if (!out) throw std::runtime_error("evaluate: cannot write " + cfg.evaluate.metrics);
  out << metrics.dump(2) << '\n';
  std::cout << "evaluate model=" << cfg.model << " metrics=" << cfg.evaluate.metrics
            << "\n";
  return metrics;
}

MatrixOutcome cmd_matrix(const HarnessConfig& cfg) {
  std::ofstream out(cfg.matrix.out);
  if (!out) throw std::runtime_error("matrix: cannot write " + cfg.matrix.out);
  out << "model,estep,mstep,eta,seed,status,iterations,kl,kl_std_error,"
         "active_components,heldout_log_lik_per_word,error\n";
  out.precision(17);

  MatrixOutcome outcome;
  for (const auto estep : cfg.matrix.esteps) {
    for (const auto mstep : cfg.matrix.msteps) {
      for (const double eta : cfg.matrix.etas) {
        for (const std::uint64_t seed : cfg.matrix.seeds) {
          HarnessConfig cell = cfg;
          cell.seed = seed;
          cell.fit.estep.kind = estep;
          cell.fit.mstep = mstep;
          cell.fit.eta = eta;
          cell.raw["seed"] = seed;
          cell.raw["fit"]["estep"]["kind"] = estep_name(estep);
          cell.raw["fit"]["mstep"] = mstep_name(mstep);
          cell.raw["fit"]["eta"] = eta;

          out << cfg.model << ',' << estep_name(estep) << ',' << mstep_name(mstep)
              << ',' << eta << ',' << seed << ',';
          ++outcome.rows;
          try {
            LoadedModel lm = load_model(cell);
            RunConfig rc = make_run_config(
                cell, lm.model->num_groups(),
                cell.model == "dpmb" ? cell.dpmb.K : cell.lda.K);
            const RunResult result = run(*lm.model, rc);

            std::string kl = "", kl_se = "", active = "", heldout = "";
            if (cell.model == "dpmb") {
              const auto est = dpmb::point_estimate(cell.dpmb.K, cell.dpmb.D,
                                                    cell.fit.alpha, result.lambda);
              const Vec mass = eval::expected_assignment_mass(*lm.dataset, est);
              active = std::to_string(eval::count_active_components(
                  mass, cell.evaluate.active_threshold));
              if (lm.dataset->has_truth) {
                Rng rng(derive_seed(seed, kEvalStream));
                const auto est_kl = eval::mc_kl_dpmb(lm.dataset->truth, est,
                                                     cell.evaluate.kl_samples, rng);
                kl = std::to_string(est_kl.value);
                kl_se = std::to_string(est_kl.std_error);
              }
            } else {
              const auto test = lda::load_corpus(cell.lda.test_path);
              const Mat topics =
                  lda::point_topics(cell.lda.K, cell.lda.V, result.lambda);
              heldout = std::to_string(
                  eval::heldout_predictive_lda(test, topics, cell.fit.alpha));
            }
            out << "ok," << result.iterations_run << ',' << kl << ',' << kl_se
                << ',' << active << ',' << heldout << ",\n";
          } catch (const std::exception& e) {
            ++outcome.failures;
            std::string what = e.what();
            for (char& ch : what)
              if (ch == ',' || ch == '\n') ch = ';';
            out << "failed,,,,,," << what << "\n";
          }
        }
      }
    }
  }
  std::cout << "matrix rows=" << outcome.rows << " failures=" << outcome.failures
            << " out=" << cfg.matrix.out << "\n";
  return outcome;
}

}  // namespace ssvi::harness
