#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "ssvi/engine.hpp"
#include "ssvi/eval.hpp"

namespace ssvi::harness {

// Parsed view of the single JSON config file driving every subcommand. The
// raw document is kept alongside: its canonical dump is the config digest
// stamped into checkpoints, traces and metrics.
struct HarnessConfig {
  std::string model;  // "dpmb" | "lda"
  std::uint64_t seed = 0;

  struct DpmbData {
    std::size_t K = 100, D = 100, N = 1000;
    double alpha = 20.0;
    std::string path = "dpmb_dataset.json";
    std::string csv;  // optional inspection export
  } dpmb;

  struct LdaData {
    std::size_t K = 10, V = 200, docs = 2000, test_docs = 200, doc_len = 50;
    double alpha = 0.1, eta = 0.1;
    std::string train_path = "lda_train.txt";
    std::string test_path = "lda_test.txt";
    std::string topics_csv;  // optional ground-truth export
  } lda;

  struct Fit {
    EStepConfig estep;
    MStepKind mstep = MStepKind::SSVI_A;
    Schedule schedule;
    std::size_t minibatch = 0;  // 0 = full data
    std::size_t iterations = 100;
    double tol = 0.0;
    int patience = 5;
    double alpha = 0.0;  // model hyper at fit time; defaults from the data section
    double eta = 0.0;    // lda topic prior at fit time
    std::string checkpoint = "checkpoint.json";
    std::string trace = "trace.csv";
  } fit;

  struct Evaluate {
    std::size_t kl_samples = 100000;
    double active_threshold = 1.0;
    std::string metrics = "metrics.json";
  } evaluate;

  struct Cgs {
    int sweeps = 500;
    int burn_in = 250;
  } cgs;

  struct Matrix {
    std::vector<EStepKind> esteps;
    std::vector<MStepKind> msteps;
    std::vector<double> etas;
    std::vector<std::uint64_t> seeds;
    std::string out = "matrix.csv";
  } matrix;

  nlohmann::json raw;
  std::uint64_t digest() const;
};

MStepKind parse_mstep(const std::string& name);
EStepKind parse_estep(const std::string& name);
std::string mstep_name(MStepKind kind);
std::string estep_name(EStepKind kind);

HarnessConfig parse_config(const nlohmann::json& j);
HarnessConfig load_config(const std::string& path);

void write_trace_csv(const RunTrace& trace, const std::string& path);

struct FitOutcome {
  Checkpoint checkpoint;
  RunTrace trace;
};

void cmd_generate(const HarnessConfig& cfg);
FitOutcome cmd_fit(const HarnessConfig& cfg);
FitOutcome cmd_warmstart(const HarnessConfig& cfg, const std::string& checkpoint_path);
nlohmann::json cmd_evaluate(const HarnessConfig& cfg, const std::string& checkpoint_path);

struct MatrixOutcome {
  std::size_t rows = 0;
  std::size_t failures = 0;
};
MatrixOutcome cmd_matrix(const HarnessConfig& cfg);

}  // namespace ssvi::harness
