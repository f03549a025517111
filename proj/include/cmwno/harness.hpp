#pragma once

// Experiment orchestration behind the `cmwno` CLI: dataset generation,
// training with checkpoints and resume, evaluation across resolutions, the
// lambda sweep and diagnostic dumps.

#include "cmwno/config.hpp"
#include "cmwno/dataset.hpp"
#include "cmwno/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cmwno::harness {

/// Worker cap: CMWNO_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. The first
/// exception by index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// ---- metrics ------------------------------------------------------------

struct MetricsRow {
    std::string model;
    std::string system;
    std::size_t resolution = 0;
    double param = 0.0;  // lambda for gs, target time otherwise
    std::string variable;
    double rel_l2 = 0.0;
    std::size_t epoch = 0;
    double seconds = 0.0;
};

/// Comment line describing the error weighting, then the column header.
std::string metrics_header();
std::string format_row(const MetricsRow& row);
void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(const std::string& path);

// ---- generation ---------------------------------------------------------

datagen::FieldDataset generate_dataset(const ExperimentConfig& cfg, std::size_t count, std::uint64_t master_seed);

struct GenerateOutput {
    std::vector<std::string> files;
};

/// Train and test files at datagen.resolution plus subsampled copies at the
/// train and eval resolutions, named train_s<N>.cmwds / test_s<N>.cmwds.
GenerateOutput cmd_generate(const ExperimentConfig& cfg);

std::string resolution_path(const std::string& path, std::size_t resolution);

// ---- training -----------------------------------------------------------

struct Manifest {
    model::ModelKind kind = model::ModelKind::cmwno;
    std::string system;
    model::ModelConfig config;
    std::vector<std::string> variables;
    std::size_t target_index = 0;
    double target_time = 0.0;
    double lambda = 0.0;
    std::size_t train_resolution = 0;
    std::uint32_t dataset_fingerprint = 0;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;  // epoch of the stored parameters
    double valid_rel_l2 = 0.0;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

struct TrainOptions {
    bool resume = false;
    /// Stop once this epoch finishes, leaving resumable state (0 = run to the end).
    std::size_t stop_after = 0;
};

struct TrainedModel {
    std::string checkpoint;  // best-by-validation parameters
    Manifest manifest;
};

struct TrainOutput {
    std::vector<TrainedModel> models;  // one per target time
    std::vector<MetricsRow> train_rows;
    std::vector<MetricsRow> valid_rows;
};

/// Writes into cfg.out: model_t<j>.{ckpt,manifest,last.ckpt,state}, train_metrics.csv,
/// valid_metrics.csv and train_log.csv.
TrainOutput cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts = {});

/// Loads parameters and manifest saved by cmd_train.
model::Model load_model(const std::string& checkpoint, Manifest* manifest_out = nullptr);
std::string manifest_path_for(const std::string& checkpoint);

// ---- evaluation ---------------------------------------------------------

struct EvalOptions {
    std::vector<std::string> checkpoints;  // empty = every model_t<j>.ckpt in cfg.out
    std::string dataset;                   // empty = cfg.test_path()
    bool oracle = false;                   // score the truth against itself
    std::string csv;                       // empty = <out>/eval.csv
};

/// Mean relative L2 per variable, per resolution in cfg.eval.resolutions, per model.
std::vector<MetricsRow> cmd_eval(const ExperimentConfig& cfg, const EvalOptions& opts = {});

/// Per-variable mean relative L2 of `model` on (inputs at t=0, targets at t_index).
std::vector<double> evaluate(model::Model& model, const datagen::FieldDataset& ds, std::size_t t_index,
                             std::size_t batch);

// ---- lambda sweep -------------------------------------------------------

struct Degradation {
    std::string model;
    std::string variable;
    double lambda_low = 0.0, lambda_high = 0.0;
    double e_low = 0.0, e_high = 0.0;
    double ratio = 0.0;  // (e_high - e_low) / e_low
};

struct SweepOutput {
    std::vector<MetricsRow> rows;  // sorted by (model, lambda, variable)
    std::vector<Degradation> degradation;
};

/// Per lambda: generate (or reuse) data in <out>/lambda_<x>, train every
/// configured model in <out>/lambda_<x>/<model>, evaluate at train.resolution.
/// Runs already present for matching data are resumed, so finished ones are
/// not retrained. Writes sweep.csv and degradation.csv.
SweepOutput cmd_sweep_lambda(const ExperimentConfig& cfg);

// ---- inspection ---------------------------------------------------------

struct InspectOptions {
    std::string what;             // filters | coeffs | gradcheck
    int k = 4;
    std::string dataset;          // coeffs: dataset file
    std::size_t sample = 0;
    std::string variable;         // empty = first variable
    double time = 0.0;
    std::optional<double> constant;  // coeffs: use a constant field instead of a dataset
    std::size_t resolution = 64;     // coeffs with constant
    std::uint64_t seed = 0;
};

/// Writes CSV or a report to `out`; returns the process exit code.
int cmd_inspect(const InspectOptions& opts, std::ostream& out);

}  // namespace cmwno::harness
