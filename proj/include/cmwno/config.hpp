#pragma once

// Experiment configuration: INI-style `key = value` text with one section per
// module. Defaults follow the full-scale protocol; smaller presets live in configs/.

#include "cmwno/model.hpp"
#include "cmwno/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cmwno {

struct DatagenConfig {
    std::size_t train_samples = 1000;
    std::size_t test_samples = 200;
    std::size_t resolution = 1024;
    double lambda = 1.0;                // GS coupling
    std::vector<std::string> init;      // per variable: grf | rand; empty = system default
    std::vector<double> gamma;          // per variable minimal wavelength for rand
    double dt = 0.0;                    // 0 = system default
    std::string train_path;             // empty = <out>/train.cmwds
    std::string test_path;              // empty = <out>/test.cmwds
};

struct TrainConfig {
    std::size_t epochs = 500;
    std::size_t batch = 20;
    nn::AdamConfig adam;
    std::size_t resolution = 256;
    double validation_fraction = 0.1;
    std::vector<double> target_times;   // empty = every nonzero timestamp
    bool timing = false;                // fill the seconds column with wall-clock time
};

struct EvalConfig {
    std::vector<std::size_t> resolutions{256, 512, 1024};
};

struct SweepConfig {
    std::vector<double> lambdas{0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<model::ModelKind> models{model::ModelKind::cmwno, model::ModelKind::mwt_s, model::ModelKind::mwt_c};
};

struct ExperimentConfig {
    std::string system = "gs";  // gs | bz | mfg
    std::string out = "out";
    std::uint64_t seed = 0;
    model::ModelKind kind = model::ModelKind::cmwno;
    model::ModelConfig model;
    DatagenConfig datagen;
    TrainConfig train;
    EvalConfig eval;
    SweepConfig sweep;

    std::string train_path() const;
    std::string test_path() const;
    /// Throws ConfigError on out-of-range values.
    void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::vector<std::string> system_variables(const std::string& system);

}  // namespace cmwno
