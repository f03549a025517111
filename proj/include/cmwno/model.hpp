#pragma once

// Multiwavelet neural operators: the single operator, the coupled operator
// with cross-operator coefficient exchange, the MWT_s / MWT_c baselines and
// the dice-ordered training step.

#include "cmwno/multiwavelet.hpp"
#include "cmwno/nn.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmwno::model {

enum class ModelKind { cmwno, mwt_s, mwt_c };

ModelKind parse_model_kind(std::string_view text);
std::string to_string(ModelKind kind);

struct ModelConfig {
    int k = 4;              // multiwavelet order
    std::size_t c = 32;     // channel multiplier; c*k features per position
    int floor = 0;          // coarsest decomposition level L
    std::size_t width = 0;  // conv output channels inside A, B, C; 0 means c*k

    std::size_t features() const { return c * static_cast<std::size_t>(k); }
    std::size_t hidden() const { return width == 0 ? features() : width; }
};

/// conv(3, pad 1) -> ReLU -> pointwise linear back to c*k channels.
struct ConvBranch {
    nn::Conv1dLayer conv;
    nn::LinearLayer proj;
};

/// The four maps {A, B, C, Tbar} realizing one operator in wavelet space,
/// shared across all decomposition levels.
struct KernelNets {
    ConvBranch a, b, c;
    nn::LinearLayer tbar;  // k -> k, applied to each of the c channel groups
};

struct LiftProject {
    nn::LinearLayer lift;     // input features -> c*k, per grid point
    nn::LinearLayer project;  // c*k -> outputs, per grid point
};

struct OperatorNets {
    std::string name;
    KernelNets kernels;
    LiftProject lp;

    std::vector<nn::Parameter*> parameters();
};

OperatorNets make_operator(const std::string& name, const ModelConfig& cfg, std::size_t in_features,
                           std::size_t out_features, std::mt19937_64& rng);

/// Wavelet-domain outputs of one operator, coarsest level first:
/// detail[i] = A(d) + B(s), scaling[i] = C(d) at level floor + i; coarse = Tbar(s^L).
struct WaveletBlocks {
    std::vector<nn::Var> detail;
    std::vector<nn::Var> scaling;
    nn::Var coarse;
};

struct OperatorForward {
    nn::Var field;  // (B, outputs, N)
    WaveletBlocks blocks;
};

// ---- wavelet cascade on the tape (channel-major, c groups of k) ----------

struct DecomposeResult {
    nn::Var coarse;
    nn::Var detail;
};

DecomposeResult decompose(nn::Var fine, const mw::FilterBank& fb);
nn::Var reconstruct(nn::Var coarse, nn::Var detail, const mw::FilterBank& fb);

/// Lift, decompose to `floor`, apply {A, B, C, Tbar} per level.
WaveletBlocks kernel_blocks(nn::Tape& tape, OperatorNets& op, const mw::FilterBank& fb, const ModelConfig& cfg,
                            nn::Var features, bool trainable = true);

/// Inverse cascade over `own` blocks plus, per level, every block in `cross`
/// after stop_gradient and scaling by `cross_scale`; then project.
nn::Var reconstruct_and_project(nn::Tape& tape, OperatorNets& op, const mw::FilterBank& fb, const WaveletBlocks& own,
                                std::span<const WaveletBlocks> cross, double cross_scale = 1.0,
                                bool trainable = true);

/// (B, F, N) input features: the given (B, 1, N) fields followed by the grid
/// coordinate i/N.
nn::Tensor make_features(std::span<const nn::Tensor* const> fields);

OperatorForward single_operator_forward(nn::Tape& tape, OperatorNets& op, const mw::FilterBank& fb,
                                        const ModelConfig& cfg, const nn::Tensor& field, bool trainable = true);

// ---- model --------------------------------------------------------------

struct Model {
    ModelKind kind = ModelKind::cmwno;
    ModelConfig config;
    mw::FilterBank fb;
    std::vector<std::string> variables;
    std::vector<OperatorNets> ops;  // one per variable, or a single one for mwt_c

    static Model create(ModelKind kind, std::vector<std::string> variables, const ModelConfig& cfg,
                        std::uint64_t seed);

    std::vector<nn::Parameter*> parameters();
    std::size_t parameter_count() const;
};

/// Prediction for operator `live`: its own blocks plus the stop_gradient'ed
/// blocks of every other operator (scaled by cross_scale). inits holds one
/// (B, 1, N) field per operator.
nn::Var coupled_forward(nn::Tape& tape, Model& model, std::span<const nn::Tensor> inits, std::size_t live,
                        double cross_scale = 1.0);

/// MWT_c: one operator over concatenated fields, one output channel per field.
std::vector<nn::Var> mwt_c_forward(nn::Tape& tape, OperatorNets& op, const mw::FilterBank& fb,
                                   const ModelConfig& cfg, std::span<const nn::Tensor> inits,
                                   bool trainable = true);

/// Inference for every variable; inputs and outputs are (B, 1, N).
std::vector<nn::Tensor> predict(Model& model, std::span<const nn::Tensor> inits);

// ---- dice strategy and training ----------------------------------------

struct DicePath {
    std::vector<std::size_t> order;
};

/// Uniform random permutation of 0..n_ops-1.
DicePath roll_dice(std::mt19937_64& rng, std::size_t n_ops);

struct Batch {
    std::vector<nn::Tensor> inputs;   // per variable, (B, 1, N)
    std::vector<nn::Tensor> targets;  // per variable, (B, 1, N)
};

struct StageLoss {
    std::size_t op = 0;        // operator index (variable index for mwt_c)
    double loss = 0.0;
};

std::vector<nn::AdamState> make_optimizers(Model& model, const nn::AdamConfig& cfg);

/// One optimizer step per operator. cmwno follows `path`, each stage seeing
/// the parameters already updated earlier in the same step. mwt_s trains each
/// operator alone; mwt_c takes one step on the summed per-variable loss.
std::vector<StageLoss> train_step(Model& model, const Batch& batch, const DicePath& path,
                                  std::vector<nn::AdamState>& optimizers, std::size_t batch_index = 0);

// ---- persistence --------------------------------------------------------

std::vector<nn::NamedTensor> export_parameters(Model& model);
void import_parameters(Model& model, std::span<const nn::NamedTensor> tensors);

}  // namespace cmwno::model
