#pragma once

// Minimal reverse-mode differentiation for the fixed operator architecture:
// 1-D convolution, pointwise linear maps, ReLU, addition, gradient stopping,
// relative L2 loss and Adam with step decay.
//
// Activations are laid out channel-major: (batch, channels, positions).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cmwno::nn {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    void fill(double value);
    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<std::size_t> shape_;
    // Eigen picks its SIMD peel from the buffer address; a fixed alignment keeps
    // summation order, and so results, identical from run to run
    std::vector<double, Eigen::aligned_allocator<double>> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

struct Parameter {
    std::string id;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string id_, Tensor value_);
    void zero_grad() { grad.fill(0.0); }
};

/// Xavier/Glorot normal fill: std = sqrt(2 / (fan_in + fan_out)).
void xavier_normal(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// Kernel width 3, stride 1, zero padding 1.
struct Conv1dLayer {
    Parameter weight;  // (out, in, 3)
    Parameter bias;    // (out)

    Conv1dLayer() = default;
    Conv1dLayer(const std::string& id, std::size_t in, std::size_t out, std::mt19937_64& rng);
    std::size_t in_channels() const { return weight.value.dim(1); }
    std::size_t out_channels() const { return weight.value.dim(0); }
};

struct LinearLayer {
    Parameter weight;  // (out, in)
    Parameter bias;    // (out)

    LinearLayer() = default;
    LinearLayer(const std::string& id, std::size_t in, std::size_t out, std::mt19937_64& rng);
    std::size_t in_features() const { return weight.value.dim(1); }
    std::size_t out_features() const { return weight.value.dim(0); }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

    Tape& tape() const { return *tape_; }
    std::size_t index() const { return index_; }
    bool valid() const { return tape_ != nullptr; }
    const Tensor& value() const;
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

/// Records one forward pass. Rebuilt for every pass; backward may run once.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input that never receives gradient.
    Var constant(Tensor value);
    /// Input whose gradient is kept on the tape (read it with grad()).
    Var variable(Tensor value);
    /// Parameter leaf. When trainable, backward accumulates into p.grad.
    Var parameter(Parameter& p, bool trainable = true);

    /// Generic op node. `backward` runs only if the node requires grad and got gradient.
    Var record(Tensor value, bool requires_grad, BackwardFn backward);

    void backward(Var root);

    const Tensor& value(std::size_t index) const {
        const Node& n = nodes_[index];
        return n.param ? n.param->value : n.value;
    }
    bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
    /// Gradient buffer for a node, allocated on first use.
    Tensor& grad_buffer(std::size_t index);
    /// Gradient of a variable() leaf after backward; zeros if none reached it.
    Tensor grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Parameter* param = nullptr;  // leaf bound to a parameter; value lives there
        bool accumulate_into_param = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// ---- differentiable ops -------------------------------------------------

Var add(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var sum(Var a);
/// Forward identity; contributes no gradient upstream.
Var stop_gradient(Var a);

/// x: (B, in, N) or (in, N) -> same rank with `out` channels.
Var conv1d(Conv1dLayer& layer, Var x, bool trainable = true);
/// Same with weight (out, in, 3) and bias (out) already on the tape.
Var conv1d(Var weight, Var bias, Var x);

/// Pointwise linear map over the channel axis, applied to each of `groups`
/// consecutive channel blocks: (B, groups*in, N) -> (B, groups*out, N).
Var linear(LinearLayer& layer, Var x, std::size_t groups = 1, bool trainable = true);
Var linear(Var weight, Var bias, Var x, std::size_t groups = 1);

/// Channels [first, first+count) of a (B, C, N) tensor.
Var channel_slice(Var x, std::size_t first, std::size_t count);

/// Mean over the batch of ||pred - truth||_2 / ||truth||_2, each norm taken
/// over all non-batch axes. Rank-1 inputs count as one sample.
Var relative_l2(Var pred, Var truth);

/// Non-differentiable per-sample variant of relative_l2.
std::vector<double> relative_l2_per_sample(const Tensor& pred, const Tensor& truth);

// ---- optimizer ----------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay_factor = 0.95;
    std::size_t decay_every = 100;
};

struct AdamState {
    AdamConfig config;
    double lr = 1e-3;
    std::size_t step_count = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    AdamState() = default;
    AdamState(AdamConfig cfg, std::span<Parameter* const> params);
};

/// Bias-corrected Adam update, then lr decay every `decay_every` steps, then
/// zeroes the gradients. A non-finite gradient aborts before any change.
void adam_step(AdamState& state, std::span<Parameter* const> params);

// ---- checkpoints --------------------------------------------------------

struct NamedTensor {
    std::string id;
    Tensor value;
};

/// "CMWNO1", u32 count, then per tensor: u32 id length, id bytes, u32 rank,
/// u64 dims, float64 values. Little-endian throughout.
void write_checkpoint(const std::string& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

}  // namespace cmwno::nn
