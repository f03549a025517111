#include "cmwno/nn.hpp"

#include "cmwno/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

namespace cmwno::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// (B, C, N) view of a rank-2 or rank-3 activation.
struct Layout {
    std::size_t batch = 1, channels = 0, length = 0;
};

Layout activation_layout(const Tensor& t, const char* op) {
    if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
    if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
    throw ConfigError(std::string(op) + ": expected (B, C, N) or (C, N) input, got " + shape_string(t.shape()));
}

std::vector<std::size_t> activation_shape(const Tensor& like, std::size_t channels) {
    if (like.rank() == 3) return {like.dim(0), channels, like.dim(2)};
    return {channels, like.dim(1)};
}

void accumulate(Tensor& into, const Tensor& from) {
    double* dst = into.raw();
    const double* src = from.raw();
    for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != product(shape_))
        throw ConfigError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

Parameter::Parameter(std::string id_, Tensor value_)
    : id(std::move(id_)), value(std::move(value_)), grad(value.shape()) {}

void xavier_normal(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
    for (auto& x : t.data()) x = dist(rng);
}

Conv1dLayer::Conv1dLayer(const std::string& id, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(id + ".weight", Tensor({out, in, 3})), bias(id + ".bias", Tensor({out})) {
    xavier_normal(weight.value, in * 3, out * 3, rng);
}

LinearLayer::LinearLayer(const std::string& id, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(id + ".weight", Tensor({out, in})), bias(id + ".bias", Tensor({out})) {
    xavier_normal(weight.value, in, out, rng);
}

// ---- tape ---------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p, bool trainable) {
    Node n;
    n.param = &p;
    n.requires_grad = trainable;
    n.accumulate_into_param = trainable;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t index) {
    Node& n = nodes_[index];
    if (!n.has_grad) {
        n.grad = Tensor(value(index).shape());
        n.has_grad = true;
    }
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.index()];
    if (n.has_grad) return n.grad;
    return Tensor(value(v.index()).shape());
}

void Tape::backward(Var root) {
    if (root.valid() && &root.tape() != this) throw ConfigError("backward: root belongs to another tape");
    if (consumed_) throw ConfigError("backward: tape already consumed; run a new forward pass first");
    if (value(root.index()).size() != 1)
        throw ConfigError("backward: root must be a scalar, got shape " + shape_string(value(root.index()).shape()));
    consumed_ = true;
    if (!nodes_[root.index()].requires_grad) return;
    grad_buffer(root.index())[0] = 1.0;
    for (std::size_t i = root.index() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.has_grad) continue;
        if (n.backward) n.backward(*this, i);
        if (n.accumulate_into_param) accumulate(n.param->grad, n.grad);
    }
}

// ---- elementwise ops ----------------------------------------------------

Var add(Var a, Var b) {
    Tape& tape = a.tape();
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (!x.same_shape(y))
        throw ConfigError("add: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    Tensor out = x;
    accumulate(out, y);
    const std::size_t ia = a.index(), ib = b.index();
    return tape.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
        if (t.requires_grad(ib)) accumulate(t.grad_buffer(ib), g);
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& x : out.data()) x *= factor;
    const std::size_t ia = a.index();
    return a.tape().record(std::move(out), a.requires_grad(), [ia, factor](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
    const std::size_t ia = a.index();
    return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& x = t.value(ia);
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) ga[i] += g[i];
    });
}

Var sum(Var a) {
    const auto values = a.value().data();
    Tensor out(std::vector<std::size_t>{}, std::accumulate(values.begin(), values.end(), 0.0));
    const std::size_t ia = a.index();
    return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0];
        for (auto& x : t.grad_buffer(ia).data()) x += g;
    });
}

Var stop_gradient(Var a) { return a.tape().record(a.value(), false, nullptr); }

// ---- convolution --------------------------------------------------------

Var conv1d(Conv1dLayer& layer, Var x, bool trainable) {
    Tape& tape = x.tape();
    return conv1d(tape.parameter(layer.weight, trainable), tape.parameter(layer.bias, trainable), x);
}

Var conv1d(Var weight, Var bias, Var x) {
    Tape& tape = x.tape();
    const Tensor& w = weight.value();
    const Tensor& input = x.value();
    if (w.rank() != 3 || w.dim(2) != 3) throw ConfigError("conv1d: weight must be (out, in, 3)");
    const std::size_t out_ch = w.dim(0), in_ch = w.dim(1);
    if (bias.value().size() != out_ch) throw ConfigError("conv1d: bias length does not match output channels");
    const Layout lay = activation_layout(input, "conv1d");
    if (lay.channels != in_ch)
        throw ConfigError("conv1d: input has " + std::to_string(lay.channels) + " channels, layer expects " +
                          std::to_string(in_ch));
    if (lay.length == 0) throw ConfigError("conv1d: empty spatial axis");

    // Contiguous (out x in) matrix per tap.
    auto taps = std::make_shared<std::array<RowMat, 3>>();
    for (int t = 0; t < 3; ++t) {
        (*taps)[t].resize(static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(in_ch));
        for (std::size_t o = 0; o < out_ch; ++o)
            for (std::size_t i = 0; i < in_ch; ++i) (*taps)[t](o, i) = w[(o * in_ch + i) * 3 + t];
    }

    const auto n = static_cast<Eigen::Index>(lay.length);
    const auto ci = static_cast<Eigen::Index>(in_ch);
    const auto co = static_cast<Eigen::Index>(out_ch);
    Tensor out(activation_shape(input, out_ch));
    const double* b = bias.value().raw();
    for (std::size_t s = 0; s < lay.batch; ++s) {
        ConstMatMap xs(input.raw() + s * in_ch * lay.length, ci, n);
        MatMap ys(out.raw() + s * out_ch * lay.length, co, n);
        for (Eigen::Index o = 0; o < co; ++o) ys.row(o).setConstant(b[o]);
        ys.noalias() += (*taps)[1] * xs;
        if (n > 1) {
            ys.rightCols(n - 1).noalias() += (*taps)[0] * xs.leftCols(n - 1);
            ys.leftCols(n - 1).noalias() += (*taps)[2] * xs.rightCols(n - 1);
        }
    }

    const std::size_t iw = weight.index(), ib = bias.index(), ix = x.index();
    const bool needs = weight.requires_grad() || bias.requires_grad() || x.requires_grad();
    return tape.record(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& xin = t.value(ix);
        std::array<RowMat, 3> gw;
        const bool want_w = t.requires_grad(iw);
        if (want_w)
            for (auto& m : gw) m.setZero(co, ci);
        Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        for (std::size_t s = 0; s < lay.batch; ++s) {
            ConstMatMap gs(g.raw() + s * out_ch * lay.length, co, n);
            ConstMatMap xs(xin.raw() + s * in_ch * lay.length, ci, n);
            if (gx) {
                MatMap gxs(gx->raw() + s * in_ch * lay.length, ci, n);
                gxs.noalias() += (*taps)[1].transpose() * gs;
                if (n > 1) {
                    gxs.leftCols(n - 1).noalias() += (*taps)[0].transpose() * gs.rightCols(n - 1);
                    gxs.rightCols(n - 1).noalias() += (*taps)[2].transpose() * gs.leftCols(n - 1);
                }
            }
            if (want_w) {
                gw[1].noalias() += gs * xs.transpose();
                if (n > 1) {
                    gw[0].noalias() += gs.rightCols(n - 1) * xs.leftCols(n - 1).transpose();
                    gw[2].noalias() += gs.leftCols(n - 1) * xs.rightCols(n - 1).transpose();
                }
            }
            if (gb) {
                for (Eigen::Index o = 0; o < co; ++o) (*gb)[static_cast<std::size_t>(o)] += gs.row(o).sum();
            }
        }
        if (want_w) {
            Tensor& gwt = t.grad_buffer(iw);
            for (std::size_t o = 0; o < out_ch; ++o)
                for (std::size_t i = 0; i < in_ch; ++i)
                    for (int tap = 0; tap < 3; ++tap)
                        gwt[(o * in_ch + i) * 3 + tap] += gw[tap](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i));
        }
    });
}

// ---- pointwise linear ---------------------------------------------------

Var linear(LinearLayer& layer, Var x, std::size_t groups, bool trainable) {
    Tape& tape = x.tape();
    return linear(tape.parameter(layer.weight, trainable), tape.parameter(layer.bias, trainable), x, groups);
}

Var linear(Var weight, Var bias, Var x, std::size_t groups) {
    Tape& tape = x.tape();
    const Tensor& w = weight.value();
    const Tensor& input = x.value();
    if (w.rank() != 2) throw ConfigError("linear: weight must be (out, in)");
    const std::size_t out_f = w.dim(0), in_f = w.dim(1);
    if (bias.value().size() != out_f) throw ConfigError("linear: bias length does not match output features");
    const Layout lay = activation_layout(input, "linear");
    if (groups == 0 || lay.channels != groups * in_f)
        throw ConfigError("linear: input has " + std::to_string(lay.channels) + " channels, expected " +
                          std::to_string(groups) + " x " + std::to_string(in_f));

    const auto n = static_cast<Eigen::Index>(lay.length);
    const auto fi = static_cast<Eigen::Index>(in_f);
    const auto fo = static_cast<Eigen::Index>(out_f);
    ConstMatMap wm(w.raw(), fo, fi);
    const double* b = bias.value().raw();
    Tensor out(activation_shape(input, groups * out_f));
    for (std::size_t s = 0; s < lay.batch; ++s) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
            ConstMatMap xs(input.raw() + (s * groups + gi) * in_f * lay.length, fi, n);
            MatMap ys(out.raw() + (s * groups + gi) * out_f * lay.length, fo, n);
            for (Eigen::Index o = 0; o < fo; ++o) ys.row(o).setConstant(b[o]);
            ys.noalias() += wm * xs;
        }
    }

    const std::size_t iw = weight.index(), ib = bias.index(), ix = x.index();
    const bool needs = weight.requires_grad() || bias.requires_grad() || x.requires_grad();
    return tape.record(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& xin = t.value(ix);
        ConstMatMap wmat(t.value(iw).raw(), fo, fi);
        Tensor* gx = t.requires_grad(ix) ? &t.grad_buffer(ix) : nullptr;
        Tensor* gb = t.requires_grad(ib) ? &t.grad_buffer(ib) : nullptr;
        const bool want_w = t.requires_grad(iw);
        RowMat gw;
        if (want_w) gw.setZero(fo, fi);
        for (std::size_t s = 0; s < lay.batch; ++s) {
            for (std::size_t gi = 0; gi < groups; ++gi) {
                const std::size_t block = s * groups + gi;
                ConstMatMap gs(g.raw() + block * out_f * lay.length, fo, n);
                if (gx) {
                    MatMap gxs(gx->raw() + block * in_f * lay.length, fi, n);
                    gxs.noalias() += wmat.transpose() * gs;
                }
                if (want_w) {
                    ConstMatMap xs(xin.raw() + block * in_f * lay.length, fi, n);
                    gw.noalias() += gs * xs.transpose();
                }
                if (gb)
                    for (Eigen::Index o = 0; o < fo; ++o) (*gb)[static_cast<std::size_t>(o)] += gs.row(o).sum();
            }
        }
        if (want_w) {
            MatMap gwt(t.grad_buffer(iw).raw(), fo, fi);
            gwt += gw;
        }
    });
}

Var channel_slice(Var x, std::size_t first, std::size_t count) {
    const Tensor& input = x.value();
    const Layout lay = activation_layout(input, "channel_slice");
    if (first + count > lay.channels) throw ConfigError("channel_slice: range exceeds channel count");
    Tensor out(activation_shape(input, count));
    for (std::size_t s = 0; s < lay.batch; ++s)
        std::copy_n(input.raw() + (s * lay.channels + first) * lay.length, count * lay.length,
                    out.raw() + s * count * lay.length);
    const std::size_t ix = x.index();
    return x.tape().record(std::move(out), x.requires_grad(), [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t s = 0; s < lay.batch; ++s) {
            const double* src = g.raw() + s * count * lay.length;
            double* dst = gx.raw() + (s * lay.channels + first) * lay.length;
            for (std::size_t i = 0; i < count * lay.length; ++i) dst[i] += src[i];
        }
    });
}

// ---- loss ---------------------------------------------------------------

namespace {

struct SampleNorms {
    std::size_t batch = 1;
    std::size_t stride = 0;
    std::vector<double> diff, truth;
};

SampleNorms sample_norms(const Tensor& pred, const Tensor& truth) {
    if (!pred.same_shape(truth))
        throw ConfigError("relative_l2: shape mismatch " + shape_string(pred.shape()) + " vs " +
                          shape_string(truth.shape()));
    SampleNorms s;
    s.batch = pred.rank() >= 2 ? pred.dim(0) : 1;
    if (s.batch == 0 || pred.size() == 0) throw ConfigError("relative_l2: empty input");
    s.stride = pred.size() / s.batch;
    s.diff.assign(s.batch, 0.0);
    s.truth.assign(s.batch, 0.0);
    for (std::size_t b = 0; b < s.batch; ++b) {
        double dd = 0.0, tt = 0.0;
        for (std::size_t i = b * s.stride; i < (b + 1) * s.stride; ++i) {
            const double d = pred[i] - truth[i];
            dd += d * d;
            tt += truth[i] * truth[i];
        }
        if (!(tt > 0.0)) throw ConfigError("relative_l2: truth sample " + std::to_string(b) + " has zero norm");
        s.diff[b] = std::sqrt(dd);
        s.truth[b] = std::sqrt(tt);
    }
    return s;
}

}  // namespace

std::vector<double> relative_l2_per_sample(const Tensor& pred, const Tensor& truth) {
    const SampleNorms s = sample_norms(pred, truth);
    std::vector<double> out(s.batch);
    for (std::size_t b = 0; b < s.batch; ++b) out[b] = s.diff[b] / s.truth[b];
    return out;
}

Var relative_l2(Var pred, Var truth) {
    const SampleNorms s = sample_norms(pred.value(), truth.value());
    double loss = 0.0;
    for (std::size_t b = 0; b < s.batch; ++b) loss += s.diff[b] / s.truth[b];
    loss /= static_cast<double>(s.batch);
    const std::size_t ip = pred.index(), it = truth.index();
    return pred.tape().record(Tensor(std::vector<std::size_t>{}, loss), pred.requires_grad(),
                              [ip, it, s](Tape& t, std::size_t self) {
                                  const double g = t.grad_buffer(self)[0];
                                  const Tensor& p = t.value(ip);
                                  const Tensor& y = t.value(it);
                                  Tensor& gp = t.grad_buffer(ip);
                                  for (std::size_t b = 0; b < s.batch; ++b) {
                                      if (s.diff[b] == 0.0) continue;
                                      const double f = g / (static_cast<double>(s.batch) * s.diff[b] * s.truth[b]);
                                      for (std::size_t i = b * s.stride; i < (b + 1) * s.stride; ++i)
                                          gp[i] += f * (p[i] - y[i]);
                                  }
                              });
}

// ---- Adam ---------------------------------------------------------------

AdamState::AdamState(AdamConfig cfg, std::span<Parameter* const> params) : config(cfg), lr(cfg.lr) {
    if (!(cfg.lr > 0.0)) throw ConfigError("AdamState: learning rate must be positive");
    for (const Parameter* p : params) {
        m.emplace_back(p->value.shape());
        v.emplace_back(p->value.shape());
    }
}

void adam_step(AdamState& state, std::span<Parameter* const> params) {
    if (params.size() != state.m.size()) throw ConfigError("adam_step: parameter list does not match optimizer state");
    for (const Parameter* p : params) {
        if (!p->grad.all_finite()) throw NumericError("adam_step: non-finite gradient in parameter " + p->id);
    }
    state.step_count += 1;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        double* m = state.m[i].raw();
        double* v = state.v[i].raw();
        double* w = p.value.raw();
        const double* g = p.grad.raw();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= state.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
        p.zero_grad();
    }
    if (c.decay_every > 0 && state.step_count % c.decay_every == 0) state.lr *= c.decay_factor;
}

}  // namespace cmwno::nn
