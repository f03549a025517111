#include "cmwno/model.hpp"

#include "cmwno/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cmwno::model {

using nn::Tape;
using nn::Tensor;
using nn::Var;

ModelKind parse_model_kind(std::string_view text) {
    if (text == "cmwno") return ModelKind::cmwno;
    if (text == "mwt_s") return ModelKind::mwt_s;
    if (text == "mwt_c") return ModelKind::mwt_c;
    throw ConfigError("unknown model kind '" + std::string(text) + "' (expected cmwno, mwt_s or mwt_c)");
}

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::cmwno: return "cmwno";
        case ModelKind::mwt_s: return "mwt_s";
        case ModelKind::mwt_c: return "mwt_c";
    }
    return "unknown";
}

std::vector<nn::Parameter*> OperatorNets::parameters() {
    auto& K = kernels;
    return {&lp.lift.weight,      &lp.lift.bias,        &K.a.conv.weight, &K.a.conv.bias,
            &K.a.proj.weight,     &K.a.proj.bias,       &K.b.conv.weight, &K.b.conv.bias,
            &K.b.proj.weight,     &K.b.proj.bias,       &K.c.conv.weight, &K.c.conv.bias,
            &K.c.proj.weight,     &K.c.proj.bias,       &K.tbar.weight,   &K.tbar.bias,
            &lp.project.weight,   &lp.project.bias};
}

OperatorNets make_operator(const std::string& name, const ModelConfig& cfg, std::size_t in_features,
                           std::size_t out_features, std::mt19937_64& rng) {
    if (cfg.k < 1 || cfg.c == 0) throw ConfigError("make_operator: k and c must be positive");
    const std::size_t f = cfg.features();
    const std::size_t h = cfg.hidden();
    auto branch = [&](const std::string& id) {
        return ConvBranch{nn::Conv1dLayer(name + "." + id + ".conv", f, h, rng),
                          nn::LinearLayer(name + "." + id + ".proj", h, f, rng)};
    };
    OperatorNets op;
    op.name = name;
    op.lp.lift = nn::LinearLayer(name + ".lift", in_features, f, rng);
    op.kernels.a = branch("A");
    op.kernels.b = branch("B");
    op.kernels.c = branch("C");
    op.kernels.tbar = nn::LinearLayer(name + ".Tbar", static_cast<std::size_t>(cfg.k), static_cast<std::size_t>(cfg.k), rng);
    op.lp.project = nn::LinearLayer(name + ".project", f, out_features, rng);
    return op;
}

// ---- two-scale kernels on channel-major blocks --------------------------

namespace {

struct BlockGeometry {
    std::size_t blocks = 0;  // batch * groups
    std::size_t k = 0;
    std::size_t coarse_len = 0;
};

BlockGeometry geometry(const Tensor& t, std::size_t k, std::size_t coarse_len, const char* op) {
    if (t.rank() != 3) throw ConfigError(std::string(op) + ": expected (B, C, N) tensor");
    if (t.dim(1) % k != 0) throw ConfigError(std::string(op) + ": channel count is not a multiple of k");
    return {t.dim(0) * (t.dim(1) / k), k, coarse_len};
}

// out[j][l] += sum_m P(j,m) fine[m][2l] + Q(j,m) fine[m][2l+1], per k-row block.
void split(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q, const double* fine, double* out, const BlockGeometry& g) {
    const std::size_t k = g.k, m = g.coarse_len, L = 2 * m;
    for (std::size_t b = 0; b < g.blocks; ++b) {
        const double* F = fine + b * k * L;
        double* O = out + b * k * m;
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t r = 0; r < k; ++r) {
                const double p = P(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r));
                const double q = Q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r));
                const double* row = F + r * L;
                double* dst = O + j * m;
                for (std::size_t l = 0; l < m; ++l) dst[l] += p * row[2 * l] + q * row[2 * l + 1];
            }
        }
    }
}

// fine[r][2l] += sum_j P(j,r) x[j][l]; fine[r][2l+1] += sum_j Q(j,r) x[j][l].
void merge(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q, const double* x, double* fine, const BlockGeometry& g) {
    const std::size_t k = g.k, m = g.coarse_len, L = 2 * m;
    for (std::size_t b = 0; b < g.blocks; ++b) {
        const double* X = x + b * k * m;
        double* F = fine + b * k * L;
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t r = 0; r < k; ++r) {
                const double p = P(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r));
                const double q = Q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r));
                const double* src = X + j * m;
                double* row = F + r * L;
                for (std::size_t l = 0; l < m; ++l) {
                    row[2 * l] += p * src[l];
                    row[2 * l + 1] += q * src[l];
                }
            }
        }
    }
}

struct BoundBranch {
    Var conv_w, conv_b, proj_w, proj_b;

    BoundBranch(Tape& tape, ConvBranch& br, bool trainable)
        : conv_w(tape.parameter(br.conv.weight, trainable)),
          conv_b(tape.parameter(br.conv.bias, trainable)),
          proj_w(tape.parameter(br.proj.weight, trainable)),
          proj_b(tape.parameter(br.proj.bias, trainable)) {}

    Var operator()(Var x) const { return nn::linear(proj_w, proj_b, nn::relu(nn::conv1d(conv_w, conv_b, x))); }
};

Var cross_term(Var block, double cross_scale) {
    Var stopped = nn::stop_gradient(block);
    return cross_scale == 1.0 ? stopped : nn::scale(stopped, cross_scale);
}

}  // namespace

DecomposeResult decompose(Var fine, const mw::FilterBank& fb) {
    Tape& tape = fine.tape();
    const Tensor& x = fine.value();
    if (x.rank() != 3 || x.dim(2) % 2 != 0)
        throw ConfigError("decompose: spatial length must be even, got shape " + nn::shape_string(x.shape()));
    const std::size_t k = static_cast<std::size_t>(fb.k);
    const BlockGeometry g = geometry(x, k, x.dim(2) / 2, "decompose");
    Tensor coarse({x.dim(0), x.dim(1), g.coarse_len});
    Tensor detail({x.dim(0), x.dim(1), g.coarse_len});
    split(fb.h0, fb.h1, x.raw(), coarse.raw(), g);
    split(fb.g0, fb.g1, x.raw(), detail.raw(), g);

    const std::size_t ix = fine.index();
    const bool needs = fine.requires_grad();
    Var c = tape.record(std::move(coarse), needs, [ix, g, h0 = fb.h0, h1 = fb.h1](Tape& t, std::size_t self) {
        merge(h0, h1, t.grad_buffer(self).raw(), t.grad_buffer(ix).raw(), g);
    });
    Var d = tape.record(std::move(detail), needs, [ix, g, g0 = fb.g0, g1 = fb.g1](Tape& t, std::size_t self) {
        merge(g0, g1, t.grad_buffer(self).raw(), t.grad_buffer(ix).raw(), g);
    });
    return {c, d};
}

Var reconstruct(Var coarse, Var detail, const mw::FilterBank& fb) {
    Tape& tape = coarse.tape();
    const Tensor& s = coarse.value();
    const Tensor& d = detail.value();
    if (!s.same_shape(d))
        throw ConfigError("reconstruct: scaling and detail shapes differ: " + nn::shape_string(s.shape()) + " vs " +
                          nn::shape_string(d.shape()));
    const std::size_t k = static_cast<std::size_t>(fb.k);
    const BlockGeometry g = geometry(s, k, s.dim(2), "reconstruct");
    Tensor fine({s.dim(0), s.dim(1), 2 * g.coarse_len});
    merge(fb.h0, fb.h1, s.raw(), fine.raw(), g);
    merge(fb.g0, fb.g1, d.raw(), fine.raw(), g);

    const std::size_t is = coarse.index(), id = detail.index();
    const bool needs = coarse.requires_grad() || detail.requires_grad();
    return tape.record(std::move(fine), needs, [is, id, g, fb](Tape& t, std::size_t self) {
        const double* gf = t.grad_buffer(self).raw();
        if (t.requires_grad(is)) split(fb.h0, fb.h1, gf, t.grad_buffer(is).raw(), g);
        if (t.requires_grad(id)) split(fb.g0, fb.g1, gf, t.grad_buffer(id).raw(), g);
    });
}

Tensor make_features(std::span<const Tensor* const> fields) {
    if (fields.empty()) throw ConfigError("make_features: no fields");
    const Tensor& first = *fields.front();
    if (first.rank() != 3 || first.dim(1) != 1) throw ConfigError("make_features: fields must be (B, 1, N)");
    const std::size_t batch = first.dim(0), n = first.dim(2);
    for (const Tensor* f : fields)
        if (!f->same_shape(first)) throw ConfigError("make_features: fields differ in shape (resolution mismatch)");
    const std::size_t nf = fields.size() + 1;
    Tensor out({batch, nf, n});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < fields.size(); ++i)
            std::copy_n(fields[i]->raw() + b * n, n, out.raw() + (b * nf + i) * n);
        double* grid = out.raw() + (b * nf + fields.size()) * n;
        for (std::size_t j = 0; j < n; ++j) grid[j] = static_cast<double>(j) / static_cast<double>(n);
    }
    return out;
}

WaveletBlocks kernel_blocks(Tape& tape, OperatorNets& op, const mw::FilterBank& fb, const ModelConfig& cfg,
                            Var features, bool trainable) {
    const std::size_t n_points = features.value().dim(2);
    const int levels = mw::exact_log2(n_points);
    if (cfg.floor < 0 || cfg.floor >= levels)
        throw ConfigError("kernel_blocks: floor " + std::to_string(cfg.floor) + " incompatible with resolution " +
                          std::to_string(n_points));

    const BoundBranch A(tape, op.kernels.a, trainable);
    const BoundBranch B(tape, op.kernels.b, trainable);
    const BoundBranch C(tape, op.kernels.c, trainable);

    WaveletBlocks out;
    const auto depth = static_cast<std::size_t>(levels - cfg.floor);
    out.detail.resize(depth);
    out.scaling.resize(depth);

    Var s = nn::linear(op.lp.lift, features, 1, trainable);
    for (int level = levels - 1; level >= cfg.floor; --level) {
        auto [coarse, detail] = decompose(s, fb);
        const auto idx = static_cast<std::size_t>(level - cfg.floor);
        out.detail[idx] = nn::add(A(detail), B(coarse));
        out.scaling[idx] = C(detail);
        s = coarse;
    }
    out.coarse = nn::linear(op.kernels.tbar, s, cfg.c, trainable);
    return out;
}

Var reconstruct_and_project(Tape& tape, OperatorNets& op, const mw::FilterBank& fb, const WaveletBlocks& own,
                            std::span<const WaveletBlocks> cross, double cross_scale, bool trainable) {
    (void)tape;
    Var r = own.coarse;
    for (const auto& other : cross) r = nn::add(r, cross_term(other.coarse, cross_scale));
    for (std::size_t i = 0; i < own.detail.size(); ++i) {
        Var scaling = own.scaling[i];
        Var detail = own.detail[i];
        for (const auto& other : cross) {
            if (other.detail.size() != own.detail.size())
                throw ConfigError("reconstruct_and_project: coupled operators disagree on level count");
            scaling = nn::add(scaling, cross_term(other.scaling[i], cross_scale));
            detail = nn::add(detail, cross_term(other.detail[i], cross_scale));
        }
        r = reconstruct(nn::add(r, scaling), detail, fb);
    }
    return nn::linear(op.lp.project, r, 1, trainable);
}

OperatorForward single_operator_forward(Tape& tape, OperatorNets& op, const mw::FilterBank& fb,
                                        const ModelConfig& cfg, const Tensor& field, bool trainable) {
    const Tensor* fields[] = {&field};
    Var features = tape.constant(make_features(fields));
    OperatorForward out;
    out.blocks = kernel_blocks(tape, op, fb, cfg, features, trainable);
    out.field = reconstruct_and_project(tape, op, fb, out.blocks, {}, 1.0, trainable);
    return out;
}

// ---- model --------------------------------------------------------------

Model Model::create(ModelKind kind, std::vector<std::string> variables, const ModelConfig& cfg, std::uint64_t seed) {
    if (variables.empty()) throw ConfigError("Model::create: no variables");
    Model m;
    m.kind = kind;
    m.config = cfg;
    m.fb = mw::legendre_filters(cfg.k);
    m.variables = std::move(variables);
    std::mt19937_64 rng(seed);
    if (kind == ModelKind::mwt_c) {
        std::string name;
        for (const auto& v : m.variables) name += (name.empty() ? "" : "+") + v;
        m.ops.push_back(make_operator(name, cfg, m.variables.size() + 1, m.variables.size(), rng));
    } else {
        for (const auto& v : m.variables) m.ops.push_back(make_operator(v, cfg, 2, 1, rng));
    }
    return m;
}

std::vector<nn::Parameter*> Model::parameters() {
    std::vector<nn::Parameter*> all;
    for (auto& op : ops) {
        auto p = op.parameters();
        all.insert(all.end(), p.begin(), p.end());
    }
    return all;
}

std::size_t Model::parameter_count() const {
    std::size_t total = 0;
    for (auto* p : const_cast<Model*>(this)->parameters()) total += p->value.size();
    return total;
}

Var coupled_forward(Tape& tape, Model& model, std::span<const Tensor> inits, std::size_t live, double cross_scale) {
    if (inits.size() != model.ops.size())
        throw ConfigError("coupled_forward: expected " + std::to_string(model.ops.size()) + " initial fields");
    if (live >= model.ops.size()) throw ConfigError("coupled_forward: live operator index out of range");
    for (const auto& f : inits)
        if (!f.same_shape(inits.front())) throw ConfigError("coupled_forward: fields differ in resolution");

    std::vector<WaveletBlocks> frozen;
    frozen.reserve(inits.size() - 1);
    WaveletBlocks own;
    for (std::size_t i = 0; i < inits.size(); ++i) {
        const Tensor* fields[] = {&inits[i]};
        Var features = tape.constant(make_features(fields));
        auto blocks = kernel_blocks(tape, model.ops[i], model.fb, model.config, features, true);
        if (i == live)
            own = std::move(blocks);
        else
            frozen.push_back(std::move(blocks));
    }
    return reconstruct_and_project(tape, model.ops[live], model.fb, own, frozen, cross_scale, true);
}

std::vector<Var> mwt_c_forward(Tape& tape, OperatorNets& op, const mw::FilterBank& fb, const ModelConfig& cfg,
                               std::span<const Tensor> inits, bool trainable) {
    std::vector<const Tensor*> fields;
    for (const auto& f : inits) fields.push_back(&f);
    Var features = tape.constant(make_features(fields));
    const auto blocks = kernel_blocks(tape, op, fb, cfg, features, trainable);
    Var joint = reconstruct_and_project(tape, op, fb, blocks, {}, 1.0, trainable);
    std::vector<Var> outs;
    for (std::size_t i = 0; i < inits.size(); ++i) outs.push_back(nn::channel_slice(joint, i, 1));
    return outs;
}

std::vector<Tensor> predict(Model& model, std::span<const Tensor> inits) {
    if (inits.size() != model.variables.size())
        throw ConfigError("predict: expected " + std::to_string(model.variables.size()) + " input fields");
    Tape tape;
    std::vector<Tensor> out;
    switch (model.kind) {
        case ModelKind::mwt_c: {
            for (Var v : mwt_c_forward(tape, model.ops[0], model.fb, model.config, inits, false)) out.push_back(v.value());
            break;
        }
        case ModelKind::mwt_s: {
            for (std::size_t i = 0; i < inits.size(); ++i)
                out.push_back(single_operator_forward(tape, model.ops[i], model.fb, model.config, inits[i], false).field.value());
            break;
        }
        case ModelKind::cmwno: {
            std::vector<WaveletBlocks> blocks;
            for (std::size_t i = 0; i < inits.size(); ++i) {
                if (!inits[i].same_shape(inits.front())) throw ConfigError("predict: fields differ in resolution");
                const Tensor* fields[] = {&inits[i]};
                Var features = tape.constant(make_features(fields));
                blocks.push_back(kernel_blocks(tape, model.ops[i], model.fb, model.config, features, false));
            }
            for (std::size_t i = 0; i < inits.size(); ++i) {
                std::vector<WaveletBlocks> cross;
                for (std::size_t j = 0; j < inits.size(); ++j)
                    if (j != i) cross.push_back(blocks[j]);
                out.push_back(reconstruct_and_project(tape, model.ops[i], model.fb, blocks[i], cross, 1.0, false).value());
            }
            break;
        }
    }
    return out;
}

DicePath roll_dice(std::mt19937_64& rng, std::size_t n_ops) {
    if (n_ops < 2) throw ConfigError("roll_dice: need at least two operators");
    DicePath path;
    path.order.resize(n_ops);
    for (std::size_t i = 0; i < n_ops; ++i) path.order[i] = i;
    // Fisher-Yates from the back.
    for (std::size_t i = n_ops - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(path.order[i], path.order[pick(rng)]);
    }
    return path;
}

std::vector<nn::AdamState> make_optimizers(Model& model, const nn::AdamConfig& cfg) {
    std::vector<nn::AdamState> out;
    for (auto& op : model.ops) {
        auto params = op.parameters();
        out.emplace_back(cfg, params);
    }
    return out;
}

namespace {

double checked_loss(Var loss, const std::string& op_name, std::size_t batch_index) {
    const double value = loss.value()[0];
    if (!std::isfinite(value))
        throw NumericError("train_step: non-finite loss for operator " + op_name + " at batch " + std::to_string(batch_index));
    return value;
}

}  // namespace

std::vector<StageLoss> train_step(Model& model, const Batch& batch, const DicePath& path,
                                  std::vector<nn::AdamState>& optimizers, std::size_t batch_index) {
    const std::size_t nv = model.variables.size();
    if (batch.inputs.size() != nv || batch.targets.size() != nv)
        throw ConfigError("train_step: batch does not match model variables");
    if (optimizers.size() != model.ops.size()) throw ConfigError("train_step: one optimizer per operator required");
    for (std::size_t i = 0; i < nv; ++i) {
        mw::exact_log2(batch.inputs[i].dim(2));
        if (!batch.targets[i].same_shape(batch.inputs[i])) throw ConfigError("train_step: target shape mismatch");
    }

    std::vector<StageLoss> losses;
    switch (model.kind) {
        case ModelKind::cmwno: {
            std::vector<std::size_t> order = path.order;
            if (order.empty() && nv == 1) order = {0};
            if (order.size() != nv) throw ConfigError("train_step: dice path does not cover every operator");
            for (std::size_t live : order) {
                Tape tape;
                Var pred = coupled_forward(tape, model, batch.inputs, live);
                Var loss = nn::relative_l2(pred, tape.constant(batch.targets[live]));
                const double value = checked_loss(loss, model.ops[live].name, batch_index);
                tape.backward(loss);
                auto params = model.ops[live].parameters();
                nn::adam_step(optimizers[live], params);
                losses.push_back({live, value});
            }
            break;
        }
        case ModelKind::mwt_s: {
            for (std::size_t i = 0; i < nv; ++i) {
                Tape tape;
                auto fwd = single_operator_forward(tape, model.ops[i], model.fb, model.config, batch.inputs[i]);
                Var loss = nn::relative_l2(fwd.field, tape.constant(batch.targets[i]));
                const double value = checked_loss(loss, model.ops[i].name, batch_index);
                tape.backward(loss);
                auto params = model.ops[i].parameters();
                nn::adam_step(optimizers[i], params);
                losses.push_back({i, value});
            }
            break;
        }
        case ModelKind::mwt_c: {
            Tape tape;
            auto outs = mwt_c_forward(tape, model.ops[0], model.fb, model.config, batch.inputs);
            Var total;
            for (std::size_t i = 0; i < nv; ++i) {
                Var loss = nn::relative_l2(outs[i], tape.constant(batch.targets[i]));
                losses.push_back({i, checked_loss(loss, model.variables[i], batch_index)});
                total = total.valid() ? nn::add(total, loss) : loss;
            }
            tape.backward(total);
            auto params = model.ops[0].parameters();
            nn::adam_step(optimizers[0], params);
            break;
        }
    }
    return losses;
}

std::vector<nn::NamedTensor> export_parameters(Model& model) {
    std::vector<nn::NamedTensor> out;
    for (auto* p : model.parameters()) out.push_back({p->id, p->value});
    return out;
}

void import_parameters(Model& model, std::span<const nn::NamedTensor> tensors) {
    std::map<std::string, const Tensor*> by_id;
    for (const auto& t : tensors) by_id[t.id] = &t.value;
    auto params = model.parameters();
    for (auto* p : params) {
        auto it = by_id.find(p->id);
        if (it == by_id.end()) throw ConfigError("import_parameters: checkpoint lacks parameter " + p->id);
        if (!it->second->same_shape(p->value))
            throw ConfigError("import_parameters: shape mismatch for " + p->id + ": checkpoint " +
                              nn::shape_string(it->second->shape()) + ", model " + nn::shape_string(p->value.shape()));
        p->value = *it->second;
        p->zero_grad();
    }
}

}  // namespace cmwno::model
