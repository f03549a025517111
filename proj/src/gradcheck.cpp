#include "cmwno/gradcheck.hpp"

#include "cmwno/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace cmwno::gradcheck {

namespace {

using nn::Tape;
using nn::Tensor;
using nn::Var;

constexpr double kStep = 1e-6;
constexpr int kDirections = 2;

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double away_from_zero = 0.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> normal;
    for (auto& x : t.data()) {
        do x = normal(rng);
        while (std::abs(x) < away_from_zero);
    }
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double rel_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / scale;
}

// Central difference along a direction drawn by `draw`. If the h and h/2
// estimates disagree the segment straddles a ReLU kink; draw again.
double smooth_difference(const std::function<void()>& draw, const std::function<double(double)>& diff) {
    double numeric = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        draw();
        numeric = diff(kStep);
        if (rel_error(numeric, diff(kStep / 2.0)) < 1e-6) break;
    }
    return numeric;
}

using InputLoss = std::function<Var(Tape&, const std::vector<Var>&)>;

CheckResult check_inputs(const std::string& name, const InputLoss& loss_fn, std::vector<Tensor> inputs,
                         std::mt19937_64& rng) {
    auto evaluate = [&](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(tape.variable(x));
        return loss_fn(tape, vars).value()[0];
    };

    std::vector<Tensor> grads;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& x : inputs) vars.push_back(tape.variable(x));
        tape.backward(loss_fn(tape, vars));
        for (Var v : vars) grads.push_back(tape.grad(v));
    }

    CheckResult r{name, 0.0, 0};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (int d = 0; d < kDirections; ++d) {
            Tensor dir;
            const double numeric = smooth_difference([&] { dir = random_tensor(inputs[i].shape(), rng); }, [&](double h) {
                auto shifted = inputs;
                for (std::size_t j = 0; j < dir.size(); ++j) shifted[i][j] = inputs[i][j] + h * dir[j];
                const double plus = evaluate(shifted);
                for (std::size_t j = 0; j < dir.size(); ++j) shifted[i][j] = inputs[i][j] - h * dir[j];
                return (plus - evaluate(shifted)) / (2.0 * h);
            });
            r.max_rel_error = std::max(r.max_rel_error, rel_error(dot(grads[i], dir), numeric));
            ++r.directions;
        }
    }
    return r;
}

CheckResult check_parameters(const std::string& name, std::span<nn::Parameter* const> params,
                             const std::function<Var(Tape&)>& loss_fn, std::mt19937_64& rng) {
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(loss_fn(tape));
    }
    std::vector<Tensor> grads;
    for (auto* p : params) grads.push_back(p->grad);
    for (auto* p : params) p->zero_grad();

    auto evaluate = [&] {
        Tape tape;
        return loss_fn(tape).value()[0];
    };

    CheckResult r{name, 0.0, 0};
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Parameter& p = *params[i];
        const Tensor saved = p.value;
        for (int d = 0; d < kDirections; ++d) {
            Tensor dir;
            const double numeric = smooth_difference([&] { dir = random_tensor(saved.shape(), rng); }, [&](double h) {
                for (std::size_t j = 0; j < dir.size(); ++j) p.value[j] = saved[j] + h * dir[j];
                const double plus = evaluate();
                for (std::size_t j = 0; j < dir.size(); ++j) p.value[j] = saved[j] - h * dir[j];
                const double minus = evaluate();
                p.value = saved;
                return (plus - minus) / (2.0 * h);
            });
            r.max_rel_error = std::max(r.max_rel_error, rel_error(dot(grads[i], dir), numeric));
            ++r.directions;
        }
    }
    return r;
}

}  // namespace

std::vector<CheckResult> run_suite(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<CheckResult> out;
    const std::size_t B = 2, N = 32;
    const int k = 4;
    const std::size_t c = 4;
    const auto fb = mw::legendre_filters(k);

    auto target_like = [&](const std::vector<std::size_t>& shape) { return random_tensor(shape, rng); };

    {
        const Tensor t = target_like({B, 3, N});
        out.push_back(check_inputs(
            "add", [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::add(v[0], v[1]), tp.constant(t)); },
            {random_tensor({B, 3, N}, rng), random_tensor({B, 3, N}, rng)}, rng));
        out.push_back(check_inputs(
            "scale", [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::scale(v[0], -1.7), tp.constant(t)); },
            {random_tensor({B, 3, N}, rng)}, rng));
        out.push_back(check_inputs(
            "relu", [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::relu(v[0]), tp.constant(t)); },
            {random_tensor({B, 3, N}, rng, 1e-2)}, rng));
        out.push_back(check_inputs(
            "relative_l2", [&](Tape& tp, const auto& v) { return nn::relative_l2(v[0], tp.constant(t)); },
            {random_tensor({B, 3, N}, rng)}, rng));
        const Tensor ts = target_like({B, 2, N});
        out.push_back(check_inputs(
            "channel_slice",
            [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::channel_slice(v[0], 1, 2), tp.constant(ts)); },
            {random_tensor({B, 3, N}, rng)}, rng));
    }
    {
        const Tensor t(std::vector<std::size_t>{}, 3.0);
        out.push_back(check_inputs(
            "sum", [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::sum(v[0]), tp.constant(t)); },
            {random_tensor({B, 3, N}, rng)}, rng));
    }
    {
        const Tensor t = target_like({B, 5, N});
        out.push_back(check_inputs(
            "conv1d",
            [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::conv1d(v[0], v[1], v[2]), tp.constant(t)); },
            {random_tensor({5, 3, 3}, rng), random_tensor({5}, rng), random_tensor({B, 3, N}, rng)}, rng));
        out.push_back(check_inputs(
            "linear",
            [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::linear(v[0], v[1], v[2]), tp.constant(t)); },
            {random_tensor({5, 3}, rng), random_tensor({5}, rng), random_tensor({B, 3, N}, rng)}, rng));
        const Tensor tg = target_like({B, 6, N});
        out.push_back(check_inputs(
            "linear_grouped",
            [&](Tape& tp, const auto& v) { return nn::relative_l2(nn::linear(v[0], v[1], v[2], 2), tp.constant(tg)); },
            {random_tensor({3, 2}, rng), random_tensor({3}, rng), random_tensor({B, 4, N}, rng)}, rng));
    }
    {
        const std::size_t C = c * static_cast<std::size_t>(k);
        const Tensor tc = target_like({B, C, N / 2});
        const Tensor td = target_like({B, C, N / 2});
        out.push_back(check_inputs(
            "wavelet_decompose",
            [&](Tape& tp, const auto& v) {
                auto r = model::decompose(v[0], fb);
                return nn::add(nn::relative_l2(r.coarse, tp.constant(tc)), nn::relative_l2(r.detail, tp.constant(td)));
            },
            {random_tensor({B, C, N}, rng)}, rng));
        const Tensor tf = target_like({B, C, N});
        out.push_back(check_inputs(
            "wavelet_reconstruct",
            [&](Tape& tp, const auto& v) { return nn::relative_l2(model::reconstruct(v[0], v[1], fb), tp.constant(tf)); },
            {random_tensor({B, C, N / 2}, rng), random_tensor({B, C, N / 2}, rng)}, rng));
    }
    {
        model::ModelConfig cfg;
        cfg.k = k;
        cfg.c = c;
        const std::vector<Tensor> inits{random_tensor({B, 1, N}, rng), random_tensor({B, 1, N}, rng)};
        const std::vector<Tensor> targets{random_tensor({B, 1, N}, rng), random_tensor({B, 1, N}, rng)};

        auto m = model::Model::create(model::ModelKind::cmwno, {"u", "v"}, cfg, seed + 1);
        for (std::size_t live = 0; live < 2; ++live) {
            auto params = m.ops[live].parameters();
            out.push_back(check_parameters(
                "cmwno_forward_live" + std::to_string(live), params,
                [&](Tape& tp) {
                    return nn::relative_l2(model::coupled_forward(tp, m, inits, live), tp.constant(targets[live]));
                },
                rng));
        }

        auto mc = model::Model::create(model::ModelKind::mwt_c, {"u", "v"}, cfg, seed + 2);
        auto params = mc.parameters();
        out.push_back(check_parameters(
            "mwt_c_forward", params,
            [&](Tape& tp) {
                auto ys = model::mwt_c_forward(tp, mc.ops[0], mc.fb, mc.config, inits);
                return nn::add(nn::relative_l2(ys[0], tp.constant(targets[0])),
                               nn::relative_l2(ys[1], tp.constant(targets[1])));
            },
            rng));
    }
    return out;
}

}  // namespace cmwno::gradcheck
