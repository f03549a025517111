#include "cmwno/datagen.hpp"
#include "cmwno/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>
#include <set>

using namespace cmwno;
using namespace cmwno::datagen;

namespace {

// naive DFT coefficient c_j = (1/n) sum_m f_m exp(-2 pi i j m / n)
std::complex<double> dft(const Field& f, long j) {
    std::complex<double> s = 0.0;
    const double n = static_cast<double>(f.size());
    for (std::size_t m = 0; m < f.size(); ++m) s += f[m] * std::polar(1.0, -2.0 * M_PI * j * m / n);
    return s / n;
}

Field grid_fn(std::size_t n, double length, const std::function<double(double)>& f) {
    Field out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(length * i / n);
    return out;
}

double max_abs_diff(const Field& a, const Field& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(Params, DocumentedConstants) {
    const GsParams gs;
    EXPECT_EQ(gs.eps1, 1.0);
    EXPECT_EQ(gs.eps2, 1e-2);
    EXPECT_EQ(gs.K, 6.62e-2);
    EXPECT_EQ(gs.F, 2e-2);
    EXPECT_EQ(gs.length, 10.0);
    EXPECT_EQ(gs.horizon, 1.0);
    const BzParams bz;
    EXPECT_EQ(bz.eps1, 5e-2);
    EXPECT_EQ(bz.eps2, 5e-2);
    EXPECT_EQ(bz.eps3, 2e-2);
    EXPECT_EQ(bz.length, 1.0);
    EXPECT_EQ(bz.horizon, 0.2);
    const GrfSpec grf;
    EXPECT_EQ(grf.scale, 2401.0);
    EXPECT_EQ(grf.tau, 7.0);
    EXPECT_EQ(grf.alpha, 2.5);
}

TEST(Reactions, MatchHandFormulas) {
    GsParams p;
    p.lambda = 0.6;
    const auto gs = gray_scott(p);
    const double in[2] = {0.3, -1.2};
    double out[2];
    gs.reaction(in, out);
    EXPECT_NEAR(out[0], 0.02 * 0.7 - 0.6 * 0.3 * 1.44, 1e-15);
    EXPECT_NEAR(out[1], -(0.0662 + 0.02) * -1.2 + 0.6 * 0.3 * 1.44, 1e-15);

    const auto bz = belousov_zhabotinsky({});
    const double bin[3] = {0.5, -0.25, 2.0};
    double bout[3];
    bz.reaction(bin, bout);
    EXPECT_NEAR(bout[0], 0.5 - 0.25 + 0.125 - 0.25, 1e-15);
    EXPECT_NEAR(bout[1], 2.0 + 0.25 + 0.125, 1e-15);
    EXPECT_NEAR(bout[2], 0.5 - 2.0, 1e-15);
    EXPECT_THROW(gray_scott(GsParams{.lambda = 1.5}), ConfigError);
}

TEST(Grf, SameSeedSameField) {
    GrfSpec spec;
    spec.n = 128;
    std::mt19937_64 a(4), b(4), c(5);
    const auto fa = sample_grf(spec, a);
    EXPECT_EQ(fa, sample_grf(spec, b));
    EXPECT_NE(fa, sample_grf(spec, c));
}

TEST(Grf, ZeroMeanProcess) {
    GrfSpec spec;
    spec.n = 64;
    std::mt19937_64 rng(6);
    const int draws = 1000;
    double s = 0.0;
    for (int i = 0; i < draws; ++i) {
        const auto f = sample_grf(spec, rng);
        for (double x : f) s += x / f.size();
    }
    const double se = grf_mode_std(spec, 0) / std::sqrt(static_cast<double>(draws));
    EXPECT_LE(std::abs(s / draws), 3.0 * se);
}

TEST(Grf, ModeVarianceMatchesSpectrum) {
    GrfSpec spec;
    spec.n = 64;
    std::mt19937_64 rng(7);
    const std::vector<long> modes{0, 1, 3, 8, 20};
    std::vector<double> power(modes.size(), 0.0);
    const int draws = 5000;
    for (int i = 0; i < draws; ++i) {
        const auto f = sample_grf(spec, rng);
        for (std::size_t m = 0; m < modes.size(); ++m) power[m] += std::norm(dft(f, modes[m])) / draws;
    }
    for (std::size_t m = 0; m < modes.size(); ++m) {
        const double w = 2.0 * M_PI * modes[m] / spec.length;
        const double expected = 2401.0 * std::pow(w * w + 49.0, -2.5);
        EXPECT_NEAR(power[m] / expected, 1.0, 0.1) << "mode " << modes[m];
    }
    EXPECT_NEAR(grf_mode_std(spec, 0), 49.0 * std::pow(49.0, -1.25), 1e-15);
}

TEST(Bandlimited, ModesAboveCutoffVanish) {
    BandlimitedSpec spec{0.5, 10.0, 128};
    EXPECT_EQ(bandlimit_modes(spec), 20u);
    std::mt19937_64 rng(8);
    const auto f = sample_bandlimited(spec, rng);
    double low = 0.0;
    for (long j = 0; j <= 20; ++j) low = std::max(low, std::abs(dft(f, j)));
    EXPECT_GT(low, 1e-3);
    for (long j = 21; j <= 64; ++j) EXPECT_LE(std::abs(dft(f, j)), 1e-13) << j;
}

TEST(Bandlimited, GammaEqualsLengthKeepsFirstMode) {
    BandlimitedSpec spec{10.0, 10.0, 64};
    EXPECT_EQ(bandlimit_modes(spec), 1u);
    std::mt19937_64 rng(9);
    const auto f = sample_bandlimited(spec, rng);
    for (long j = 2; j <= 32; ++j) EXPECT_LE(std::abs(dft(f, j)), 1e-14);
    EXPECT_GT(std::abs(dft(f, 1)), 0.0);
}

TEST(Bandlimited, UnitPointwiseVariance) {
    BandlimitedSpec spec{0.3, 1.0, 64};
    std::mt19937_64 rng(10);
    const int draws = 5000;
    double s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const auto f = sample_bandlimited(spec, rng);
        s2 += f[17] * f[17] / draws;
    }
    EXPECT_NEAR(s2, 1.0, 0.1);
}

TEST(Bandlimited, RejectsBadGamma) {
    std::mt19937_64 rng(11);
    EXPECT_THROW(sample_bandlimited({0.0, 1.0, 64}, rng), ConfigError);
    EXPECT_THROW(sample_bandlimited({2.0, 1.0, 64}, rng), ConfigError);
    EXPECT_THROW(sample_bandlimited({0.01, 1.0, 64}, rng), ConfigError);
}

TEST(FourierCoefficients, InvertsSynthesis) {
    const auto f = grid_fn(32, 10.0, [](double x) { return 0.5 + 2.0 * std::cos(2 * M_PI * 3 * x / 10.0); });
    const auto c = fourier_coefficients(f);
    ASSERT_EQ(c.size(), 17u);
    EXPECT_NEAR(c[0].real(), 0.5, 1e-14);
    EXPECT_NEAR(c[3].real(), 1.0, 1e-14);
    EXPECT_NEAR(std::abs(c[4]), 0.0, 1e-14);
}

TEST(Etdrk4, GrayScottEquilibrium) {
    const auto sys = gray_scott({});
    const std::size_t n = 256;
    const auto traj = etdrk4_solve(sys, {Field(n, 1.0), Field(n, 0.0)}, 1e-3, {0.0, 0.5, 1.0});
    ASSERT_EQ(traj.snapshots.size(), 3u);
    EXPECT_LE(max_abs_diff(traj.snapshots[2][0], Field(n, 1.0)), 1e-10);
    EXPECT_LE(max_abs_diff(traj.snapshots[2][1], Field(n, 0.0)), 1e-10);
}

TEST(Etdrk4, HeatDecayOfSingleMode) {
    ReactionDiffusion heat;
    heat.names = {"u"};
    heat.diffusivity = {0.3};
    heat.length = 2.0;
    heat.reaction = [](const double*, double* out) { out[0] = 0.0; };
    const int m = 3;
    const double w = 2.0 * M_PI * m / heat.length;
    const auto init = grid_fn(128, heat.length, [&](double x) { return std::sin(w * x); });
    const double t = 0.25;
    const auto traj = etdrk4_solve(heat, {init}, 1e-2, {t});
    Field expected = init;
    for (auto& v : expected) v *= std::exp(-0.3 * w * w * t);
    EXPECT_LE(max_abs_diff(traj.snapshots[0][0], expected) / std::exp(-0.3 * w * w * t), 1e-8);
}

TEST(Etdrk4, FourthOrderSelfConvergence) {
    // smooth data (16 modes, 1/m amplitudes); rough GRF draws sit in the stiff
    // pre-asymptotic range at this dt and measure about 3.6
    const auto sys = gray_scott({});
    const std::vector<Field> inits{
        grid_fn(256, sys.length, [&](double x) {
            double s = 1.0;
            for (int m = 1; m <= 16; ++m) s += std::sin(2 * M_PI * m * x / sys.length + m) / m;
            return s;
        }),
        grid_fn(256, sys.length, [&](double x) {
            double s = 0.5;
            for (int m = 1; m <= 16; ++m) s += 0.5 * std::cos(2 * M_PI * m * x / sys.length + 2 * m) / m;
            return s;
        })};
    const double t = 0.1, dt = 1e-3;
    const auto ref = etdrk4_solve(sys, inits, dt / 8, {t}).snapshots[0];
    auto err = [&](double h) {
        const auto s = etdrk4_solve(sys, inits, h, {t}).snapshots[0];
        double e = 0.0;
        for (std::size_t v = 0; v < 2; ++v) e = std::max(e, max_abs_diff(s[v], ref[v]));
        return e;
    };
    const double order = std::log2(err(dt) / err(dt / 2));
    EXPECT_GE(order, 3.7);
}

TEST(Etdrk4, ZeroCouplingDecouplesV) {
    GsParams p;
    p.lambda = 0.0;
    const auto sys = gray_scott(p);
    GrfSpec g;
    g.n = 128;
    std::mt19937_64 rng(13);
    const auto u0 = sample_grf(g, rng), u1 = sample_grf(g, rng), v0 = sample_grf(g, rng);
    const auto a = etdrk4_solve(sys, {u0, v0}, 1e-3, {1.0}).snapshots[0];
    const auto b = etdrk4_solve(sys, {u1, v0}, 1e-3, {1.0}).snapshots[0];
    EXPECT_LE(max_abs_diff(a[1], b[1]), 1e-10);
    EXPECT_GT(max_abs_diff(a[0], b[0]), 1e-3);
}

TEST(Etdrk4, BzStaysFinite) {
    const auto sys = belousov_zhabotinsky({});
    std::mt19937_64 rng(14);
    std::vector<Field> inits;
    for (double gamma : {0.3, 0.2, 0.1}) inits.push_back(sample_bandlimited({gamma, 1.0, 256}, rng));
    const auto traj = etdrk4_solve(sys, inits, 2e-4, {0.0, 0.2});
    EXPECT_EQ(traj.snapshots[0], inits);
    for (const auto& f : traj.snapshots[1])
        for (double x : f) ASSERT_TRUE(std::isfinite(x));
}

TEST(Etdrk4, BlowUpReportsStep) {
    ReactionDiffusion bad;
    bad.names = {"q"};
    bad.diffusivity = {0.0};
    bad.length = 1.0;
    bad.reaction = [](const double* in, double* out) { out[0] = in[0] * in[0]; };
    try {
        etdrk4_solve(bad, {Field(16, 10.0)}, 1e-2, {1.0});
        FAIL();
    } catch (const NumericError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("q"), std::string::npos);
        EXPECT_NE(what.find("step"), std::string::npos);
    }
}

TEST(Etdrk4, RejectsOffGridTimes) {
    const auto sys = gray_scott({});
    EXPECT_THROW(etdrk4_solve(sys, {Field(16, 1.0), Field(16, 0.0)}, 1e-3, {0.00015}), ConfigError);
    EXPECT_THROW(etdrk4_solve(sys, {Field(16, 1.0)}, 1e-3, {0.1}), ConfigError);
}

TEST(Subsample, Cases) {
    Field x(1024);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01 * i * i);
    EXPECT_EQ(subsample(x, 1024), x);
    const auto s = subsample(x, 256);
    ASSERT_EQ(s.size(), 256u);
    for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(s[i], x[4 * i]);
    EXPECT_EQ(subsample(subsample(x, 512), 256), s);
    EXPECT_THROW(subsample(x, 384), ConfigError);
    EXPECT_THROW(subsample(x, 2048), ConfigError);
}

TEST(DeriveSeed, DeterministicAndSpread) {
    EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 100; ++i)
        for (std::uint64_t s = 0; s < 3; ++s) seen.insert(derive_seed(7, i, s));
    EXPECT_EQ(seen.size(), 300u);
}
