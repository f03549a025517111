#include "cmwno/error.hpp"
#include "cmwno/multiwavelet.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cmwno;
using mw::Block;

namespace {

Block random_block(Eigen::Index rows, int k, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Block b(rows, k);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = normal(rng);
    return b;
}

// exact integral of x^p * f over [0,1] straight from the monomial pieces
double exact_moment(const mw::PiecewisePoly& f, int p) {
    double s = 0.0;
    for (const auto& piece : f.pieces())
        for (std::size_t d = 0; d < piece.coeffs.size(); ++d) {
            const int e = p + static_cast<int>(d) + 1;
            s += piece.coeffs[d] * (std::pow(piece.hi, e) - std::pow(piece.lo, e)) / e;
        }
    return s;
}

// boost's 10-point Gauss rule: exact through degree 19, nodes strictly inside (lo, hi)
template <class F>
double quad(F f, double lo, double hi) {
    return boost::math::quadrature::gauss<double, 10>::integrate(f, lo, hi);
}

}  // namespace

TEST(Legendre, DocumentedValues) {
    EXPECT_DOUBLE_EQ(mw::legendre_shifted(0, 0.7), 1.0);
    EXPECT_NEAR(mw::legendre_shifted(1, 0.5), 0.0, 1e-15);
    EXPECT_NEAR(mw::legendre_shifted(2, 0.0), std::sqrt(5.0), 1e-14);
}

TEST(Legendre, MatchesClosedForms) {
    for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) {
        EXPECT_NEAR(mw::legendre_shifted(1, x), std::sqrt(3.0) * (2 * x - 1), 1e-14);
        EXPECT_NEAR(mw::legendre_shifted(2, x), std::sqrt(5.0) * (6 * x * x - 6 * x + 1), 1e-13);
        EXPECT_NEAR(mw::legendre_shifted(3, x), std::sqrt(7.0) * (20 * x * x * x - 30 * x * x + 12 * x - 1), 1e-13);
    }
}

TEST(Basis, HaarCase) {
    const auto b = mw::build_basis(1);
    ASSERT_EQ(b.wavelet.size(), 1u);
    for (double x : {0.0, 0.1, 0.3, 0.49})
        EXPECT_NEAR(b.wavelet[0](x), 1.0, 1e-12);
    for (double x : {0.5, 0.6, 0.9, 1.0})
        EXPECT_NEAR(b.wavelet[0](x), -1.0, 1e-12);
}

TEST(Basis, OrthonormalityByIndependentQuadrature) {
    for (int k : {1, 2, 3, 4, 6, 8}) {
        const auto b = mw::build_basis(k);
        auto ip = [](const mw::PiecewisePoly& f, const mw::PiecewisePoly& g) {
            auto prod = [&](double x) { return f(x) * g(x); };
            return quad(prod, 0.0, 0.5) + quad(prod, 0.5, 1.0);
        };
        // monomial evaluation at k = 8 carries coefficients near 1e6, so ~1e-9 roundoff
        const double tol = k <= 6 ? 1e-10 : 1e-8;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const double delta = i == j ? 1.0 : 0.0;
                EXPECT_NEAR(ip(b.scaling[i], b.scaling[j]), delta, tol) << "k=" << k;
                EXPECT_NEAR(ip(b.wavelet[i], b.wavelet[j]), delta, tol) << "k=" << k;
                EXPECT_NEAR(ip(b.scaling[i], b.wavelet[j]), 0.0, tol) << "k=" << k;
            }
    }
}

TEST(Basis, VanishingMoments) {
    for (int k = 1; k <= 8; ++k) {
        const auto b = mw::build_basis(k);
        for (int j = 0; j < k; ++j)
            for (int p = 0; p < k; ++p) {
                EXPECT_LE(std::abs(exact_moment(b.wavelet[j], p)), 1e-8) << "k=" << k << " j=" << j << " p=" << p;
                EXPECT_LE(std::abs(mw::moment(b.wavelet[j], p)), 1e-8);
            }
    }
}

TEST(Basis, WaveletSignConvention) {
    for (int k = 1; k <= 6; ++k) {
        const auto b = mw::build_basis(k);
        for (const auto& psi : b.wavelet) {
            const auto& c = psi.pieces().front().coeffs;
            double scale = 0.0;
            for (double v : c) scale = std::max(scale, std::abs(v));
            auto it = std::find_if(c.rbegin(), c.rend(), [&](double v) { return std::abs(v) > 1e-9 * scale; });
            ASSERT_NE(it, c.rend());
            EXPECT_GT(*it, 0.0);
        }
    }
}

TEST(Basis, RejectsOrderOutOfRange) {
    EXPECT_THROW(mw::build_basis(0), ConfigError);
    EXPECT_THROW(mw::build_basis(9), ConfigError);
}

TEST(Filters, HaarValues) {
    const auto fb = mw::legendre_filters(1);
    const double r = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(fb.h0(0, 0), r, 1e-15);
    EXPECT_NEAR(fb.h1(0, 0), r, 1e-15);
    EXPECT_NEAR(fb.g0(0, 0), r, 1e-15);
    EXPECT_NEAR(fb.g1(0, 0), -r, 1e-15);
}

TEST(Filters, MatchDefiningInnerProducts) {
    // h0[j][m] = <phi_j, sqrt2 phi_m(2x)> on [0, 1/2], by an outside quadrature
    const int k = 3;
    const auto b = mw::build_basis(k);
    const auto fb = mw::build_filters(b);
    for (int j = 0; j < k; ++j)
        for (int m = 0; m < k; ++m) {
            auto h0 = [&](double x) { return b.scaling[j](x) * std::sqrt(2.0) * mw::legendre_shifted(m, 2 * x); };
            auto h1 = [&](double x) { return b.scaling[j](x) * std::sqrt(2.0) * mw::legendre_shifted(m, 2 * x - 1); };
            auto g0 = [&](double x) { return b.wavelet[j](x) * std::sqrt(2.0) * mw::legendre_shifted(m, 2 * x); };
            auto g1 = [&](double x) { return b.wavelet[j](x) * std::sqrt(2.0) * mw::legendre_shifted(m, 2 * x - 1); };
            EXPECT_NEAR(fb.h0(j, m), quad(h0, 0.0, 0.5), 1e-10);
            EXPECT_NEAR(fb.h1(j, m), quad(h1, 0.5, 1.0), 1e-10);
            EXPECT_NEAR(fb.g0(j, m), quad(g0, 0.0, 0.5), 1e-10);
            EXPECT_NEAR(fb.g1(j, m), quad(g1, 0.5, 1.0), 1e-10);
        }
}

TEST(Filters, OrthogonalForEveryOrder) {
    for (int k = 1; k <= 8; ++k) {
        const auto fb = mw::legendre_filters(k);
        const Eigen::MatrixXd o = fb.stacked();
        const double resid = (o * o.transpose() - Eigen::MatrixXd::Identity(2 * k, 2 * k)).cwiseAbs().maxCoeff();
        EXPECT_LE(resid, 1e-12) << "k=" << k;
        EXPECT_NEAR(fb.orthogonality_residual(), resid, 1e-15);
    }
}

TEST(Step, HaarPair) {
    const auto fb = mw::legendre_filters(1);
    Block x(2, 1);
    x << 3.0, -1.0;
    const auto r = mw::decompose_step(x, fb);
    EXPECT_NEAR(r.coarse(0, 0), 2.0 / std::sqrt(2.0), 4e-15);
    EXPECT_NEAR(r.detail(0, 0), 4.0 / std::sqrt(2.0), 4e-15);

    Block c(1, 1), d(1, 1);
    c << 5.0;
    d << 0.0;
    const Block y = mw::reconstruct_step(c, d, fb);
    EXPECT_NEAR(y(0, 0), 5.0 / std::sqrt(2.0), 4e-15);
    EXPECT_NEAR(y(1, 0), 5.0 / std::sqrt(2.0), 4e-15);
}

TEST(Step, RoundTripAndZero) {
    std::mt19937_64 rng(1);
    const auto fb = mw::legendre_filters(4);
    const Block x = random_block(8, 4, rng);
    const auto r = mw::decompose_step(x, fb);
    EXPECT_LE((mw::reconstruct_step(r.coarse, r.detail, fb) - x).cwiseAbs().maxCoeff(), 1e-12);

    const auto z = mw::decompose_step(Block::Zero(8, 4), fb);
    EXPECT_EQ(z.coarse.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(z.detail.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(mw::reconstruct_step(Block::Zero(4, 4), Block::Zero(4, 4), fb).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Step, RejectsBadShapes) {
    const auto fb = mw::legendre_filters(2);
    EXPECT_THROW(mw::decompose_step(Block::Zero(3, 2), fb), ConfigError);
    EXPECT_THROW(mw::reconstruct_step(Block::Zero(2, 2), Block::Zero(3, 2), fb), ConfigError);
}

TEST(Transform, LevelBookkeeping) {
    std::mt19937_64 rng(2);
    const auto fb = mw::legendre_filters(4);
    const auto c = mw::forward_transform(random_block(8, 4, rng), fb);
    ASSERT_EQ(c.details.size(), 3u);
    EXPECT_EQ(c.details[0].rows(), 1);
    EXPECT_EQ(c.details[1].rows(), 2);
    EXPECT_EQ(c.details[2].rows(), 4);
    EXPECT_EQ(c.coarse.rows(), 1);
    EXPECT_EQ(c.coefficient_count(), 8u * 4u);

    const auto c2 = mw::forward_transform(random_block(16, 4, rng), fb, 2);
    EXPECT_EQ(c2.coarse.rows(), 4);
    EXPECT_EQ(c2.details.size(), 2u);
}

TEST(Transform, RejectsNonDyadic) {
    const auto fb = mw::legendre_filters(2);
    EXPECT_THROW(mw::forward_transform(Block::Zero(12, 2), fb), ConfigError);
    EXPECT_THROW(mw::forward_transform(Block::Zero(8, 2), fb, 3), ConfigError);
}

// perfect reconstruction, Parseval and linearity over the acceptance grid
class TransformProperties : public ::testing::TestWithParam<std::tuple<int, int>> {};

TEST_P(TransformProperties, Hold) {
    const auto [k, n] = GetParam();
    std::mt19937_64 rng(k * 1000 + n);
    const auto fb = mw::legendre_filters(k);
    const Block x = random_block(n, k, rng);
    const Block y = random_block(n, k, rng);
    const auto cx = mw::forward_transform(x, fb);

    const double xinf = x.cwiseAbs().maxCoeff();
    EXPECT_LE((mw::inverse_transform(cx, fb) - x).cwiseAbs().maxCoeff(), 1e-10 * xinf);
    EXPECT_NEAR(cx.squared_norm(), x.squaredNorm(), 1e-10 * x.squaredNorm());

    const double a = 0.37, bb = -1.9;
    const auto cxy = mw::forward_transform(a * x + bb * y, fb);
    const auto cy = mw::forward_transform(y, fb);
    for (std::size_t i = 0; i < cxy.details.size(); ++i)
        EXPECT_LE((cxy.details[i] - (a * cx.details[i] + bb * cy.details[i])).cwiseAbs().maxCoeff(), 1e-12 * 10);
    EXPECT_LE((cxy.coarse - (a * cx.coarse + bb * cy.coarse)).cwiseAbs().maxCoeff(), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Grid, TransformProperties,
                         ::testing::Combine(::testing::Values(1, 2, 4), ::testing::Values(64, 256, 1024)));

TEST(Transform, PolynomialHasNoDetails) {
    // project p(x) = 1 - 2x + 3x^3 (degree k-1 for k=4) into V_n by quadrature,
    // then every detail block must vanish
    const int k = 4, n = 6;
    const std::size_t N = 1u << n;
    auto p = [](double x) { return 1.0 - 2.0 * x + 3.0 * x * x * x; };
    Block s(N, k);
    const double scale = std::pow(2.0, 0.5 * n);
    for (std::size_t l = 0; l < N; ++l)
        for (int j = 0; j < k; ++j) {
            const double lo = static_cast<double>(l) / N, hi = static_cast<double>(l + 1) / N;
            s(l, j) = quad([&](double x) { return p(x) * scale * mw::legendre_shifted(j, x * N - l); }, lo, hi);
        }
    const auto c = mw::forward_transform(s, mw::legendre_filters(k));
    for (const auto& d : c.details) EXPECT_LE(d.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GT(c.coarse.cwiseAbs().maxCoeff(), 0.1);
}

TEST(Transform, InverseRejectsInconsistentLevels) {
    std::mt19937_64 rng(3);
    const auto fb = mw::legendre_filters(2);
    auto c = mw::forward_transform(random_block(16, 2, rng), fb);
    c.details[1] = Block::Zero(3, 2);
    EXPECT_THROW(mw::inverse_transform(c, fb), ConfigError);
}
