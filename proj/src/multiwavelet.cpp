#include "cmwno/multiwavelet.hpp"

#include "cmwno/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cmwno::mw {

namespace {

using StridedRows = Eigen::Map<const Block, 0, Eigen::OuterStride<>>;
using MutableStridedRows = Eigen::Map<Block, 0, Eigen::OuterStride<>>;

// Legendre P_n and derivative at t in [-1, 1].
std::pair<double, double> legendre_with_derivative(std::size_t n, double t) {
    double p0 = 1.0;
    double p1 = t;
    if (n == 0) return {1.0, 0.0};
    for (std::size_t i = 2; i <= n; ++i) {
        const double pi = ((2.0 * i - 1.0) * t * p1 - (i - 1.0) * p0) / static_cast<double>(i);
        p0 = p1;
        p1 = pi;
    }
    const double dp = static_cast<double>(n) * (t * p1 - p0) / (t * t - 1.0);
    return {p1, dp};
}

// Monomial coefficients (in x) of sqrt(2i+1) P_i(2x-1), i = 0..k-1.
std::vector<std::vector<double>> shifted_legendre_monomials(int k) {
    std::vector<std::vector<double>> raw(k);
    raw[0] = {1.0};
    if (k > 1) raw[1] = {-1.0, 2.0};
    for (int i = 2; i < k; ++i) {
        // i P_i = (2i-1)(2x-1) P_{i-1} - (i-1) P_{i-2}
        std::vector<double> next(i + 1, 0.0);
        const auto& prev = raw[i - 1];
        const auto& prev2 = raw[i - 2];
        for (std::size_t j = 0; j < prev.size(); ++j) {
            next[j + 1] += (2.0 * i - 1.0) * 2.0 * prev[j];
            next[j] -= (2.0 * i - 1.0) * prev[j];
        }
        for (std::size_t j = 0; j < prev2.size(); ++j) next[j] -= (i - 1.0) * prev2[j];
        for (auto& c : next) c /= static_cast<double>(i);
        raw[i] = std::move(next);
    }
    for (int i = 0; i < k; ++i) {
        const double norm = std::sqrt(2.0 * i + 1.0);
        for (auto& c : raw[i]) c *= norm;
    }
    return raw;
}

double horner(const std::vector<double>& coeffs, double x) {
    double acc = 0.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
    return acc;
}

PiecewisePoly on_halves(const std::vector<double>& left, const std::vector<double>& right) {
    return PiecewisePoly({{0.0, 0.5, left}, {0.5, 1.0, right}});
}

// h = [h0 h1]: h0(j, m) = <phi_j, sqrt2 phi_m(2x)> on [0, 1/2], h1 likewise on [1/2, 1].
Eigen::MatrixXd two_scale_scaling(int k);

}  // namespace

QuadratureRule gauss_legendre(std::size_t n, double lo, double hi) {
    if (n == 0) throw ConfigError("gauss_legendre: need at least one node");
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    for (std::size_t i = 0; i < n; ++i) {
        double t = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            auto [p, d] = legendre_with_derivative(n, t);
            dp = d;
            const double dt = p / d;
            t -= dt;
            if (std::abs(dt) < 1e-16) break;
        }
        dp = legendre_with_derivative(n, t).second;
        // Nodes come out descending; store ascending.
        rule.nodes[n - 1 - i] = mid + half * t;
        rule.weights[n - 1 - i] = half * 2.0 / ((1.0 - t * t) * dp * dp);
    }
    return rule;
}

double legendre_shifted(int i, double x) {
    const double t = 2.0 * x - 1.0;
    double p0 = 1.0;
    double p1 = t;
    double value = 1.0;
    if (i == 1) value = t;
    for (int n = 2; n <= i; ++n) {
        value = ((2.0 * n - 1.0) * t * p1 - (n - 1.0) * p0) / n;
        p0 = p1;
        p1 = value;
    }
    return std::sqrt(2.0 * i + 1.0) * value;
}

PiecewisePoly::PiecewisePoly(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
    if (pieces_.empty()) throw ConfigError("PiecewisePoly: no pieces");
    if (pieces_.front().lo != 0.0 || pieces_.back().hi != 1.0)
        throw ConfigError("PiecewisePoly: pieces must cover [0, 1]");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        if (!(pieces_[i].lo < pieces_[i].hi)) throw ConfigError("PiecewisePoly: empty interval");
        if (i > 0 && pieces_[i].lo != pieces_[i - 1].hi)
            throw ConfigError("PiecewisePoly: intervals must be contiguous");
    }
}

double PiecewisePoly::operator()(double x) const {
    for (const auto& p : pieces_) {
        if (x >= p.lo && x < p.hi) return horner(p.coeffs, x);
    }
    if (x == 1.0) return horner(pieces_.back().coeffs, x);
    return 0.0;
}

std::size_t PiecewisePoly::degree_bound() const {
    std::size_t bound = 0;
    for (const auto& p : pieces_) {
        for (std::size_t d = p.coeffs.size(); d > bound; --d) {
            if (p.coeffs[d - 1] != 0.0) {
                bound = d;
                break;
            }
        }
    }
    return bound;
}

PiecewisePoly& PiecewisePoly::axpy(double alpha, const PiecewisePoly& other) {
    if (other.pieces_.size() != pieces_.size())
        throw ConfigError("PiecewisePoly::axpy: partitions differ");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        auto& mine = pieces_[i];
        const auto& theirs = other.pieces_[i];
        if (mine.lo != theirs.lo || mine.hi != theirs.hi)
            throw ConfigError("PiecewisePoly::axpy: partitions differ");
        if (mine.coeffs.size() < theirs.coeffs.size()) mine.coeffs.resize(theirs.coeffs.size(), 0.0);
        for (std::size_t j = 0; j < theirs.coeffs.size(); ++j) mine.coeffs[j] += alpha * theirs.coeffs[j];
    }
    return *this;
}

PiecewisePoly& PiecewisePoly::scale(double alpha) {
    for (auto& p : pieces_)
        for (auto& c : p.coeffs) c *= alpha;
    return *this;
}

double inner_product(const PiecewisePoly& a, const PiecewisePoly& b, std::size_t nodes) {
    std::vector<double> breaks;
    for (const auto& p : a.pieces()) breaks.push_back(p.lo);
    for (const auto& p : b.pieces()) breaks.push_back(p.lo);
    breaks.push_back(1.0);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    double total = 0.0;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const auto rule = gauss_legendre(nodes, breaks[i], breaks[i + 1]);
        for (std::size_t q = 0; q < nodes; ++q) total += rule.weights[q] * a(rule.nodes[q]) * b(rule.nodes[q]);
    }
    return total;
}

double moment(const PiecewisePoly& f, int power) {
    std::vector<double> mono(power + 1, 0.0);
    mono[power] = 1.0;
    const PiecewisePoly xp({{0.0, 1.0, mono}});
    return inner_product(f, xp, (power + f.degree_bound()) / 2 + 1);
}

PolyBasis build_basis(int k) {
    if (k < 1 || k > kMaxOrder)
        throw ConfigError("build_basis: order k=" + std::to_string(k) + " outside [1, 8]");

    const auto mono = shifted_legendre_monomials(k);
    PolyBasis basis;
    basis.k = k;
    for (int j = 0; j < k; ++j) basis.scaling.emplace_back(std::vector<PiecewisePoly::Piece>{{0.0, 1.0, mono[j]}});

    // Gram-Schmidt runs on coordinates in the orthonormal fine basis
    // {sqrt2 phi_m(2x), sqrt2 phi_m(2x-1)}, where L2 products are plain dot products.
    // Working on monomials directly loses about 1e-7 at k = 8.
    const Eigen::MatrixXd h = two_scale_scaling(k);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(k, 2 * k);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(2 * k);
        w(j) = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (int i = 0; i < k; ++i) w -= h.row(i).dot(w) * h.row(i).transpose();
            for (int i = 0; i < j; ++i) w -= g.row(i).dot(w) * g.row(i).transpose();
        }
        const double norm = w.norm();
        if (!(norm > 1e-10))
            throw NumericError("build_basis: Gram-Schmidt produced a zero norm at wavelet " + std::to_string(j));
        w /= norm;
        // the highest degree on [0, 1/2) comes from the last nonzero left coordinate
        const double scale = w.head(k).cwiseAbs().maxCoeff();
        for (int m = k - 1; m >= 0; --m) {
            if (std::abs(w(m)) > 1e-12 * scale) {
                if (w(m) < 0.0) w = -w;
                break;
            }
        }
        g.row(j) = w.transpose();
    }
    basis.wavelet_fine = g;

    // monomial form of sqrt2 phi_m(2x) and sqrt2 phi_m(2x - 1)
    std::vector<std::vector<double>> fine_left(k), fine_right(k);
    for (int m = 0; m < k; ++m) {
        fine_left[m].assign(mono[m].size(), 0.0);
        fine_right[m].assign(mono[m].size(), 0.0);
        for (std::size_t i = 0; i < mono[m].size(); ++i) {
            const double a = std::sqrt(2.0) * mono[m][i] * std::ldexp(1.0, static_cast<int>(i));
            fine_left[m][i] += a;
            // (2x - 1)^i expanded binomially
            double binom = 1.0;
            for (std::size_t r = 0; r <= i; ++r) {
                const double sign = (i - r) % 2 ? -1.0 : 1.0;
                fine_right[m][r] += std::sqrt(2.0) * mono[m][i] * binom * std::ldexp(1.0, static_cast<int>(r)) * sign;
                binom = binom * static_cast<double>(i - r) / static_cast<double>(r + 1);
            }
        }
    }
    for (int j = 0; j < k; ++j) {
        std::vector<double> left(k, 0.0), right(k, 0.0);
        for (int m = 0; m < k; ++m)
            for (std::size_t i = 0; i < fine_left[m].size(); ++i) {
                left[i] += g(j, m) * fine_left[m][i];
                right[i] += g(j, k + m) * fine_right[m][i];
            }
        basis.wavelet.push_back(on_halves(left, right));
    }
    return basis;
}

Eigen::MatrixXd FilterBank::stacked() const {
    Eigen::MatrixXd o(2 * k, 2 * k);
    o << h0, h1, g0, g1;
    return o;
}

double FilterBank::orthogonality_residual() const {
    const Eigen::MatrixXd o = stacked();
    return (o * o.transpose() - Eigen::MatrixXd::Identity(2 * k, 2 * k)).cwiseAbs().maxCoeff();
}

FilterBank build_filters(const PolyBasis& basis) {
    const int k = basis.k;
    if (k < 1 || static_cast<int>(basis.scaling.size()) != k || static_cast<int>(basis.wavelet.size()) != k ||
        basis.wavelet_fine.rows() != k || basis.wavelet_fine.cols() != 2 * k)
        throw ConfigError("build_filters: malformed basis");

    FilterBank fb;
    fb.k = k;
    const Eigen::MatrixXd h = two_scale_scaling(k);
    fb.h0 = h.leftCols(k);
    fb.h1 = h.rightCols(k);
    fb.g0 = basis.wavelet_fine.leftCols(k);
    fb.g1 = basis.wavelet_fine.rightCols(k);
    const double residual = fb.orthogonality_residual();
    if (residual > 1e-12)
        throw NumericError("build_filters: orthogonality residual " + std::to_string(residual) + " exceeds 1e-12");
    return fb;
}

namespace {

Eigen::MatrixXd two_scale_scaling(int k) {
    // products have degree <= 2k - 2, so k Gauss points per half are exact
    const auto left = gauss_legendre(static_cast<std::size_t>(k), 0.0, 0.5);
    const auto right = gauss_legendre(static_cast<std::size_t>(k), 0.5, 1.0);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, 2 * k);
    for (int j = 0; j < k; ++j)
        for (int m = 0; m < k; ++m)
            for (int q = 0; q < k; ++q) {
                const double xl = left.nodes[q], xr = right.nodes[q];
                h(j, m) += left.weights[q] * legendre_shifted(j, xl) * std::sqrt(2.0) * legendre_shifted(m, 2.0 * xl);
                h(j, k + m) +=
                    right.weights[q] * legendre_shifted(j, xr) * std::sqrt(2.0) * legendre_shifted(m, 2.0 * xr - 1.0);
            }
    return h;
}

}  // namespace

FilterBank legendre_filters(int k) { return build_filters(build_basis(k)); }

StepResult decompose_step(const Block& fine, const FilterBank& fb) {
    const Eigen::Index k = fb.k;
    if (fine.cols() != k) throw ConfigError("decompose_step: block width does not match filter order");
    if (fine.rows() % 2 != 0) throw ConfigError("decompose_step: odd spatial length " + std::to_string(fine.rows()));
    const Eigen::Index m = fine.rows() / 2;
    StepResult out{Block(m, k), Block(m, k)};
    if (m == 0) return out;
    const StridedRows even(fine.data(), m, k, Eigen::OuterStride<>(2 * k));
    const StridedRows odd(fine.data() + k, m, k, Eigen::OuterStride<>(2 * k));
    out.coarse.noalias() = even * fb.h0.transpose() + odd * fb.h1.transpose();
    out.detail.noalias() = even * fb.g0.transpose() + odd * fb.g1.transpose();
    return out;
}

Block reconstruct_step(const Block& coarse, const Block& detail, const FilterBank& fb) {
    const Eigen::Index k = fb.k;
    if (coarse.rows() != detail.rows() || coarse.cols() != detail.cols())
        throw ConfigError("reconstruct_step: scaling and detail blocks differ in shape");
    if (coarse.cols() != k) throw ConfigError("reconstruct_step: block width does not match filter order");
    const Eigen::Index m = coarse.rows();
    Block fine(2 * m, k);
    if (m == 0) return fine;
    MutableStridedRows even(fine.data(), m, k, Eigen::OuterStride<>(2 * k));
    MutableStridedRows odd(fine.data() + k, m, k, Eigen::OuterStride<>(2 * k));
    even.noalias() = coarse * fb.h0 + detail * fb.g0;
    odd.noalias() = coarse * fb.h1 + detail * fb.g1;
    return fine;
}

std::size_t MultiwaveletCoeffs::coefficient_count() const {
    std::size_t total = static_cast<std::size_t>(coarse.size());
    for (const auto& d : details) total += static_cast<std::size_t>(d.size());
    return total;
}

double MultiwaveletCoeffs::squared_norm() const {
    double total = coarse.squaredNorm();
    for (const auto& d : details) total += d.squaredNorm();
    return total;
}

int exact_log2(std::size_t value) {
    if (value == 0 || (value & (value - 1)) != 0)
        throw ConfigError("length " + std::to_string(value) + " is not a power of two");
    int n = 0;
    while ((std::size_t{1} << n) < value) ++n;
    return n;
}

MultiwaveletCoeffs forward_transform(const Block& x, const FilterBank& fb, int floor) {
    const int n = exact_log2(static_cast<std::size_t>(x.rows()));
    if (floor < 0 || floor >= n)
        throw ConfigError("forward_transform: need 0 <= floor < log2(N), got floor=" + std::to_string(floor) +
                          " with N=" + std::to_string(x.rows()));
    MultiwaveletCoeffs out;
    out.levels = n;
    out.floor = floor;
    out.details.resize(static_cast<std::size_t>(n - floor));
    Block current = x;
    for (int level = n - 1; level >= floor; --level) {
        auto step = decompose_step(current, fb);
        out.details[static_cast<std::size_t>(level - floor)] = std::move(step.detail);
        current = std::move(step.coarse);
    }
    out.coarse = std::move(current);
    return out;
}

Block inverse_transform(const MultiwaveletCoeffs& c, const FilterBank& fb) {
    if (c.floor < 0 || c.levels <= c.floor || c.details.size() != static_cast<std::size_t>(c.levels - c.floor))
        throw ConfigError("inverse_transform: level bookkeeping is inconsistent");
    if (c.coarse.rows() != (Eigen::Index{1} << c.floor))
        throw ConfigError("inverse_transform: coarse block has wrong length");
    Block current = c.coarse;
    for (std::size_t i = 0; i < c.details.size(); ++i) {
        const Eigen::Index expected = Eigen::Index{1} << (c.floor + static_cast<int>(i));
        if (c.details[i].rows() != expected)
            throw ConfigError("inverse_transform: detail block " + std::to_string(i) + " has length " +
                              std::to_string(c.details[i].rows()) + ", expected " + std::to_string(expected));
        current = reconstruct_step(current, c.details[i], fb);
    }
    return current;
}

}  // namespace cmwno::mw
