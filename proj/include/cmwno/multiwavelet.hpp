#pragma once

// Legendre multiwavelets on [0, 1]: basis construction, two-scale filters,
// and the decomposition/reconstruction cascades between resolution levels.

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace cmwno::mw {

/// Coefficient block: one row per spatial position, one column per basis index.
using Block = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kMaxOrder = 8;

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre rule mapped to [lo, hi]; exact for degree <= 2n-1.
QuadratureRule gauss_legendre(std::size_t n, double lo, double hi);

/// Orthonormal shifted Legendre polynomial sqrt(2i+1) P_i(2x-1) on [0, 1].
double legendre_shifted(int i, double x);

/// Piecewise polynomial on a partition of [0, 1]. Coefficients are monomial
/// in the global coordinate x, lowest degree first.
class PiecewisePoly {
public:
    struct Piece {
        double lo = 0.0;
        double hi = 1.0;
        std::vector<double> coeffs;
    };

    PiecewisePoly() = default;
    explicit PiecewisePoly(std::vector<Piece> pieces);

    const std::vector<Piece>& pieces() const { return pieces_; }

    /// Value at x; pieces are half-open [lo, hi) except the last, which is closed.
    double operator()(double x) const;

    /// One more than the highest degree carrying a nonzero coefficient.
    std::size_t degree_bound() const;

    PiecewisePoly& axpy(double alpha, const PiecewisePoly& other);
    PiecewisePoly& scale(double alpha);

private:
    std::vector<Piece> pieces_;
};

/// Integral over [0, 1] of a*b using `nodes` Gauss points per common subinterval.
double inner_product(const PiecewisePoly& a, const PiecewisePoly& b, std::size_t nodes);

/// Integral over [0, 1] of x^power * f(x), exact for the degrees involved.
double moment(const PiecewisePoly& f, int power);

struct PolyBasis {
    int k = 0;
    std::vector<PiecewisePoly> scaling;  // phi_0 .. phi_{k-1}
    std::vector<PiecewisePoly> wavelet;  // psi_0 .. psi_{k-1}
    /// psi_j in the fine basis {sqrt2 phi_m(2x), sqrt2 phi_m(2x-1)}: k x 2k, row j = [g0 | g1].
    Eigen::MatrixXd wavelet_fine;
};

/// Scaling functions are the orthonormal shifted Legendre polynomials. Wavelets
/// come from two-pass modified Gram-Schmidt of {sqrt(2) phi_j(2x) on [0, 1/2)}
/// against V_0 and each other, carried out on fine-basis coordinates. Each psi_j
/// is signed so that its highest-degree coefficient on [0, 1/2) is positive.
PolyBasis build_basis(int k);

struct FilterBank {
    int k = 0;
    Eigen::MatrixXd h0, h1, g0, g1;

    /// The 2k x 2k two-scale matrix [[h0, h1], [g0, g1]].
    Eigen::MatrixXd stacked() const;

    /// max |O O^T - I|.
    double orthogonality_residual() const;
};

FilterBank build_filters(const PolyBasis& basis);

/// Convenience: build_filters(build_basis(k)).
FilterBank legendre_filters(int k);

struct StepResult {
    Block coarse;
    Block detail;
};

/// s[l] = h0 s_fine[2l] + h1 s_fine[2l+1]; d[l] = g0 s_fine[2l] + g1 s_fine[2l+1].
StepResult decompose_step(const Block& fine, const FilterBank& fb);

/// Exact inverse of decompose_step.
Block reconstruct_step(const Block& coarse, const Block& detail, const FilterBank& fb);

struct MultiwaveletCoeffs {
    std::vector<Block> details;  // coarsest first: details[i] sits at level floor + i
    Block coarse;                // 2^floor positions
    int levels = 0;              // n, with 2^n input positions
    int floor = 0;               // L

    std::size_t coefficient_count() const;
    double squared_norm() const;
};

MultiwaveletCoeffs forward_transform(const Block& x, const FilterBank& fb, int floor = 0);
Block inverse_transform(const MultiwaveletCoeffs& c, const FilterBank& fb);

/// Exponent n with 2^n == value; throws ConfigError otherwise.
int exact_log2(std::size_t value);

}  // namespace cmwno::mw
