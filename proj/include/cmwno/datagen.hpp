#pragma once

// Random initial conditions, the ETDRK4 reaction-diffusion integrator for the
// Gray-Scott and Belousov-Zhabotinsky systems, and grid subsampling.

#include <complex>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace cmwno::datagen {

using Field = std::vector<double>;

/// N(0, scale * (-Laplacian + tau^2 I)^(-alpha)) on a periodic interval.
struct GrfSpec {
    double scale = 2401.0;  // 7^4
    double tau = 7.0;
    double alpha = 2.5;
    double length = 10.0;
    std::size_t n = 1024;
};

/// Standard deviation of Fourier coefficient j: sqrt(scale) * (omega_j^2 + tau^2)^(-alpha/2).
double grf_mode_std(const GrfSpec& spec, long j);

/// f(x_m) = sum_j c_j exp(i omega_j x_m), omega_j = 2 pi j / X, Hermitian c_j with
/// E|c_j|^2 = grf_mode_std^2 (zero mode included, Nyquist mode real).
Field sample_grf(const GrfSpec& spec, std::mt19937_64& rng);

/// Fourier series truncated at |j| <= floor(X / gamma), unit pointwise variance.
struct BandlimitedSpec {
    double gamma = 0.5;
    double length = 10.0;
    std::size_t n = 1024;
};

std::size_t bandlimit_modes(const BandlimitedSpec& spec);
Field sample_bandlimited(const BandlimitedSpec& spec, std::mt19937_64& rng);

/// Fourier coefficients c_j, j = 0..n/2, of a real periodic field (inverse of the synthesis above).
std::vector<std::complex<double>> fourier_coefficients(const Field& f);

// ---- reaction-diffusion systems -----------------------------------------

/// du_i/dt = diffusivity_i * u_i'' + reaction_i(u) on a periodic domain.
struct ReactionDiffusion {
    std::vector<std::string> names;
    std::vector<double> diffusivity;
    double length = 1.0;
    /// Pointwise reaction: in and out both hold one value per variable.
    std::function<void(const double* in, double* out)> reaction;
};

struct GsParams {
    double eps1 = 1.0;
    double eps2 = 1e-2;
    double K = 6.62e-2;
    double F = 2e-2;
    double lambda = 1.0;
    double length = 10.0;
    double horizon = 1.0;
};

struct BzParams {
    double eps1 = 5e-2;
    double eps2 = 5e-2;
    double eps3 = 2e-2;
    double length = 1.0;
    double horizon = 0.2;
};

ReactionDiffusion gray_scott(const GsParams& p);
ReactionDiffusion belousov_zhabotinsky(const BzParams& p);

/// Solution snapshots: snapshots[t][var] is the field at times[t].
struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<Field>> snapshots;
};

/// Fourth-order exponential time differencing (Kassam-Trefethen) with fixed
/// step dt. Every requested time must be a multiple of dt. Throws
/// NumericError naming the step index if a field exceeds 1e6 in magnitude
/// or becomes non-finite.
Trajectory etdrk4_solve(const ReactionDiffusion& system, const std::vector<Field>& inits, double dt,
                        std::vector<double> times, int contour_points = 32);

/// Every (N/M)-th point from index 0.
Field subsample(const Field& field, std::size_t target);

/// Deterministic per-stream seed for (master seed, sample index, stream).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0);

}  // namespace cmwno::datagen
