#include "cmwno/datagen.hpp"

#include "cmwno/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace cmwno::datagen {

namespace {

using cplx = std::complex<double>;

bool is_power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

// Real <-> half-complex transforms on owned buffers. FFTW's planner is not
// thread-safe; execution is.
class RealFft {
public:
    explicit RealFft(std::size_t n) : n_(n) {
        real_ = fftw_alloc_real(n);
        spec_ = fftw_alloc_complex(n / 2 + 1);
        std::lock_guard lock(planner_mutex());
        fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
    }
    ~RealFft() {
        {
            std::lock_guard lock(planner_mutex());
            fftw_destroy_plan(fwd_);
            fftw_destroy_plan(inv_);
        }
        fftw_free(real_);
        fftw_free(spec_);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    std::size_t modes() const { return n_ / 2 + 1; }

    // out[k] = sum_m in[m] exp(-2 pi i k m / n)
    void forward(const double* in, cplx* out) {
        std::copy_n(in, n_, real_);
        fftw_execute(fwd_);
        for (std::size_t k = 0; k < modes(); ++k) out[k] = {spec_[k][0], spec_[k][1]};
    }
    // out[m] = scale * sum_k Y_k exp(2 pi i k m / n) with Hermitian extension.
    void inverse(const cplx* in, double* out, double scale) {
        for (std::size_t k = 0; k < modes(); ++k) {
            spec_[k][0] = in[k].real();
            spec_[k][1] = in[k].imag();
        }
        fftw_execute(inv_);
        for (std::size_t m = 0; m < n_; ++m) out[m] = scale * real_[m];
    }

private:
    std::size_t n_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

Field synthesize(const std::vector<cplx>& coeffs, std::size_t n) {
    RealFft fft(n);
    Field f(n);
    fft.inverse(coeffs.data(), f.data(), 1.0);
    return f;
}

}  // namespace

double grf_mode_std(const GrfSpec& spec, long j) {
    const double omega = 2.0 * std::numbers::pi * static_cast<double>(j) / spec.length;
    return std::sqrt(spec.scale) * std::pow(omega * omega + spec.tau * spec.tau, -0.5 * spec.alpha);
}

Field sample_grf(const GrfSpec& spec, std::mt19937_64& rng) {
    if (!is_power_of_two(spec.n)) throw ConfigError("sample_grf: resolution must be a power of two");
    if (!(spec.length > 0.0)) throw ConfigError("sample_grf: domain length must be positive");
    std::normal_distribution<double> normal;
    const std::size_t half = spec.n / 2;
    std::vector<cplx> c(half + 1);
    for (std::size_t j = 0; j <= half; ++j) {
        const double sd = grf_mode_std(spec, static_cast<long>(j));
        if (j == 0 || j == half) {
            c[j] = sd * normal(rng);
        } else {
            const double a = normal(rng);
            const double b = normal(rng);
            c[j] = sd * cplx(a, b) / std::numbers::sqrt2;
        }
    }
    return synthesize(c, spec.n);
}

std::size_t bandlimit_modes(const BandlimitedSpec& spec) {
    if (!(spec.gamma > 0.0) || !(spec.length > 0.0) || spec.gamma > spec.length)
        throw ConfigError("sample_bandlimited: need 0 < gamma <= domain length");
    return static_cast<std::size_t>(std::floor(spec.length / spec.gamma + 1e-9));
}

Field sample_bandlimited(const BandlimitedSpec& spec, std::mt19937_64& rng) {
    if (!is_power_of_two(spec.n)) throw ConfigError("sample_bandlimited: resolution must be a power of two");
    const std::size_t m = bandlimit_modes(spec);
    if (m >= spec.n / 2)
        throw ConfigError("sample_bandlimited: " + std::to_string(m) + " modes exceed the grid's Nyquist limit");
    std::normal_distribution<double> normal;
    const double norm = 1.0 / std::sqrt(2.0 * static_cast<double>(m) + 1.0);
    std::vector<cplx> c(spec.n / 2 + 1, cplx(0.0, 0.0));
    c[0] = norm * normal(rng);
    for (std::size_t j = 1; j <= m; ++j) {
        const double a = normal(rng);
        const double b = normal(rng);
        c[j] = norm * cplx(a, b) / std::numbers::sqrt2;
    }
    return synthesize(c, spec.n);
}

std::vector<cplx> fourier_coefficients(const Field& f) {
    if (f.size() < 2 || f.size() % 2 != 0) throw ConfigError("fourier_coefficients: need even length");
    RealFft fft(f.size());
    std::vector<cplx> out(fft.modes());
    fft.forward(f.data(), out.data());
    for (auto& x : out) x /= static_cast<double>(f.size());
    return out;
}

ReactionDiffusion gray_scott(const GsParams& p) {
    if (!(p.lambda >= 0.0 && p.lambda <= 1.0)) throw ConfigError("gray_scott: lambda must lie in [0, 1]");
    ReactionDiffusion sys;
    sys.names = {"u", "v"};
    sys.diffusivity = {p.eps1, p.eps2};
    sys.length = p.length;
    sys.reaction = [p](const double* in, double* out) {
        const double u = in[0], v = in[1];
        const double uvv = p.lambda * u * v * v;
        out[0] = p.F * (1.0 - u) - uvv;
        out[1] = -(p.K + p.F) * v + uvv;
    };
    return sys;
}

ReactionDiffusion belousov_zhabotinsky(const BzParams& p) {
    ReactionDiffusion sys;
    sys.names = {"u", "v", "w"};
    sys.diffusivity = {p.eps1, p.eps2, p.eps3};
    sys.length = p.length;
    sys.reaction = [](const double* in, double* out) {
        const double u = in[0], v = in[1], w = in[2];
        out[0] = u + v - u * v - u * u;
        out[1] = w - v - u * v;
        out[2] = u - 2.0;
    };
    return sys;
}

Trajectory etdrk4_solve(const ReactionDiffusion& system, const std::vector<Field>& inits, double dt,
                        std::vector<double> times, int contour_points) {
    const std::size_t nv = system.diffusivity.size();
    if (nv == 0 || inits.size() != nv) throw ConfigError("etdrk4_solve: one initial field per variable required");
    const std::size_t n = inits.front().size();
    if (!is_power_of_two(n)) throw ConfigError("etdrk4_solve: resolution must be a power of two");
    for (const auto& f : inits)
        if (f.size() != n) throw ConfigError("etdrk4_solve: initial fields differ in resolution");
    if (!(dt > 0.0)) throw ConfigError("etdrk4_solve: dt must be positive");
    if (contour_points < 1) throw ConfigError("etdrk4_solve: contour needs at least one point");
    if (!system.reaction) throw ConfigError("etdrk4_solve: missing reaction term");

    std::map<long long, std::vector<std::size_t>> snapshot_at;
    long long last_step = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        const long long steps = std::llround(t / dt);
        if (t < 0.0 || std::abs(static_cast<double>(steps) * dt - t) > 1e-9 * std::max(1.0, t))
            throw ConfigError("etdrk4_solve: time " + std::to_string(t) + " is not a multiple of dt");
        snapshot_at[steps].push_back(i);
        last_step = std::max(last_step, steps);
    }

    RealFft fft(n);
    const std::size_t nk = fft.modes();
    const double inv_n = 1.0 / static_cast<double>(n);

    // phi-function weights per variable and mode, by contour averaging.
    struct Coeffs {
        std::vector<double> e, e2, q, f1, f2, f3;
    };
    std::vector<Coeffs> co(nv);
    std::vector<cplx> roots(static_cast<std::size_t>(contour_points));
    for (int j = 0; j < contour_points; ++j)
        roots[static_cast<std::size_t>(j)] =
            std::exp(cplx(0.0, std::numbers::pi * (j + 0.5) / contour_points));
    for (std::size_t v = 0; v < nv; ++v) {
        auto& c = co[v];
        for (auto* vec : {&c.e, &c.e2, &c.q, &c.f1, &c.f2, &c.f3}) vec->resize(nk);
        for (std::size_t k = 0; k < nk; ++k) {
            const double omega = 2.0 * std::numbers::pi * static_cast<double>(k) / system.length;
            const double hl = -system.diffusivity[v] * omega * omega * dt;
            c.e[k] = std::exp(hl);
            c.e2[k] = std::exp(hl / 2.0);
            cplx q = 0, f1 = 0, f2 = 0, f3 = 0;
            for (const cplx& r : roots) {
                const cplx z = hl + r;
                const cplx ez = std::exp(z);
                const cplx z3 = z * z * z;
                q += (std::exp(z / 2.0) - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (-2.0 + z)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            const double scale = dt / static_cast<double>(contour_points);
            // Conjugate roots pair up, so only the real part survives.
            c.q[k] = scale * q.real();
            c.f1[k] = scale * f1.real();
            c.f2[k] = scale * f2.real();
            c.f3[k] = scale * f3.real();
        }
    }

    using Spectral = std::vector<std::vector<cplx>>;
    auto make_spectral = [&] { return Spectral(nv, std::vector<cplx>(nk)); };

    std::vector<Field> phys(nv, Field(n));
    std::vector<Field> react(nv, Field(n));
    std::vector<double> point_in(nv), point_out(nv);

    auto to_physical = [&](const Spectral& s) {
        for (std::size_t v = 0; v < nv; ++v) fft.inverse(s[v].data(), phys[v].data(), inv_n);
    };
    auto nonlinear = [&](const Spectral& s, Spectral& out, long long step) {
        to_physical(s);
        for (std::size_t m = 0; m < n; ++m) {
            for (std::size_t v = 0; v < nv; ++v) {
                const double x = phys[v][m];
                if (!std::isfinite(x) || std::abs(x) > 1e6)
                    throw NumericError("etdrk4_solve: blow-up in " + system.names.at(v) + " at time step " +
                                       std::to_string(step) + " (t = " + std::to_string(static_cast<double>(step) * dt) +
                                       ")");
                point_in[v] = x;
            }
            system.reaction(point_in.data(), point_out.data());
            for (std::size_t v = 0; v < nv; ++v) react[v][m] = point_out[v];
        }
        for (std::size_t v = 0; v < nv; ++v) fft.forward(react[v].data(), out[v].data());
    };

    Trajectory traj;
    traj.times = times;
    traj.snapshots.assign(times.size(), {});

    Spectral u = make_spectral();
    for (std::size_t v = 0; v < nv; ++v) fft.forward(inits[v].data(), u[v].data());

    auto record = [&](long long step) {
        auto it = snapshot_at.find(step);
        if (it == snapshot_at.end()) return;
        std::vector<Field> fields;
        if (step == 0) {
            fields = inits;
        } else {
            to_physical(u);
            fields = phys;
            for (std::size_t v = 0; v < nv; ++v)
                for (double x : fields[v])
                    if (!std::isfinite(x) || std::abs(x) > 1e6)
                        throw NumericError("etdrk4_solve: blow-up in " + system.names.at(v) + " at time step " +
                                           std::to_string(step));
        }
        for (std::size_t idx : it->second) traj.snapshots[idx] = fields;
    };

    Spectral nu = make_spectral(), na = make_spectral(), nb = make_spectral(), nc = make_spectral();
    Spectral a = make_spectral(), b = make_spectral(), c = make_spectral();
    record(0);
    for (long long step = 1; step <= last_step; ++step) {
        nonlinear(u, nu, step - 1);
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t k = 0; k < nk; ++k) a[v][k] = co[v].e2[k] * u[v][k] + co[v].q[k] * nu[v][k];
        nonlinear(a, na, step - 1);
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t k = 0; k < nk; ++k) b[v][k] = co[v].e2[k] * u[v][k] + co[v].q[k] * na[v][k];
        nonlinear(b, nb, step - 1);
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t k = 0; k < nk; ++k)
                c[v][k] = co[v].e2[k] * a[v][k] + co[v].q[k] * (2.0 * nb[v][k] - nu[v][k]);
        nonlinear(c, nc, step - 1);
        for (std::size_t v = 0; v < nv; ++v) {
            const auto& cf = co[v];
            for (std::size_t k = 0; k < nk; ++k)
                u[v][k] = cf.e[k] * u[v][k] + cf.f1[k] * nu[v][k] + 2.0 * cf.f2[k] * (na[v][k] + nb[v][k]) +
                          cf.f3[k] * nc[v][k];
        }
        record(step);
    }
    return traj;
}

Field subsample(const Field& field, std::size_t target) {
    const std::size_t n = field.size();
    if (target == 0 || !is_power_of_two(n) || (!is_power_of_two(target) && target != 1) || n % target != 0)
        throw ConfigError("subsample: target " + std::to_string(target) + " does not divide resolution " +
                          std::to_string(n));
    const std::size_t stride = n / target;
    Field out(target);
    for (std::size_t i = 0; i < target; ++i) out[i] = field[i * stride];
    return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(master) ^ index) ^ (stream * 0xd1b54a32d192ed03ull));
}

}  // namespace cmwno::datagen
