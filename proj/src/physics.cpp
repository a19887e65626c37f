#include "detune/physics.hpp"

#include "detune/errors.hpp"
#include "detune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

namespace detune::physics {

namespace {

constexpr double kSqrt8 = 2.8284271247461903; // 2*sqrt(2)

// R = sqrt((gamma^2 + 4A)^2 - 64 gamma^2 omega^2) with A = delta^2 + 4 omega^2.
// The radicand equals (gamma^2 - 16 omega^2)^2 + 8 delta^2 (gamma^2 + ...) and
// is provably nonnegative; it reaches zero only at the critically damped point
// delta = 0, omega = gamma/4, where the pole decomposition degenerates.
double radicand(const TlsParams& p) {
    const double a = p.delta * p.delta + 4.0 * p.omega * p.omega;
    const double s = p.gamma * p.gamma + 4.0 * a;
    return s * s - 64.0 * p.gamma * p.gamma * p.omega * p.omega;
}

} // namespace

void TlsParams::validate() const {
    DETUNE_REQUIRE(std::isfinite(delta), "TlsParams: delta must be finite");
    DETUNE_REQUIRE(std::isfinite(omega), "TlsParams: omega must be finite");
    DETUNE_REQUIRE(std::isfinite(gamma) && gamma > 0.0,
                   "TlsParams: gamma must be finite and positive");
}

double delay_pdf(double tau, const TlsParams& p) {
    p.validate();
    DETUNE_REQUIRE(std::isfinite(tau) && tau >= 0.0,
                   "delay_pdf: tau must be finite and >= 0");
    using cd = std::complex<double>;

    const double a = p.delta * p.delta + 4.0 * p.omega * p.omega;
    const cd big_r = std::sqrt(cd(radicand(p), 0.0));
    if (std::abs(big_r) < 1e-12 * (p.gamma * p.gamma + 4.0 * a)) {
        throw NumericalError(
            "delay_pdf: degenerate parameters (critically damped point "
            "delta=0, omega=gamma/4): pole decomposition is singular");
    }

    cd sum(0.0, 0.0);
    for (const double zeta : {-1.0, 1.0}) {
        const cd arg =
            tau * std::sqrt(cd(p.gamma * p.gamma - 4.0 * a, 0.0) + zeta * big_r) /
            kSqrt8;
        sum += zeta * std::cosh(arg);
    }
    const cd w = 8.0 * p.gamma * p.omega * p.omega / big_r *
                 std::exp(-p.gamma * tau / 2.0) * sum;

    if (std::abs(w.imag()) > 1e-10) {
        std::ostringstream msg;
        msg << "delay_pdf: imaginary residue " << w.imag()
            << " exceeds 1e-10 at tau=" << tau;
        throw NumericalError(msg.str());
    }
    double value = w.real();
    if (value < 0.0) {
        if (value < -1e-12) {
            std::ostringstream msg;
            msg << "delay_pdf: negative density " << value << " at tau=" << tau;
            throw NumericalError(msg.str());
        }
        value = 0.0;
    }
    return value;
}

DelayPdfCoeffs DelayPdfCoeffs::make(const TlsParams& p) {
    p.validate();
    const double a = p.delta * p.delta + 4.0 * p.omega * p.omega;
    const double rad = radicand(p);
    const double big_r = std::sqrt(std::max(rad, 0.0));
    if (big_r < 1e-12 * (p.gamma * p.gamma + 4.0 * a)) {
        throw NumericalError(
            "DelayPdfCoeffs: degenerate parameters (delta=0, omega=gamma/4)");
    }
    DelayPdfCoeffs c;
    c.prefac = 8.0 * p.gamma * p.omega * p.omega / big_r;
    c.half_gamma = 0.5 * p.gamma;
    const double gg = p.gamma * p.gamma;
    // Roundoff can push the theoretical zero at delta=0 slightly negative.
    c.s_plus = std::sqrt(std::max(gg - 4.0 * a + big_r, 0.0)) / kSqrt8;
    c.q_minus = std::sqrt(std::max(4.0 * a - gg + big_r, 0.0)) / kSqrt8;
    return c;
}

double DelayPdfCoeffs::eval(double tau) const {
    const double g = half_gamma;
    const double w =
        prefac * (0.5 * (std::exp((s_plus - g) * tau) +
                         std::exp(-(s_plus + g) * tau)) -
                  std::exp(-g * tau) * std::cos(q_minus * tau));
    return w > 0.0 ? w : 0.0;
}

double DelayPdfCoeffs::total_mass() const {
    if (prefac == 0.0) return 0.0; // omega = 0: no emissions
    const double a = half_gamma - s_plus;
    const double b = half_gamma + s_plus;
    const double c = half_gamma;
    const double q = q_minus;
    return prefac * (0.5 / a + 0.5 / b - c / (c * c + q * q));
}

double DelayPdfCoeffs::mean() const {
    if (prefac == 0.0) return 0.0;
    const double a = half_gamma - s_plus;
    const double b = half_gamma + s_plus;
    const double c = half_gamma;
    const double q = q_minus;
    const double cq = c * c + q * q;
    // int tau e^{-ct} cos(qt) = (c^2 - q^2) / (c^2 + q^2)^2
    return prefac * (0.5 / (a * a) + 0.5 / (b * b) - (c * c - q * q) / (cq * cq));
}

double DelayPdfCoeffs::second_moment() const {
    if (prefac == 0.0) return 0.0;
    const double a = half_gamma - s_plus;
    const double b = half_gamma + s_plus;
    const std::complex<double> z(half_gamma, -q_minus);
    // int tau^2 e^{-ct} cos(qt) = Re(2 / (c - iq)^3)
    const double osc = (2.0 / (z * z * z)).real();
    return prefac * (1.0 / (a * a * a) + 1.0 / (b * b * b) - osc);
}

DelayCdf delay_cdf_table(const TlsParams& p, double tau_max,
                         std::size_t n_points, double mass_tol) {
    DETUNE_REQUIRE(std::isfinite(tau_max) && tau_max > 0.0,
                   "delay_cdf_table: tau_max must be positive");
    DETUNE_REQUIRE(n_points >= 2, "delay_cdf_table: need at least 2 points");
    DETUNE_REQUIRE(mass_tol > 0.0, "delay_cdf_table: mass_tol must be > 0");
    const DelayPdfCoeffs c = DelayPdfCoeffs::make(p);

    DelayCdf table;
    table.params = p;
    table.tau_max = tau_max;
    table.dt = tau_max / double(n_points - 1);
    table.cdf.resize(n_points);

    // The density on a uniform grid is three geometric sequences (two real
    // exponentials and one damped complex phasor), so the whole table fills
    // with multiplications only. All ratios have modulus < 1, hence the
    // recurrences are stable; accumulated roundoff after 1e5 steps is ~1e-11
    // relative, pinned against direct evaluation in the tests.
    const double dt = table.dt;
    const double step_a = std::exp(-(c.half_gamma - c.s_plus) * dt);
    const double step_b = std::exp(-(c.half_gamma + c.s_plus) * dt);
    const std::complex<double> step_z =
        std::exp(std::complex<double>(-c.half_gamma * dt, c.q_minus * dt));

    double ea = 1.0, eb = 1.0;
    std::complex<double> ez(1.0, 0.0);
    double w_prev = 0.0; // w(0) = 0 exactly: 0.5*(1+1) - 1
    double acc = 0.0;
    table.cdf[0] = 0.0;
    for (std::size_t k = 1; k < n_points; ++k) {
        ea *= step_a;
        eb *= step_b;
        ez *= step_z;
        const double w = std::max(
            c.prefac * (0.5 * (ea + eb) - ez.real()), 0.0);
        acc += 0.5 * dt * (w_prev + w);
        table.cdf[k] = acc;
        w_prev = w;
    }

    if (std::abs(table.cdf.back() - 1.0) > mass_tol) {
        std::ostringstream msg;
        msg << "delay_cdf_table: captured mass " << table.cdf.back()
            << " deviates from 1 by more than " << mass_tol
            << " (delta=" << p.delta << ", omega=" << p.omega
            << ", gamma=" << p.gamma << ", tau_max=" << tau_max
            << "); increase tau_max or the point count";
        throw NumericalError(msg.str());
    }
    return table;
}

Trajectory sample_delays_analytic(const DelayCdf& table, std::size_t n,
                                  std::uint64_t rng_seed) {
    DETUNE_REQUIRE(table.cdf.size() >= 2, "sample_delays_analytic: empty table");
    rng::Rng rng(rng_seed);
    Trajectory t;
    t.delays.resize(n);
    t.true_delta = table.params.delta;
    t.generator = "analytic";
    t.seed = rng_seed;

    const double total = table.total_mass();
    const auto& cdf = table.cdf;
    for (std::size_t i = 0; i < n; ++i) {
        // Scaling by the captured mass renormalizes the truncated tail away.
        const double target = rng.uniform01() * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
        std::size_t k = (it == cdf.begin())
                            ? 0
                            : std::size_t(it - cdf.begin()) - 1;
        if (k > cdf.size() - 2) k = cdf.size() - 2;
        const double lo = cdf[k];
        const double hi = cdf[k + 1];
        const double frac = hi > lo ? (target - lo) / (hi - lo) : 0.0;
        t.delays[i] = (double(k) + frac) * table.dt;
    }
    return t;
}

Trajectory sample_delays_analytic(const TlsParams& p, std::size_t n,
                                  std::uint64_t rng_seed) {
    const DelayCdf table = delay_cdf_table(
        p, kDefaultTauMaxOverGamma / p.gamma, kDefaultCdfPoints);
    return sample_delays_analytic(table, n, rng_seed);
}

Trajectory sample_delays_jump(const TlsParams& p, std::size_t n, double dt,
                              std::uint64_t rng_seed,
                              const JumpObserver& observer) {
    p.validate();
    DETUNE_REQUIRE(std::isfinite(dt) && dt > 0.0 && dt <= 0.01 / p.gamma,
                   "sample_delays_jump: require 0 < dt <= 0.01/gamma");

    using cd = std::complex<double>;
    const cd minus_i(0.0, -1.0);
    const cd h_ee(p.delta, -0.5 * p.gamma);
    const double omega = p.omega;
    // d/dt (cg, ce) = -i H_eff (cg, ce), H_eff = [[0, omega], [omega, h_ee]]
    const auto deriv = [&](cd cg, cd ce, cd& dg, cd& de) {
        dg = minus_i * (omega * ce);
        de = minus_i * (omega * cg + h_ee * ce);
    };

    rng::Rng rng(rng_seed);
    Trajectory t;
    t.delays.reserve(n);
    t.true_delta = p.delta;
    t.generator = "jump";
    t.seed = rng_seed;

    const double t_cap = 1e5 / p.gamma;
    cd cg(1.0, 0.0), ce(0.0, 0.0);
    double t_local = 0.0;
    double n2_prev = 1.0;
    double u = 1.0 - rng.uniform01(); // (0, 1]
    while (t.delays.size() < n) {
        cd k1g, k1e, k2g, k2e, k3g, k3e, k4g, k4e;
        deriv(cg, ce, k1g, k1e);
        deriv(cg + 0.5 * dt * k1g, ce + 0.5 * dt * k1e, k2g, k2e);
        deriv(cg + 0.5 * dt * k2g, ce + 0.5 * dt * k2e, k3g, k3e);
        deriv(cg + dt * k3g, ce + dt * k3e, k4g, k4e);
        cg += dt / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
        ce += dt / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
        t_local += dt;

        const double n2 = std::norm(cg) + std::norm(ce);
        if (n2 < 0.9 * n2_prev) {
            std::ostringstream msg;
            msg << "sample_delays_jump: squared norm fell by "
                << (1.0 - n2 / n2_prev) * 100.0
                << "% in one step; the integrator is unresolved (dt=" << dt
                << ")";
            throw NumericalError(msg.str());
        }

        if (n2 < u) {
            // Linear interpolation of the norm crossing within the step.
            const double frac = (n2_prev - u) / (n2_prev - n2);
            const double tau = t_local - dt + frac * dt;
            t.delays.push_back(tau);
            if (observer) observer(tau, u);
            cg = cd(1.0, 0.0);
            ce = cd(0.0, 0.0);
            t_local = 0.0;
            n2_prev = 1.0;
            u = 1.0 - rng.uniform01();
            continue;
        }
        n2_prev = n2;

        if (t_local > t_cap) {
            throw NumericalError(
                "sample_delays_jump: no jump within 1e5/gamma; the drive may "
                "be too weak to populate the excited state");
        }
    }
    return t;
}

Trajectory add_time_jitter(const Trajectory& t, double sigma_tau,
                           std::uint64_t rng_seed) {
    DETUNE_REQUIRE(std::isfinite(sigma_tau) && sigma_tau >= 0.0,
                   "add_time_jitter: sigma_tau must be >= 0");
    Trajectory out = t;
    if (sigma_tau == 0.0) return out;
    rng::Rng rng(rng_seed);
    for (double& tau : out.delays) tau += sigma_tau * rng.normal();
    return out;
}

double add_label_noise(double delta, double sigma_y, std::uint64_t rng_seed) {
    DETUNE_REQUIRE(std::isfinite(sigma_y) && sigma_y >= 0.0,
                   "add_label_noise: sigma_y must be >= 0");
    if (sigma_y == 0.0) return delta;
    rng::Rng rng(rng_seed);
    return delta + sigma_y * rng.normal();
}

} // namespace detune::physics
