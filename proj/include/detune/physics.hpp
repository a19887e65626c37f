#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace detune::physics {

// Driven dissipative two-level system: Hamiltonian delta*|e><e| +
// omega*(sigma + sigma^dag) with decay rate gamma on sigma. Delay times are
// the waiting times between consecutive photon detections at unit detection
// efficiency; between detections the state evolves under the non-Hermitian
// effective Hamiltonian H - i*(gamma/2)*sigma^dag*sigma.

struct TlsParams {
    double delta = 0.0;  // laser-atom detuning
    double omega = 1.0;  // drive (Rabi) amplitude
    double gamma = 1.0;  // spontaneous-emission rate

    // Throws std::invalid_argument unless all fields are finite and gamma > 0.
    void validate() const;
};

struct Trajectory {
    std::vector<double> delays;
    std::optional<double> true_delta;
    std::string generator;  // "analytic" or "jump"
    std::uint64_t seed = 0;
};

// Waiting-time density w(tau). Evaluated with complex arithmetic as written
// (the inner square roots change sign across parameter space); the imaginary
// residue must stay below 1e-10 or a NumericalError is raised, and tiny
// negative real parts (>= -1e-12, from cancellation near the zeros of w) are
// clamped to zero. Requires tau >= 0.
double delay_pdf(double tau, const TlsParams& p);

// Pole decomposition of the same density: for every valid parameter set the
// two cosh arguments are one purely real and one purely imaginary, giving
//   w(tau) = prefac * [ (e^{-(g-s) tau} + e^{-(g+s) tau})/2
//                       - e^{-g tau} cos(q tau) ]
// with g = gamma/2 and 0 <= s < g, so all three exponentials decay. This is
// the form used by every hot loop (CDF tables, Bayes likelihood, Fisher
// quadrature); tests pin it against delay_pdf to 1e-12.
struct DelayPdfCoeffs {
    double prefac = 0.0;      // 8*gamma*omega^2 / R
    double half_gamma = 0.5;  // g
    double s_plus = 0.0;      // real pole split, < g
    double q_minus = 0.0;     // oscillation frequency

    static DelayPdfCoeffs make(const TlsParams& p);

    double eval(double tau) const;

    // Closed forms of int_0^inf w, int_0^inf tau*w and int_0^inf tau^2*w from
    // the pole decomposition; the first is an exact-normalization test oracle.
    double total_mass() const;
    double mean() const;
    double second_moment() const;
};

// Cumulative trapezoid integral of the delay density on a uniform grid over
// [0, tau_max]. cdf.front() == 0, nondecreasing; cdf.back() is the captured
// mass (1 minus truncated tail).
struct DelayCdf {
    TlsParams params;
    double tau_max = 0.0;
    double dt = 0.0;
    std::vector<double> cdf;

    double total_mass() const { return cdf.empty() ? 0.0 : cdf.back(); }
};

// Builds the table; raises NumericalError when the captured mass deviates
// from 1 by more than mass_tol (slow-decay parameter corners truncate real
// mass at tau_max — the message reports the achieved total).
DelayCdf delay_cdf_table(const TlsParams& p, double tau_max,
                         std::size_t n_points, double mass_tol = 1e-4);

inline constexpr double kDefaultTauMaxOverGamma = 100.0;
inline constexpr std::size_t kDefaultCdfPoints = 100000;

// Inverse-CDF sampling of n delays. The table overload reuses a prebuilt
// table (the dataset generator builds one per example parameter set); the
// plain overload builds the default table internally.
Trajectory sample_delays_analytic(const TlsParams& p, std::size_t n,
                                  std::uint64_t rng_seed);
Trajectory sample_delays_analytic(const DelayCdf& table, std::size_t n,
                                  std::uint64_t rng_seed);

// Diagnostic hook for the jump sampler: called once per recorded delay with
// the delay and the norm-threshold draw it crossed.
using JumpObserver = std::function<void(double tau, double u)>;

// Quantum-jump (Monte Carlo wave function) sampling: integrate the
// non-Hermitian Schrodinger equation with fixed-step RK4 from |g>, record a
// jump when the squared norm crosses u ~ U(0,1] (crossing time linearly
// interpolated within the step), reset and repeat. Requires
// 0 < dt <= 0.01/gamma; a >10% single-step norm drop or a wait exceeding
// 1e5/gamma raises NumericalError.
Trajectory sample_delays_jump(const TlsParams& p, std::size_t n, double dt,
                              std::uint64_t rng_seed,
                              const JumpObserver& observer = {});

inline constexpr double kDefaultJumpDtOverGamma = 0.005;

// Adds i.i.d. N(0, sigma_tau^2) to every delay; values are deliberately not
// clamped, so negative delays can occur. sigma_tau >= 0.
Trajectory add_time_jitter(const Trajectory& t, double sigma_tau,
                           std::uint64_t rng_seed);

// Returns delta + N(0, sigma_y^2), not clipped to the prior range.
double add_label_noise(double delta, double sigma_y, std::uint64_t rng_seed);

} // namespace detune::physics
