#include "detune/bayes.hpp"

#include "detune/errors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

namespace detune::bayes {

using physics::DelayPdfCoeffs;
using physics::TlsParams;
using physics::Trajectory;

namespace {

double log_likelihood_coeffs(const std::vector<double>& delays,
                             const DelayPdfCoeffs& c) {
    double acc = 0.0;
    for (const double tau : delays) {
        const double w = tau >= 0.0 ? c.eval(tau) : 0.0;
        acc += std::log(std::max(w, kLikelihoodFloor));
    }
    return acc;
}

} // namespace

double log_likelihood(const Trajectory& t, const TlsParams& p) {
    return log_likelihood_coeffs(t.delays, DelayPdfCoeffs::make(p));
}

namespace {

PosteriorGrid posterior_from_loglik(const std::vector<double>& grid,
                                    std::vector<double>&& loglik,
                                    double prior_lo, double prior_hi) {
    PosteriorGrid post;
    post.grid = grid;
    post.density = std::move(loglik);
    auto& dens = post.density;

    // Max-subtraction keeps the exponentials in range for any N.
    const double peak = *std::max_element(dens.begin(), dens.end());
    for (double& v : dens) v = std::exp(v - peak);

    const double h = grid[1] - grid[0];
    double z = 0.0;
    for (std::size_t k = 0; k + 1 < dens.size(); ++k)
        z += 0.5 * h * (dens[k] + dens[k + 1]);
    if (!(z > 0.0) || !std::isfinite(z))
        throw NumericalError("grid_posterior: posterior mass underflowed to "
                             "zero across the whole grid");

    for (double& v : dens) v /= z;
    // Evidence under the uniform prior density 1/(hi - lo).
    post.log_evidence = peak + std::log(z) - std::log(prior_hi - prior_lo);
    return post;
}

} // namespace

PosteriorGrid grid_posterior(const Trajectory& t, double prior_lo,
                             double prior_hi, std::size_t n_grid, double omega,
                             double gamma) {
    DETUNE_REQUIRE(n_grid >= 2, "grid_posterior: need at least 2 grid points");
    DETUNE_REQUIRE(prior_hi > prior_lo,
                   "grid_posterior: prior_hi must exceed prior_lo");

    std::vector<double> grid(n_grid);
    std::vector<double> loglik(n_grid);
    const double h = (prior_hi - prior_lo) / double(n_grid - 1);
    for (std::size_t k = 0; k < n_grid; ++k) {
        grid[k] = prior_lo + double(k) * h;
        const TlsParams pk{grid[k], omega, gamma};
        loglik[k] = log_likelihood_coeffs(t.delays, DelayPdfCoeffs::make(pk));
    }
    return posterior_from_loglik(grid, std::move(loglik), prior_lo, prior_hi);
}

double posterior_mean(const PosteriorGrid& post) {
    DETUNE_REQUIRE(post.grid.size() >= 2 &&
                       post.grid.size() == post.density.size(),
                   "posterior_mean: malformed posterior grid");
    const double h = post.grid[1] - post.grid[0];
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < post.grid.size(); ++k) {
        acc += 0.5 * h *
               (post.grid[k] * post.density[k] +
                post.grid[k + 1] * post.density[k + 1]);
    }
    return acc;
}

double fisher_information(const TlsParams& p, double fd_h, std::size_t n_quad,
                          double tau_max) {
    p.validate();
    DETUNE_REQUIRE(fd_h > 0.0, "fisher_information: fd_h must be > 0");
    DETUNE_REQUIRE(n_quad >= 3, "fisher_information: need >= 3 points");
    if (tau_max <= 0.0) tau_max = 100.0 / p.gamma;

    const DelayPdfCoeffs c0 = DelayPdfCoeffs::make(p);
    const DelayPdfCoeffs cp =
        DelayPdfCoeffs::make({p.delta + fd_h, p.omega, p.gamma});
    const DelayPdfCoeffs cm =
        DelayPdfCoeffs::make({p.delta - fd_h, p.omega, p.gamma});

    // Stream the three densities down the grid with geometric recurrences
    // (same trick as the CDF table) and accumulate the trapezoid sum.
    struct Stream {
        double ea, eb, step_a, step_b;
        std::complex<double> ez, step_z;
        const DelayPdfCoeffs* c;
        double value() const {
            const double w = c->prefac * (0.5 * (ea + eb) - ez.real());
            return w > 0.0 ? w : 0.0;
        }
        void advance() {
            ea *= step_a;
            eb *= step_b;
            ez *= step_z;
        }
    };
    const double dt = tau_max / double(n_quad - 1);
    const auto make_stream = [dt](const DelayPdfCoeffs& c) {
        Stream s;
        s.ea = s.eb = 1.0;
        s.ez = {1.0, 0.0};
        s.step_a = std::exp(-(c.half_gamma - c.s_plus) * dt);
        s.step_b = std::exp(-(c.half_gamma + c.s_plus) * dt);
        s.step_z = std::exp(std::complex<double>(-c.half_gamma * dt,
                                                 c.q_minus * dt));
        s.c = &c;
        return s;
    };
    Stream s0 = make_stream(c0), sp = make_stream(cp), sm = make_stream(cm);

    const auto integrand = [&](const Stream& a, const Stream& b,
                               const Stream& mid) {
        const double w = mid.value();
        if (w < 1e-12) return 0.0;
        const double dw = (a.value() - b.value()) / (2.0 * fd_h);
        return dw * dw / w;
    };

    double acc = 0.0;
    double prev = integrand(sp, sm, s0);
    for (std::size_t k = 1; k < n_quad; ++k) {
        s0.advance();
        sp.advance();
        sm.advance();
        const double cur = integrand(sp, sm, s0);
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    return acc;
}

CrbCurve biased_crb(const std::vector<double>& delta_grid,
                    const std::vector<double>& bias,
                    const std::vector<double>& fisher, std::size_t n_delays) {
    DETUNE_REQUIRE(delta_grid.size() >= 3,
                   "biased_crb: need at least 3 grid points");
    DETUNE_REQUIRE(delta_grid.size() == bias.size() &&
                       delta_grid.size() == fisher.size(),
                   "biased_crb: delta/bias/fisher length mismatch");
    DETUNE_REQUIRE(n_delays >= 1, "biased_crb: n_delays must be >= 1");

    const std::size_t n = delta_grid.size();
    CrbCurve curve;
    curve.delta = delta_grid;
    curve.fisher = fisher;
    curve.bias_slope.resize(n);
    curve.bound.resize(n);

    for (std::size_t k = 0; k < n; ++k) {
        // Central differences inside, one-sided at the ends.
        const std::size_t k_lo = k == 0 ? 0 : k - 1;
        const std::size_t k_hi = k + 1 == n ? k : k + 1;
        curve.bias_slope[k] = (bias[k_hi] - bias[k_lo]) /
                              (delta_grid[k_hi] - delta_grid[k_lo]);
        if (fisher[k] > kFisherUndefined) {
            const double num = 1.0 + curve.bias_slope[k];
            curve.bound[k] = num * num / (double(n_delays) * fisher[k]);
        } else {
            curve.bound[k] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return curve;
}

BayesEstimator::BayesEstimator(double omega, double gamma, double prior_lo,
                               double prior_hi, std::size_t n_grid)
    : prior_lo_(prior_lo), prior_hi_(prior_hi) {
    DETUNE_REQUIRE(n_grid >= 2, "BayesEstimator: need at least 2 grid points");
    DETUNE_REQUIRE(prior_hi > prior_lo,
                   "BayesEstimator: prior_hi must exceed prior_lo");
    grid_.resize(n_grid);
    coeffs_.reserve(n_grid);
    const double h = (prior_hi - prior_lo) / double(n_grid - 1);
    for (std::size_t k = 0; k < n_grid; ++k) {
        grid_[k] = prior_lo + double(k) * h;
        coeffs_.push_back(DelayPdfCoeffs::make({grid_[k], omega, gamma}));
    }
}

PosteriorGrid BayesEstimator::posterior(const Trajectory& t) const {
    std::vector<double> loglik(grid_.size());
    for (std::size_t k = 0; k < grid_.size(); ++k)
        loglik[k] = log_likelihood_coeffs(t.delays, coeffs_[k]);
    return posterior_from_loglik(grid_, std::move(loglik), prior_lo_,
                                 prior_hi_);
}

double BayesEstimator::estimate(const Trajectory& t) const {
    return posterior_mean(posterior(t));
}

} // namespace detune::bayes
