#pragma once

#include "detune/physics.hpp"

#include <cstddef>
#include <vector>

namespace detune::bayes {

// The likelihood treats delays as i.i.d. draws of the waiting-time density.
// Each factor is floored at 1e-300 so exact zeros of w (tau = 0, the
// oscillation nulls) and out-of-support values (negative delays after jitter)
// contribute a huge but finite penalty instead of -inf.
inline constexpr double kLikelihoodFloor = 1e-300;

double log_likelihood(const physics::Trajectory& t, const physics::TlsParams& p);

// Posterior over detuning on an equally spaced grid (uniform prior). density
// is trapezoid-normalized to integrate to 1; log_evidence is the log of the
// marginal likelihood under the uniform prior.
struct PosteriorGrid {
    std::vector<double> grid;
    std::vector<double> density;
    double log_evidence = 0.0;
};

PosteriorGrid grid_posterior(const physics::Trajectory& t, double prior_lo,
                             double prior_hi, std::size_t n_grid, double omega,
                             double gamma);

double posterior_mean(const PosteriorGrid& post);

inline constexpr std::size_t kDefaultPosteriorGrid = 500;
inline constexpr double kDefaultPriorHiOverGamma = 2.1;

// Per-delay Fisher information F(delta) = int (d_delta w)^2 / w dtau,
// quadrature over [0, tau_max] with a central finite difference in delta
// (step fd_h); integrand points with w < 1e-12 are excluded. Evenness in
// delta makes F(0) vanish identically.
double fisher_information(const physics::TlsParams& p, double fd_h = 1e-4,
                          std::size_t n_quad = 200001,
                          double tau_max = -1.0 /* default 100/gamma */);

// Cramer-Rao bound for biased estimators: (1 + db/ddelta)^2 / (N F). Points
// where F <= 1e-10 are flagged undefined (bound = NaN) rather than infinite.
struct CrbCurve {
    std::vector<double> delta;
    std::vector<double> fisher;
    std::vector<double> bias_slope;
    std::vector<double> bound; // NaN where undefined
};

CrbCurve biased_crb(const std::vector<double>& delta_grid,
                    const std::vector<double>& bias,
                    const std::vector<double>& fisher, std::size_t n_delays);

inline constexpr double kFisherUndefined = 1e-10;

// Batch-evaluation form of the grid posterior: the per-grid-point pole
// coefficients depend only on (omega, gamma, grid), so they are computed once
// and shared across trajectories.
class BayesEstimator {
public:
    BayesEstimator(double omega, double gamma, double prior_lo, double prior_hi,
                   std::size_t n_grid = kDefaultPosteriorGrid);

    // Posterior-mean point estimate of the detuning.
    double estimate(const physics::Trajectory& t) const;

    PosteriorGrid posterior(const physics::Trajectory& t) const;

    const std::vector<double>& grid() const { return grid_; }

private:
    std::vector<double> grid_;
    std::vector<physics::DelayPdfCoeffs> coeffs_;
    double prior_lo_, prior_hi_;
};

} // namespace detune::bayes
