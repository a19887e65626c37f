#pragma once

#include "detune/dataset.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace detune::metrics {

// A point estimator of the detuning from one trajectory's delays. Adapters
// below wrap the three inference routes behind this one signature; estimators
// must be safe to call concurrently (evaluation parallelizes across
// trajectories).
using Estimator = std::function<double(const std::vector<double>& delays)>;

struct BinMetrics {
    double delta = 0.0;    // true detuning of the group
    double rmse = 0.0;     // sqrt(mean (estimate - delta)^2)
    double bias = 0.0;     // mean(estimate) - delta
    double variance = 0.0; // population variance of the estimates
    std::optional<double> crb; // variance lower bound, when computed
    std::vector<double> estimates; // retained for bootstrap error bars
};

struct EvalReport {
    std::string estimator;
    std::vector<BinMetrics> bins; // ascending in delta
    // Plain averages of the per-bin columns over the evaluation grid.
    double overall_rmse = 0.0;
    double overall_bias = 0.0;
    double overall_variance = 0.0;
};

// Groups the test set by true detuning and reduces each group. Raises
// std::invalid_argument on an empty set. rmse^2 = bias^2 + variance holds to
// rounding because the variance is the centered second moment of the same
// estimates.
EvalReport evaluate(const std::string& name, const Estimator& f,
                    const dataset::LabeledSet& test);

// Bootstrap standard error of a group's variance statistic (resample the
// estimates with replacement, recompute the population variance, take the
// spread). Used for the 2-sigma Cramer-Rao comparisons.
double bootstrap_variance_se(const std::vector<double>& estimates,
                             std::size_t n_boot, std::uint64_t seed);

// Header: estimator,delta,rmse,bias,variance,crb. The crb cell is left empty
// on rows without a bound. Overall rows are deliberately not written; they
// live in the report struct.
void write_metrics_csv(const std::vector<EvalReport>& reports,
                       const std::string& path);

// Inverse of write_metrics_csv: rows regroup by estimator tag in file order.
// Raw estimates are not recoverable from the file and stay empty; the overall
// columns are re-averaged from the bins.
std::vector<EvalReport> read_metrics_csv(const std::string& path);

} // namespace detune::metrics
