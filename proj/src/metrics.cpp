#include "detune/metrics.hpp"

#include "detune/errors.hpp"
#include "detune/fsio.hpp"
#include "detune/rng.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace detune::metrics {

namespace {

// Population variance via the centered two-pass formula; matches the
// rmse^2 = bias^2 + variance identity to rounding.
double population_variance(const std::vector<double>& xs, double mean) {
    double acc = 0.0;
    for (const double x : xs) acc += (x - mean) * (x - mean);
    return acc / double(xs.size());
}

} // namespace

EvalReport evaluate(const std::string& name, const Estimator& f,
                    const dataset::LabeledSet& test) {
    DETUNE_REQUIRE(f, "evaluate: estimator is empty");
    DETUNE_REQUIRE(!test.examples.empty(), "evaluate: empty test set");
    DETUNE_REQUIRE(test.examples.size() == test.meta.size(),
                   "evaluate: examples/meta size mismatch");

    const std::size_t n = test.examples.size();
    std::vector<double> est(n);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < n; ++i) est[i] = f(test.examples[i].delays);

    // Group by the exact generator detuning; the grid repeats doubles
    // bit-identically, so exact keys are safe.
    std::map<double, std::vector<double>> groups;
    for (std::size_t i = 0; i < n; ++i)
        groups[test.meta[i].delta_true].push_back(est[i]);

    EvalReport rep;
    rep.estimator = name;
    rep.bins.reserve(groups.size());
    for (auto& [delta, xs] : groups) {
        BinMetrics bin;
        bin.delta = delta;
        double sum = 0.0, mse = 0.0;
        for (const double x : xs) {
            sum += x;
            mse += (x - delta) * (x - delta);
        }
        const double mean = sum / double(xs.size());
        mse /= double(xs.size());
        bin.bias = mean - delta;
        bin.variance = population_variance(xs, mean);
        bin.rmse = std::sqrt(mse);
        bin.estimates = std::move(xs);
        rep.bins.push_back(std::move(bin));
    }

    for (const BinMetrics& bin : rep.bins) {
        rep.overall_rmse += bin.rmse;
        rep.overall_bias += bin.bias;
        rep.overall_variance += bin.variance;
    }
    const double nb = double(rep.bins.size());
    rep.overall_rmse /= nb;
    rep.overall_bias /= nb;
    rep.overall_variance /= nb;
    return rep;
}

double bootstrap_variance_se(const std::vector<double>& estimates,
                             std::size_t n_boot, std::uint64_t seed) {
    DETUNE_REQUIRE(estimates.size() >= 2,
                   "bootstrap_variance_se: need at least 2 estimates");
    DETUNE_REQUIRE(n_boot >= 2, "bootstrap_variance_se: need at least 2 replicates");
    rng::Rng rng(seed);
    const std::size_t n = estimates.size();

    std::vector<double> sample(n), vars(n_boot);
    for (std::size_t b = 0; b < n_boot; ++b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sample[i] = estimates[rng.below(n)];
            sum += sample[i];
        }
        vars[b] = population_variance(sample, sum / double(n));
    }
    double mean = 0.0;
    for (const double v : vars) mean += v;
    mean /= double(n_boot);
    double spread = 0.0;
    for (const double v : vars) spread += (v - mean) * (v - mean);
    return std::sqrt(spread / double(n_boot));
}

std::vector<EvalReport> read_metrics_csv(const std::string& path) {
    std::istringstream in(fsio::read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "estimator,delta,rmse,bias,variance,crb")
        throw IoError(path + ": not a metrics CSV (bad header)");

    std::vector<EvalReport> reports;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back(""); // empty trailing crb
        if (cells.size() != 6)
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": expected 6 cells");
        try {
            BinMetrics bin;
            bin.delta = std::stod(cells[1]);
            bin.rmse = std::stod(cells[2]);
            bin.bias = std::stod(cells[3]);
            bin.variance = std::stod(cells[4]);
            if (!cells[5].empty()) bin.crb = std::stod(cells[5]);
            if (reports.empty() || reports.back().estimator != cells[0]) {
                reports.push_back({});
                reports.back().estimator = cells[0];
            }
            reports.back().bins.push_back(std::move(bin));
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": malformed numeric cell");
        }
    }
    for (EvalReport& rep : reports) {
        for (const BinMetrics& bin : rep.bins) {
            rep.overall_rmse += bin.rmse;
            rep.overall_bias += bin.bias;
            rep.overall_variance += bin.variance;
        }
        const double nb = double(rep.bins.size());
        rep.overall_rmse /= nb;
        rep.overall_bias /= nb;
        rep.overall_variance /= nb;
    }
    return reports;
}

void write_metrics_csv(const std::vector<EvalReport>& reports,
                       const std::string& path) {
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << "estimator,delta,rmse,bias,variance,crb\n";
        out << std::setprecision(12);
        for (const EvalReport& rep : reports) {
            for (const BinMetrics& bin : rep.bins) {
                out << rep.estimator << ',' << bin.delta << ',' << bin.rmse
                    << ',' << bin.bias << ',' << bin.variance << ',';
                if (bin.crb) out << *bin.crb;
                out << '\n';
            }
        }
    });
}

} // namespace detune::metrics
