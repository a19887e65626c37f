#include "detune/experiments.hpp"

#include "detune/errors.hpp"
#include "detune/fsio.hpp"
#include "detune/physics.hpp"
#include "detune/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace detune::experiments {

namespace {

// derive() j-argument for the OOD and timing trajectory streams; 0 and 1 are
// the train/test splits.
constexpr std::uint64_t kOodTag = 2;
constexpr std::uint64_t kTimingTag = 3;

physics::Trajectory ood_trajectory(const config::ExperimentConfig& cfg,
                                   double omega, double sigma_tau,
                                   std::uint64_t index, std::uint64_t tag) {
    rng::Rng delta_rng(cfg.seed, rng::Stream::DeltaDraw, index, tag);
    const double delta =
        delta_rng.uniform(cfg.physics.delta_min, cfg.physics.delta_max);
    const physics::TlsParams p{delta, omega, cfg.physics.gamma};
    const physics::DelayCdf table = physics::delay_cdf_table(
        p, physics::kDefaultTauMaxOverGamma / cfg.physics.gamma,
        physics::kDefaultCdfPoints);
    physics::Trajectory t = physics::sample_delays_analytic(
        table, cfg.dataset.n_delays,
        rng::derive(cfg.seed, rng::Stream::TrajDelays, index, tag));
    if (sigma_tau > 0.0)
        t = physics::add_time_jitter(
            t, sigma_tau,
            rng::derive(cfg.seed, rng::Stream::TimeJitter, index, tag));
    return t;
}

} // namespace

metrics::Estimator bayes_adapter(const bayes::BayesEstimator& b) {
    return [&b](const std::vector<double>& delays) {
        physics::Trajectory t;
        t.delays = delays;
        return b.estimate(t);
    };
}

metrics::Estimator model_adapter(const nn::MlpModel& m) {
    return [&m](const std::vector<double>& delays) {
        return nn::predict(m, delays).mu;
    };
}

metrics::Estimator ensemble_adapter(const ensemble::DeepEnsemble& e) {
    return [&e](const std::vector<double>& delays) {
        return ensemble::predict(e, delays).mu;
    };
}

bayes::CrbCurve crb_from_report(const metrics::EvalReport& rep,
                                const config::ExperimentConfig& cfg) {
    DETUNE_REQUIRE(rep.bins.size() >= 2, "crb_from_report: need >= 2 bins");
    std::vector<double> grid, bias, fisher;
    grid.reserve(rep.bins.size());
    for (const metrics::BinMetrics& bin : rep.bins) {
        grid.push_back(bin.delta);
        bias.push_back(bin.bias);
    }
    fisher.resize(grid.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const physics::TlsParams p{grid[i], cfg.physics.omega,
                                   cfg.physics.gamma};
        fisher[i] = bayes::fisher_information(p);
    }
    return bayes::biased_crb(grid, bias, fisher, cfg.dataset.n_delays);
}

void write_crb_csv(const bayes::CrbCurve& curve, const std::string& path) {
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << "delta,fisher,bias_slope,bound\n" << std::setprecision(12);
        for (std::size_t i = 0; i < curve.delta.size(); ++i) {
            out << curve.delta[i] << ',' << curve.fisher[i] << ','
                << curve.bias_slope[i] << ',';
            if (std::isnan(curve.bound[i]))
                out << "nan";
            else
                out << curve.bound[i];
            out << '\n';
        }
    });
}

void attach_crb(metrics::EvalReport& rep, const bayes::CrbCurve& curve) {
    DETUNE_REQUIRE(rep.bins.size() == curve.delta.size(),
                   "attach_crb: bin/grid size mismatch");
    for (std::size_t i = 0; i < rep.bins.size(); ++i) {
        DETUNE_REQUIRE(rep.bins[i].delta == curve.delta[i],
                       "attach_crb: grid mismatch");
        if (!std::isnan(curve.bound[i])) rep.bins[i].crb = curve.bound[i];
    }
}

std::vector<OodRow> run_ood_uncertainty(const ensemble::DeepEnsemble& e,
                                        const config::ExperimentConfig& cfg) {
    DETUNE_REQUIRE(!e.members.empty(), "run_ood_uncertainty: empty ensemble");
    const std::size_t n = cfg.ood.n_trajectories;

    const auto average_sigma2 = [&](double omega, double sigma_tau) {
        double acc = 0.0;
#pragma omp parallel for schedule(dynamic) reduction(+ : acc)
        for (std::size_t i = 0; i < n; ++i) {
            const physics::Trajectory t =
                ood_trajectory(cfg, omega, sigma_tau, i, kOodTag);
            acc += ensemble::predict(e, t.delays).sigma2;
        }
        return acc / double(n);
    };

    std::vector<OodRow> rows;
    for (const double omega : cfg.ood.omega_list)
        rows.push_back({"omega", omega, average_sigma2(omega, 0.0)});
    for (const double st : cfg.ood.sigma_tau_list)
        rows.push_back(
            {"sigma_tau", st, average_sigma2(cfg.physics.omega, st)});
    return rows;
}

void write_ood_csv(const std::vector<OodRow>& rows, const std::string& path) {
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << "shift,value,avg_sigma2\n" << std::setprecision(12);
        for (const OodRow& r : rows)
            out << r.shift << ',' << r.value << ',' << r.avg_sigma2 << '\n';
    });
}

std::vector<TimingRow> time_inference(const ensemble::DeepEnsemble& e,
                                      const config::ExperimentConfig& cfg) {
    DETUNE_REQUIRE(!e.members.empty(), "time_inference: empty ensemble");
    DETUNE_REQUIRE(!cfg.timing.counts.empty(),
                   "time_inference: no trajectory counts");
    const std::size_t n_max =
        *std::max_element(cfg.timing.counts.begin(), cfg.timing.counts.end());

    std::vector<std::vector<double>> delays(n_max);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n_max; ++i)
        delays[i] = ood_trajectory(cfg, cfg.physics.omega, 0.0, i, kTimingTag)
                        .delays;

    bayes::BayesEstimator grid_bayes(cfg.physics.omega, cfg.physics.gamma,
                                     cfg.physics.delta_min,
                                     cfg.physics.delta_max, cfg.bayes.n_grid);

    // The accumulated estimates are consumed so the timed loops cannot be
    // optimized away.
    volatile double sink = 0.0;
    const auto timed_median = [&](const auto& run_batch, std::size_t n) {
        run_batch(n); // warm-up
        std::vector<double> secs(cfg.timing.repetitions);
        for (double& s : secs) {
            const auto t0 = std::chrono::steady_clock::now();
            sink = sink + run_batch(n);
            const auto t1 = std::chrono::steady_clock::now();
            s = std::chrono::duration<double>(t1 - t0).count();
        }
        std::sort(secs.begin(), secs.end());
        return secs[secs.size() / 2];
    };

    const auto ensemble_batch = [&](std::size_t n) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            acc += ensemble::predict(e, delays[i]).mu;
        return acc;
    };
    const auto bayes_batch = [&](std::size_t n) {
        double acc = 0.0;
        physics::Trajectory t;
        for (std::size_t i = 0; i < n; ++i) {
            t.delays = delays[i];
            acc += grid_bayes.estimate(t);
        }
        return acc;
    };

    std::vector<TimingRow> rows;
    for (const std::size_t n : cfg.timing.counts) {
        DETUNE_REQUIRE(n >= 1 && n <= n_max, "time_inference: bad count");
        rows.push_back({"ensemble", n, timed_median(ensemble_batch, n)});
        rows.push_back({"bayes-grid", n, timed_median(bayes_batch, n)});
    }
    return rows;
}

void write_timing_csv(const std::vector<TimingRow>& rows,
                      const std::string& path) {
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << "method,n_trajectories,seconds\n" << std::setprecision(9);
        for (const TimingRow& r : rows)
            out << r.method << ',' << r.n_trajectories << ',' << r.seconds
                << '\n';
    });
}

void write_train_log_csv(const nn::TrainLog& log, const std::string& path) {
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << "epoch,train_loss,val_loss\n" << std::setprecision(12);
        for (const nn::EpochLog& row : log.epochs)
            out << row.epoch << ',' << row.train_loss << ',' << row.val_loss
                << '\n';
    });
}

} // namespace detune::experiments
