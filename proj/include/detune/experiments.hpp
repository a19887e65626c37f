#pragma once

#include "detune/bayes.hpp"
#include "detune/config.hpp"
#include "detune/ensemble.hpp"
#include "detune/metrics.hpp"

#include <string>
#include <vector>

namespace detune::experiments {

// Adapters exposing the three inference routes as metrics::Estimator. The
// wrapped object is captured by reference and must outlive the estimator.
metrics::Estimator bayes_adapter(const bayes::BayesEstimator& b);
metrics::Estimator model_adapter(const nn::MlpModel& m);
metrics::Estimator ensemble_adapter(const ensemble::DeepEnsemble& e);

// Fisher information at each evaluation bin plus the bound derived from the
// report's empirical bias curve (central-difference slope, one-sided at the
// ends), at N = cfg.dataset.n_delays.
bayes::CrbCurve crb_from_report(const metrics::EvalReport& rep,
                                const config::ExperimentConfig& cfg);

// Columns: delta,fisher,bias_slope,bound ("nan" where the bound is undefined).
void write_crb_csv(const bayes::CrbCurve& curve, const std::string& path);

// Copies per-bin bounds onto a report so the metrics CSV carries them.
void attach_crb(metrics::EvalReport& rep, const bayes::CrbCurve& curve);

struct OodRow {
    std::string shift; // "omega" or "sigma_tau"
    double value = 0.0;
    double avg_sigma2 = 0.0; // mixture variance averaged over the fresh set
};

// Average predictive variance under generator shift: for every entry of
// cfg.ood.omega_list trajectories are regenerated at that drive amplitude,
// and for every entry of cfg.ood.sigma_tau_list at the nominal drive with
// Gaussian time jitter. All settings share detuning/delay/jitter streams
// (common random numbers), so rows differ only through the shift itself.
std::vector<OodRow> run_ood_uncertainty(const ensemble::DeepEnsemble& e,
                                        const config::ExperimentConfig& cfg);

// Columns: shift,value,avg_sigma2.
void write_ood_csv(const std::vector<OodRow>& rows, const std::string& path);

struct TimingRow {
    std::string method; // "ensemble" or "bayes-grid"
    std::size_t n_trajectories = 0;
    double seconds = 0.0; // median wall-clock for the whole batch
};

// Median monotonic wall-clock over cfg.timing.repetitions runs (after one
// warm-up) of batched ensemble inference and grid-Bayes posterior means on
// the same freshly sampled trajectories. Estimator setup (grid coefficients,
// loaded weights) is excluded: the comparison is per-trajectory inference.
std::vector<TimingRow> time_inference(const ensemble::DeepEnsemble& e,
                                      const config::ExperimentConfig& cfg);

// Columns: method,n_trajectories,seconds.
void write_timing_csv(const std::vector<TimingRow>& rows,
                      const std::string& path);

// Columns: epoch,train_loss,val_loss.
void write_train_log_csv(const nn::TrainLog& log, const std::string& path);

} // namespace detune::experiments
