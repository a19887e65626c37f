#pragma once

#include "detune/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace detune::config {

// Experiment configuration: JSON on disk, defaults tuned for the desk-scale
// study. Every field may be omitted in the file; unknown keys are rejected so
// typos fail loudly.

struct PhysicsConfig {
    double omega = 1.0;
    double gamma = 1.0;
    double delta_min = 0.0;
    double delta_max = 2.1;
};

struct DatasetConfig {
    std::size_t n_train = 40000;
    std::size_t n_delays = 48;
    std::size_t n_test_deltas = 40;
    std::size_t n_test_per_delta = 1000;
    std::string generator = "analytic"; // or "jump"
    double jump_dt = 0.005;
    double sigma_tau = 0.0; // delay jitter, applied to train and test draws
    double sigma_y = 0.0;   // label noise, applied to training labels only
};

// Defaults are the best runtime-feasible trial of a 20-trial random search
// over the documented search space (6000-example subset, 80/20 split).
struct ModelConfig {
    std::size_t n_bins = 647;
    std::vector<std::size_t> hidden = {100, 50, 30};
    std::string head = "scalar"; // "scalar" or "gaussian"
    std::string loss = "rmse";   // "rmse", "msle" or "nll"
    double dropout = 0.0105305970628;
    double lr = 2.58968830812e-4;
    double beta1 = 0.884168408892;
    double beta2 = 0.979364667291;
    std::size_t epochs = 68;
    std::size_t batch_size = 2048;
    std::size_t patience = 6;
};

struct EnsembleConfig {
    std::size_t m = 10;
    bool adversarial = false;
    double epsilon = 1.0; // 1% of the delay range [0, 100]
    bool printed_variance_form = false;
};

struct BayesConfig {
    std::size_t n_grid = 500;
    std::size_t cdf_points = 100000;
    double tau_max = 100.0;
};

struct TunerConfig {
    std::size_t n_trials = 20;
};

struct OodConfig {
    std::vector<double> omega_list = {1.0, 1.25, 1.5, 1.75, 2.0};
    std::vector<double> sigma_tau_list = {0.0, 0.25, 0.5, 0.76, 1.0};
    std::size_t n_trajectories = 2000;
};

struct TimingConfig {
    std::vector<std::size_t> counts = {1, 10, 100, 1000};
    std::size_t repetitions = 10;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    PhysicsConfig physics;
    DatasetConfig dataset;
    ModelConfig model;
    EnsembleConfig ensemble;
    BayesConfig bayes;
    TunerConfig tuner;
    OodConfig ood;
    TimingConfig timing;

    nn::Loss loss_kind() const;
    nn::Head head_kind() const;

    // Throws ConfigError when any field is out of range or inconsistent
    // (e.g. a Gaussian head with the RMSE loss).
    void validate() const;
};

ExperimentConfig default_config();

// Parses JSON with defaults for missing fields. Unknown keys or malformed
// values raise ConfigError; unreadable files raise IoError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);

std::string to_json_text(const ExperimentConfig& cfg);

// FNV-1a over the canonical serialization; recorded in dataset manifests so
// artifacts can be traced to the exact configuration.
std::uint64_t config_hash(const ExperimentConfig& cfg);

} // namespace detune::config
