#pragma once

#include "detune/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace detune::ensemble {

// Deep ensemble of Gaussian-head networks. Members share the architecture
// and training recipe and differ only in their derived seeds (init, shuffles,
// dropout); the predictive distribution is the uniform mixture of the member
// Gaussians.

struct DeepEnsemble {
    std::vector<nn::MlpModel> members;
    std::vector<std::uint64_t> member_seeds;
    bool adversarial = false;
    double epsilon = 0.0;
};

struct EnsembleTrainConfig {
    std::size_t n_members = 10;
    std::size_t n_bins = 256;
    std::vector<std::size_t> hidden = nn::kDefaultHidden;
    double dropout = 0.0;
    double tau_min = 0.0;
    double tau_max = 100.0;
    nn::TrainConfig train; // loss is forced to GaussianNll
    bool adversarial = false;
    double epsilon = 1.0;
};

// Trains n_members Gaussian-NLL networks; member m runs on the seed stream
// derive(master_seed, Member, m), which fixes its init, split, shuffles and
// dropout. Deterministic for a given master seed and thread count agnostic.
DeepEnsemble train_ensemble(const std::vector<nn::Example>& data,
                            const EnsembleTrainConfig& cfg,
                            std::uint64_t master_seed,
                            std::vector<nn::TrainLog>* logs = nullptr);

struct EnsemblePrediction {
    double mu = 0.0;
    double sigma2 = 0.0;
    std::vector<nn::Prediction> members;
};

// Uniform-mixture moments: mu = mean(mu_m) and
// sigma^2 = mean(sigma_m^2 + mu_m^2) - mu^2. With printed_variance_form the
// last term is -mu instead of -mu^2, a dimensionally inconsistent variant
// kept only so the two can be compared.
EnsemblePrediction predict(const DeepEnsemble& e,
                           const std::vector<double>& delays,
                           bool printed_variance_form = false);

// FGSM perturbation x' = x + eps * sign(grad); sign(0) = 0.
std::vector<double> fgsm_example(const std::vector<double>& delays,
                                 const std::vector<double>& grad, double eps);

// Quantizes every member to int8.
DeepEnsemble quantize(const DeepEnsemble& e);

// Directory layout: <dir>/ensemble.json manifest plus one model file per
// member (member_00.model.json, ...).
void save_ensemble(const DeepEnsemble& e, const std::string& dir);
DeepEnsemble load_ensemble(const std::string& dir);

} // namespace detune::ensemble
