#pragma once

#include "detune/config.hpp"
#include "detune/nn.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace detune::tune {

// One point of the hyperparameter search space:
//   bins          int   [200, 710]
//   loss          {rmse, msle}
//   lr            log-uniform [1e-5, 5e-3]
//   beta1, beta2  uniform [0.8, 0.999]
//   epochs        int   [50, 500]
//   batch_size    {64, 128, 256, 512, 1024, 2048}
//   dropout       uniform [0, 0.2]
//   patience      int   [4, 10]
struct TrialParams {
    std::size_t n_bins = 0;
    nn::Loss loss = nn::Loss::Rmse;
    double lr = 0.0;
    double beta1 = 0.0, beta2 = 0.0;
    std::size_t epochs = 0, batch_size = 0, patience = 0;
    double dropout = 0.0;
};

// Uniform draw from the space above; the draw order is fixed and part of the
// reproducibility contract.
TrialParams sample_trial(std::uint64_t master_seed, std::size_t trial_index);

struct TrialResult {
    std::size_t index = 0;
    TrialParams params;
    std::string status; // "ok" or "failed"
    double val_rmse = std::numeric_limits<double>::quiet_NaN();
    std::string error; // failure message when status == "failed"
};

struct TuneResult {
    std::vector<TrialResult> trials;
    std::size_t best_index = 0; // into trials; lowest val_rmse among "ok"
};

// Trains one candidate on data and returns its score. Trials with any loss
// are scored by the common RMSE metric on the trial's own validation split,
// so msle and rmse candidates are comparable.
using TrialRunner = std::function<double(
    const TrialParams& p, const std::vector<nn::Example>& data,
    std::uint64_t seed)>;

double default_trial_runner(const TrialParams& p,
                            const std::vector<nn::Example>& data,
                            std::uint64_t seed);

// Random search: n_trials independent draws, each trained and scored; a
// throwing trial is recorded as failed and the search continues. Raises
// NumericalError when every trial fails. Pass a custom runner to stub out the
// training (tests inject failures and fixed scores this way).
TuneResult random_search_tune(const std::vector<nn::Example>& data,
                              std::size_t n_trials, std::uint64_t master_seed,
                              const TrialRunner& runner = {});

// Columns: trial,status,n_bins,loss,lr,beta1,beta2,epochs,batch_size,dropout,
// patience,val_rmse.
void write_trials_csv(const TuneResult& result, const std::string& path);

// Full experiment config with the winning hyperparameters substituted into
// the model section; ready to pass back through --config.
void write_best_json(const TuneResult& result,
                     const config::ExperimentConfig& base,
                     const std::string& path);

} // namespace detune::tune
