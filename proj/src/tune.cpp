#include "detune/tune.hpp"

#include "detune/errors.hpp"
#include "detune/fsio.hpp"
#include "detune/rng.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace detune::tune {

namespace {

const char* loss_name(nn::Loss loss) {
    return loss == nn::Loss::Msle ? "msle" : "rmse";
}

} // namespace

TrialParams sample_trial(std::uint64_t master_seed, std::size_t trial_index) {
    rng::Rng rng(master_seed, rng::Stream::Tuner, trial_index);
    TrialParams p;
    p.n_bins = 200 + rng.below(511);          // [200, 710]
    p.loss = rng.below(2) == 0 ? nn::Loss::Rmse : nn::Loss::Msle;
    p.lr = std::exp(rng.uniform(std::log(1e-5), std::log(5e-3)));
    p.beta1 = rng.uniform(0.8, 0.999);
    p.beta2 = rng.uniform(0.8, 0.999);
    p.epochs = 50 + rng.below(451);           // [50, 500]
    p.batch_size = std::size_t(1) << (6 + rng.below(6)); // {2^6 .. 2^11}
    p.dropout = rng.uniform(0.0, 0.2);
    p.patience = 4 + rng.below(7);            // [4, 10]
    return p;
}

double default_trial_runner(const TrialParams& p,
                            const std::vector<nn::Example>& data,
                            std::uint64_t seed) {
    nn::MlpModel model =
        nn::make_model(p.n_bins, nn::kDefaultHidden, nn::Head::Scalar,
                       p.dropout, 0.0, 100.0, seed);
    nn::TrainConfig cfg;
    cfg.loss = p.loss;
    cfg.lr = p.lr;
    cfg.beta1 = p.beta1;
    cfg.beta2 = p.beta2;
    cfg.epochs = p.epochs;
    cfg.batch_size = p.batch_size;
    cfg.patience = p.patience;
    cfg.seed = seed;
    const nn::TrainLog log = nn::train(model, data, cfg);

    // Common scoring metric regardless of the trial's training loss.
    std::vector<nn::Prediction> preds;
    std::vector<double> labels;
    preds.reserve(log.val_indices.size());
    labels.reserve(log.val_indices.size());
    for (const std::size_t i : log.val_indices) {
        preds.push_back(nn::predict(model, data[i].delays));
        labels.push_back(data[i].label);
    }
    return nn::loss_value(nn::Loss::Rmse, preds, labels);
}

TuneResult random_search_tune(const std::vector<nn::Example>& data,
                              std::size_t n_trials, std::uint64_t master_seed,
                              const TrialRunner& runner) {
    DETUNE_REQUIRE(n_trials >= 1, "random_search_tune: n_trials must be >= 1");
    const TrialRunner& run = runner ? runner : default_trial_runner;

    TuneResult result;
    result.trials.reserve(n_trials);
    for (std::size_t t = 0; t < n_trials; ++t) {
        TrialResult trial;
        trial.index = t;
        trial.params = sample_trial(master_seed, t);
        try {
            trial.val_rmse =
                run(trial.params, data,
                    rng::derive(master_seed, rng::Stream::Tuner, t, 1));
            if (!std::isfinite(trial.val_rmse))
                throw NumericalError("non-finite validation score");
            trial.status = "ok";
        } catch (const std::exception& e) {
            trial.status = "failed";
            trial.error = e.what();
            trial.val_rmse = std::numeric_limits<double>::quiet_NaN();
        }
        result.trials.push_back(std::move(trial));
    }

    bool found = false;
    double best = std::numeric_limits<double>::infinity();
    for (const TrialResult& trial : result.trials) {
        if (trial.status == "ok" && trial.val_rmse < best) {
            best = trial.val_rmse;
            result.best_index = trial.index;
            found = true;
        }
    }
    if (!found) throw NumericalError("random_search_tune: every trial failed");
    return result;
}

void write_trials_csv(const TuneResult& result, const std::string& path) {
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << "trial,status,n_bins,loss,lr,beta1,beta2,epochs,batch_size,"
               "dropout,patience,val_rmse\n"
            << std::setprecision(12);
        for (const TrialResult& t : result.trials) {
            const TrialParams& p = t.params;
            out << t.index << ',' << t.status << ',' << p.n_bins << ','
                << loss_name(p.loss) << ',' << p.lr << ',' << p.beta1 << ','
                << p.beta2 << ',' << p.epochs << ',' << p.batch_size << ','
                << p.dropout << ',' << p.patience << ',';
            if (std::isfinite(t.val_rmse)) out << t.val_rmse;
            out << '\n';
        }
    });
}

void write_best_json(const TuneResult& result,
                     const config::ExperimentConfig& base,
                     const std::string& path) {
    DETUNE_REQUIRE(result.best_index < result.trials.size(),
                   "write_best_json: bad best_index");
    const TrialResult& best = result.trials[result.best_index];
    DETUNE_REQUIRE(best.status == "ok", "write_best_json: best trial not ok");

    config::ExperimentConfig cfg = base;
    const TrialParams& p = best.params;
    cfg.model.n_bins = p.n_bins;
    cfg.model.head = "scalar";
    cfg.model.loss = loss_name(p.loss);
    cfg.model.lr = p.lr;
    cfg.model.beta1 = p.beta1;
    cfg.model.beta2 = p.beta2;
    cfg.model.epochs = p.epochs;
    cfg.model.batch_size = p.batch_size;
    cfg.model.dropout = p.dropout;
    cfg.model.patience = p.patience;
    cfg.validate();

    fsio::write_file_atomic(path, [&](std::ostream& out) {
        out << config::to_json_text(cfg) << '\n';
    });
}

} // namespace detune::tune
