#include "detune/nn.hpp"

#include "detune/errors.hpp"
#include "detune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace detune::nn {

namespace {

int sign_of(double g) { return (g > 0.0) - (g < 0.0); }

// Full-set loss in inference mode (no dropout); the batch coupling of RMSE
// makes this a single loss_value call over every prediction.
double validation_loss(const MlpModel& m, const std::vector<Example>& data,
                       const std::vector<std::size_t>& idx, Loss loss) {
    std::vector<Prediction> preds(idx.size());
    std::vector<double> labels(idx.size());
#pragma omp parallel for schedule(static)
    for (std::size_t k = 0; k < idx.size(); ++k) {
        preds[k] = predict(m, data[idx[k]].delays);
        labels[k] = data[idx[k]].label;
    }
    return loss_value(loss, preds, labels);
}

template <typename T>
void fisher_yates(std::vector<T>& v, rng::Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.below(i)]);
}

struct Snapshot {
    double log_bandwidth = 0.0;
    std::vector<Dense> layers;
};

} // namespace

TrainLog train(MlpModel& m, const std::vector<Example>& data,
               const TrainConfig& cfg) {
    DETUNE_REQUIRE(data.size() >= 10, "train: need at least 10 examples");
    DETUNE_REQUIRE(cfg.batch_size >= 1, "train: batch_size must be >= 1");
    DETUNE_REQUIRE(cfg.epochs >= 1, "train: epochs must be >= 1");
    DETUNE_REQUIRE(cfg.patience >= 1, "train: patience must be >= 1");
    DETUNE_REQUIRE(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0,
                   "train: val_fraction must lie in (0, 1)");
    DETUNE_REQUIRE(cfg.epsilon >= 0.0, "train: epsilon must be >= 0");

    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    {
        rng::Rng rng(cfg.seed, rng::Stream::Shuffle, 0);
        fisher_yates(order, rng);
    }
    const auto n_val = std::max<std::size_t>(
        1, std::size_t(std::floor(double(n) * cfg.val_fraction)));
    const std::size_t n_train = n - n_val;
    DETUNE_REQUIRE(n_train >= 1, "train: no training examples after split");
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
    const std::vector<std::size_t> val_idx(order.begin() + n_train, order.end());

    AdamState adam = make_adam(m, cfg.lr, cfg.beta1, cfg.beta2);

    TrainLog log;
    log.n_train = n_train;
    log.n_val = n_val;
    log.val_indices = val_idx;

    double best_val = std::numeric_limits<double>::infinity();
    Snapshot best;
    std::size_t since_best = 0;

    std::vector<Example> batch, adv_batch;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        {
            rng::Rng rng(cfg.seed, rng::Stream::Shuffle, epoch);
            fisher_yates(train_idx, rng);
        }

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n_train;
             start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(n_train, start + cfg.batch_size);
            batch.clear();
            batch.reserve(stop - start);
            for (std::size_t k = start; k < stop; ++k)
                batch.push_back(data[train_idx[k]]);

            const std::uint64_t dropout_base =
                rng::derive(cfg.seed, rng::Stream::Dropout, epoch, batch_index);
            GradResult res = grad(m, batch, cfg.loss, /*training=*/true,
                                  dropout_base, cfg.adversarial);
            double batch_loss = res.loss;

            if (cfg.adversarial) {
                adv_batch = batch;
                for (std::size_t i = 0; i < adv_batch.size(); ++i) {
                    auto& delays = adv_batch[i].delays;
                    const auto& gx = res.input_grads[i];
                    for (std::size_t k = 0; k < delays.size(); ++k)
                        delays[k] += cfg.epsilon * sign_of(gx[k]);
                }
                // Same dropout streams as the clean pass: the FGSM objective
                // evaluates both terms under one stochastic realization.
                const GradResult adv = grad(m, adv_batch, cfg.loss,
                                            /*training=*/true, dropout_base,
                                            /*want_input_grads=*/false);
                res.grads.add(adv.grads);
                batch_loss += adv.loss;
            }

            adam_step(m, res.grads, adam);
            loss_sum += batch_loss * double(stop - start);
        }

        EpochLog row;
        row.epoch = epoch;
        row.train_loss = loss_sum / double(n_train);
        row.val_loss = validation_loss(m, data, val_idx, cfg.loss);
        log.epochs.push_back(row);

        if (row.val_loss < best_val) {
            best_val = row.val_loss;
            log.best_epoch = epoch;
            best.log_bandwidth = m.hist.log_bandwidth;
            best.layers = m.layers;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            log.stopped_early = true;
            break;
        }
    }

    if (!best.layers.empty()) {
        m.hist.log_bandwidth = best.log_bandwidth;
        m.layers = std::move(best.layers);
    }
    return log;
}

} // namespace detune::nn
