#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace detune::nn {

// Network: a smoothed-histogram input layer with learnable log-bandwidth,
// a ReLU stack (defaults 100-50-30) with optional dropout after every hidden
// layer, and either a scalar regression head or a Gaussian head emitting
// (mu, sigma^2 = exp(raw) + 1e-6). All math is double internally; persisted
// float models round weights through binary32 to honor the precision tag.

enum class Head { Scalar, Gaussian };
enum class Loss { GaussianNll, Rmse, Msle };
enum class Precision { Float32, Int8 };

// Feature j sums exp(-(tau_i - c_j)^2 / (2 phi^2)) over all delays, with
// phi^2 = exp(log_bandwidth) and bin centers c_j equally spaced on
// [tau_min, tau_max] inclusive. Delays are accumulated in sorted order so the
// features are bitwise permutation-invariant.
struct HistogramLayer {
    std::size_t n_bins = 0;
    double tau_min = 0.0;
    double tau_max = 100.0;
    double log_bandwidth = 0.0;

    double bin_width() const { return (tau_max - tau_min) / double(n_bins - 1); }
    double center(std::size_t j) const { return tau_min + double(j) * bin_width(); }
};

struct Dense {
    std::size_t rows = 0, cols = 0;
    std::vector<double> w; // row-major [rows x cols]
    std::vector<double> b; // [rows]
};

struct QuantizedDense {
    std::size_t rows = 0, cols = 0;
    std::vector<std::int8_t> wq;
    double w_scale = 1.0;
    int w_zero_point = 0; // always 0: symmetric scheme
    std::vector<std::int8_t> bq;
    double b_scale = 1.0;
    int b_zero_point = 0;
    std::vector<double> b_deq; // dequantized bias, cached for inference
};

struct MlpModel {
    HistogramLayer hist;
    Head head = Head::Scalar;
    double dropout = 0.0;
    Precision precision = Precision::Float32;
    std::vector<Dense> layers;            // hidden stack + head (float path)
    std::vector<QuantizedDense> qlayers;  // int8 path

    std::size_t head_dim() const { return head == Head::Gaussian ? 2 : 1; }
};

inline const std::vector<std::size_t> kDefaultHidden = {100, 50, 30};

// He-style init for the ReLU stack, 1/sqrt(fan_in) for the head, zero biases,
// bandwidth phi = 2 * bin width. Deterministic in (seed).
MlpModel make_model(std::size_t n_bins, const std::vector<std::size_t>& hidden,
                    Head head, double dropout, double tau_min, double tau_max,
                    std::uint64_t seed);

struct Prediction {
    double mu = 0.0;
    std::optional<double> sigma2; // engaged for Gaussian-head models
};

std::vector<double> hist_forward(const std::vector<double>& delays,
                                 const HistogramLayer& hist);

// Dense stack on precomputed features. training=true applies inverted
// dropout with masks drawn from dropout_seed; inference never drops.
Prediction mlp_forward(const std::vector<double>& features, const MlpModel& m,
                       bool training, std::uint64_t dropout_seed);

// Full inference path (histogram + stack), dispatching on model precision.
Prediction predict(const MlpModel& m, const std::vector<double>& delays);

struct Example {
    std::vector<double> delays;
    double label = 0.0;
};

// Batch losses. RMSE couples the batch through the square root, so gradients
// only exist at batch level: dL/dp_i = (p_i - y_i) / (n * RMSE).
double loss_value(Loss kind, const std::vector<Prediction>& preds,
                  const std::vector<double>& labels);

struct Gradients {
    double d_log_bandwidth = 0.0;
    std::vector<Dense> layers; // same shapes as the model, holding d/dw, d/db

    void add(const Gradients& other);
    void scale(double s);
};

Gradients zero_like(const MlpModel& m);

struct GradResult {
    double loss = 0.0;
    Gradients grads;
    // Per example d(loss)/d(tau_i) in original delay order; filled only when
    // requested (FGSM needs it).
    std::vector<std::vector<double>> input_grads;
};

// Forward + manual backward over a batch. Dropout masks are regenerated from
// (dropout_seed_base, example index), so repeated calls are bit-reproducible
// and the finite-difference checks hold with dropout active.
GradResult grad(const MlpModel& m, const std::vector<Example>& batch,
                Loss loss, bool training, std::uint64_t dropout_seed_base,
                bool want_input_grads = false);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    double m_theta = 0.0, v_theta = 0.0;
    std::vector<Dense> m_layers, v_layers;
};

AdamState make_adam(const MlpModel& m, double lr, double beta1, double beta2);

// One bias-corrected Adam update of every trainable parameter.
void adam_step(MlpModel& m, const Gradients& g, AdamState& s);

struct TrainConfig {
    Loss loss = Loss::Rmse;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::size_t patience = 8;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    bool adversarial = false;
    double epsilon = 1.0; // FGSM step in delay units
};

struct EpochLog {
    std::size_t epoch = 0;     // 1-based
    double train_loss = 0.0;   // mean of batch losses over the epoch
    double val_loss = 0.0;     // full validation-set loss, inference mode
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    std::size_t n_train = 0, n_val = 0;
    // Indices (into the caller's data vector) of the validation split; the
    // tuner scores every trial on this split with a common RMSE metric.
    std::vector<std::size_t> val_indices;
};

// 80/20 shuffled split, shuffled minibatches, early stopping on validation
// loss with best-weights restore. With cfg.adversarial the batch loss is
// L(y, f(x)) + L(y, f(x + eps * sign(grad_x L))) per the FGSM recipe.
TrainLog train(MlpModel& m, const std::vector<Example>& data,
               const TrainConfig& cfg);

// Per-tensor symmetric int8 quantization (zero_point = 0,
// scale = max|w| / 127) of dense weights and biases; the histogram bandwidth
// stays in float. Applying it to an int8 model returns the model unchanged.
MlpModel quantize(const MlpModel& m);

void save_model(const MlpModel& m, const std::string& path);
MlpModel load_model(const std::string& path);

// Uniform flat access to every trainable parameter (index 0 is the
// log-bandwidth, then each layer's weights and biases in order); the
// finite-difference gradient checks are written against these.
std::size_t n_params(const MlpModel& m);
double get_param(const MlpModel& m, std::size_t idx);
void set_param(MlpModel& m, std::size_t idx, double value);
double get_grad(const Gradients& g, const MlpModel& m, std::size_t idx);

} // namespace detune::nn
