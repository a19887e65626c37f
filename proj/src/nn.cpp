#include "detune/nn.hpp"

#include "detune/errors.hpp"
#include "detune/kernels.hpp"
#include "detune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace detune::nn {

namespace {

constexpr double kSigma2Floor = 1e-6;

double phi2_of(const HistogramLayer& h) { return std::exp(h.log_bandwidth); }

void validate_float_model(const MlpModel& m, const char* who) {
    DETUNE_REQUIRE(m.precision == Precision::Float32,
                   "model must be float32 for this operation");
    DETUNE_REQUIRE(!m.layers.empty(), "model has no layers");
    DETUNE_REQUIRE(m.layers.front().cols == m.hist.n_bins,
                   "first layer width does not match the bin count");
    DETUNE_REQUIRE(m.layers.back().rows == m.head_dim(),
                   "head width does not match the head kind");
    (void)who;
}

struct SortedDelays {
    std::vector<double> values;      // ascending
    std::vector<std::uint32_t> perm; // perm[k] = original index of values[k]
};

SortedDelays sort_delays(const std::vector<double>& delays) {
    SortedDelays sd;
    sd.perm.resize(delays.size());
    std::iota(sd.perm.begin(), sd.perm.end(), 0u);
    std::stable_sort(sd.perm.begin(), sd.perm.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                         return delays[a] < delays[b];
                     });
    sd.values.resize(delays.size());
    for (std::size_t k = 0; k < delays.size(); ++k)
        sd.values[k] = delays[sd.perm[k]];
    return sd;
}

void hist_accumulate(const std::vector<double>& sorted_delays,
                     const HistogramLayer& h, double* features) {
    const double inv_two_phi2 = 0.5 / phi2_of(h);
    const double dc = h.bin_width();
    for (const double tau : sorted_delays)
        kernels::gauss_accum(features, h.n_bins, h.tau_min, dc, inv_two_phi2,
                             tau);
}

// Masks hold the inverted-dropout factors 1/(1-p) or 0, drawn once per
// example from its derived stream; the backward pass reuses the stored mask.
void draw_dropout_mask(rng::Rng& rng, double p, std::vector<double>& mask,
                       std::size_t n) {
    mask.resize(n);
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < n; ++i)
        mask[i] = rng.uniform01() >= p ? keep_scale : 0.0;
}

} // namespace

MlpModel make_model(std::size_t n_bins, const std::vector<std::size_t>& hidden,
                    Head head, double dropout, double tau_min, double tau_max,
                    std::uint64_t seed) {
    DETUNE_REQUIRE(n_bins >= 2, "make_model: need at least 2 bins");
    DETUNE_REQUIRE(tau_max > tau_min, "make_model: tau_max must exceed tau_min");
    DETUNE_REQUIRE(dropout >= 0.0 && dropout < 1.0,
                   "make_model: dropout must lie in [0, 1)");

    MlpModel m;
    m.hist.n_bins = n_bins;
    m.hist.tau_min = tau_min;
    m.hist.tau_max = tau_max;
    const double phi_init = 2.0 * m.hist.bin_width();
    m.hist.log_bandwidth = 2.0 * std::log(phi_init);
    m.head = head;
    m.dropout = dropout;

    std::vector<std::size_t> widths;
    widths.push_back(n_bins);
    for (const std::size_t hdim : hidden) {
        DETUNE_REQUIRE(hdim >= 1, "make_model: empty hidden layer");
        widths.push_back(hdim);
    }
    widths.push_back(m.head_dim());

    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Dense d;
        d.cols = widths[l];
        d.rows = widths[l + 1];
        d.w.resize(d.rows * d.cols);
        d.b.assign(d.rows, 0.0);
        const bool is_head = l + 2 == widths.size();
        const double stddev = is_head ? 1.0 / std::sqrt(double(d.cols))
                                      : std::sqrt(2.0 / double(d.cols));
        rng::Rng rng(seed, rng::Stream::Init, l);
        for (double& v : d.w) v = stddev * rng.normal();
        m.layers.push_back(std::move(d));
    }
    return m;
}

std::vector<double> hist_forward(const std::vector<double>& delays,
                                 const HistogramLayer& hist) {
    DETUNE_REQUIRE(hist.n_bins >= 2, "hist_forward: need at least 2 bins");
    std::vector<double> features(hist.n_bins, 0.0);
    const SortedDelays sd = sort_delays(delays);
    hist_accumulate(sd.values, hist, features.data());
    return features;
}

namespace {

Prediction head_prediction(const MlpModel& m, const double* raw) {
    Prediction p;
    p.mu = raw[0];
    if (m.head == Head::Gaussian) p.sigma2 = std::exp(raw[1]) + kSigma2Floor;
    return p;
}

// Dense stack shared by the float forward paths; acts/masks may be null when
// the caller does not need the caches.
void stack_forward(const MlpModel& m, const std::vector<double>& features,
                   bool training, std::uint64_t dropout_seed, double* head_raw,
                   std::vector<std::vector<double>>* acts,
                   std::vector<std::vector<double>>* masks) {
    const bool use_dropout = training && m.dropout > 0.0;
    rng::Rng rng(dropout_seed);
    std::vector<double> cur = features;
    std::vector<double> next;
    for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
        const Dense& d = m.layers[l];
        DETUNE_REQUIRE(d.cols == cur.size(), "layer/input width mismatch");
        next.resize(d.rows);
        kernels::matvec_bias(d.w.data(), d.b.data(), d.rows, d.cols,
                             cur.data(), next.data());
        kernels::relu(next.data(), next.size());
        if (use_dropout) {
            std::vector<double> mask;
            draw_dropout_mask(rng, m.dropout, mask, next.size());
            for (std::size_t i = 0; i < next.size(); ++i) next[i] *= mask[i];
            if (masks) masks->push_back(std::move(mask));
        } else if (masks) {
            masks->emplace_back();
        }
        if (acts) acts->push_back(next);
        cur.swap(next);
    }
    const Dense& hd = m.layers.back();
    DETUNE_REQUIRE(hd.cols == cur.size(), "head/input width mismatch");
    kernels::matvec_bias(hd.w.data(), hd.b.data(), hd.rows, hd.cols, cur.data(),
                         head_raw);
}

Prediction forward_quantized(const MlpModel& m,
                             const std::vector<double>& features) {
    DETUNE_REQUIRE(!m.qlayers.empty(), "int8 model has no layers");
    std::vector<double> cur = features;
    std::vector<double> next;
    for (std::size_t l = 0; l + 1 < m.qlayers.size(); ++l) {
        const QuantizedDense& d = m.qlayers[l];
        DETUNE_REQUIRE(d.cols == cur.size(), "layer/input width mismatch");
        next.resize(d.rows);
        kernels::matvec_q8(d.wq.data(), d.w_scale, d.b_deq.data(), d.rows,
                           d.cols, cur.data(), next.data());
        kernels::relu(next.data(), next.size());
        cur.swap(next);
    }
    const QuantizedDense& hd = m.qlayers.back();
    double raw[2] = {0.0, 0.0};
    kernels::matvec_q8(hd.wq.data(), hd.w_scale, hd.b_deq.data(), hd.rows,
                       hd.cols, cur.data(), raw);
    return head_prediction(m, raw);
}

} // namespace

Prediction mlp_forward(const std::vector<double>& features, const MlpModel& m,
                       bool training, std::uint64_t dropout_seed) {
    if (m.precision == Precision::Int8) {
        DETUNE_REQUIRE(!training, "int8 models cannot run in training mode");
        return forward_quantized(m, features);
    }
    validate_float_model(m, "mlp_forward");
    double raw[2] = {0.0, 0.0};
    stack_forward(m, features, training, dropout_seed, raw, nullptr, nullptr);
    return head_prediction(m, raw);
}

Prediction predict(const MlpModel& m, const std::vector<double>& delays) {
    const std::vector<double> features = hist_forward(delays, m.hist);
    return mlp_forward(features, m, /*training=*/false, 0);
}

double loss_value(Loss kind, const std::vector<Prediction>& preds,
                  const std::vector<double>& labels) {
    DETUNE_REQUIRE(!preds.empty(), "loss_value: empty batch");
    DETUNE_REQUIRE(preds.size() == labels.size(),
                   "loss_value: predictions/labels size mismatch");
    const double n = double(preds.size());
    switch (kind) {
    case Loss::GaussianNll: {
        double acc = 0.0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            DETUNE_REQUIRE(preds[i].sigma2.has_value(),
                           "GaussianNll requires a Gaussian head");
            const double s2 = *preds[i].sigma2;
            const double r = labels[i] - preds[i].mu;
            acc += 0.5 * std::log(s2) + r * r / (2.0 * s2);
        }
        return acc / n;
    }
    case Loss::Rmse: {
        double acc = 0.0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const double r = preds[i].mu - labels[i];
            acc += r * r;
        }
        return std::sqrt(acc / n);
    }
    case Loss::Msle: {
        double acc = 0.0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (1.0 + preds[i].mu <= 0.0)
                throw NumericalError(
                    "MSLE: prediction <= -1 leaves the log1p domain");
            if (1.0 + labels[i] <= 0.0)
                throw NumericalError("MSLE: label <= -1 leaves the log1p domain");
            const double r = std::log1p(preds[i].mu) - std::log1p(labels[i]);
            acc += r * r;
        }
        return acc / n;
    }
    }
    throw std::invalid_argument("loss_value: unknown loss");
}

void Gradients::add(const Gradients& other) {
    d_log_bandwidth += other.d_log_bandwidth;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        kernels::axpy(1.0, other.layers[l].w.data(), layers[l].w.data(),
                      layers[l].w.size());
        kernels::axpy(1.0, other.layers[l].b.data(), layers[l].b.data(),
                      layers[l].b.size());
    }
}

void Gradients::scale(double s) {
    d_log_bandwidth *= s;
    for (auto& layer : layers) {
        for (double& v : layer.w) v *= s;
        for (double& v : layer.b) v *= s;
    }
}

Gradients zero_like(const MlpModel& m) {
    Gradients g;
    g.layers.reserve(m.layers.size());
    for (const Dense& d : m.layers) {
        Dense z;
        z.rows = d.rows;
        z.cols = d.cols;
        z.w.assign(d.w.size(), 0.0);
        z.b.assign(d.b.size(), 0.0);
        g.layers.push_back(std::move(z));
    }
    return g;
}

namespace {

struct ExampleCache {
    SortedDelays sd;
    std::vector<double> features;
    std::vector<std::vector<double>> acts;  // post-ReLU, post-dropout
    std::vector<std::vector<double>> masks; // empty when dropout was off
    double head_raw[2] = {0.0, 0.0};
};

// d(batch loss)/d(mu) and, for Gaussian heads, d(batch loss)/d(sigma^2).
struct PredGrad {
    double d_mu = 0.0;
    double d_sigma2 = 0.0;
};

std::vector<PredGrad> loss_backward(Loss kind,
                                    const std::vector<Prediction>& preds,
                                    const std::vector<double>& labels,
                                    double loss) {
    const double n = double(preds.size());
    std::vector<PredGrad> out(preds.size());
    switch (kind) {
    case Loss::GaussianNll:
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const double s2 = *preds[i].sigma2;
            const double r = labels[i] - preds[i].mu;
            out[i].d_mu = -r / (s2 * n);
            out[i].d_sigma2 = (0.5 / s2 - r * r / (2.0 * s2 * s2)) / n;
        }
        break;
    case Loss::Rmse:
        for (std::size_t i = 0; i < preds.size(); ++i) {
            out[i].d_mu =
                loss > 0.0 ? (preds[i].mu - labels[i]) / (n * loss) : 0.0;
        }
        break;
    case Loss::Msle:
        for (std::size_t i = 0; i < preds.size(); ++i) {
            out[i].d_mu = 2.0 *
                          (std::log1p(preds[i].mu) - std::log1p(labels[i])) /
                          ((1.0 + preds[i].mu) * n);
        }
        break;
    }
    return out;
}

void backward_example(const MlpModel& m, const ExampleCache& cache,
                      const PredGrad& pg, Gradients& g,
                      std::vector<double>* input_grad) {
    const std::size_t n_hidden = m.layers.size() - 1;
    double dz_head[2] = {pg.d_mu, 0.0};
    if (m.head == Head::Gaussian) {
        // sigma^2 = exp(raw) + floor, so d(raw) = d(sigma^2) * exp(raw)
        dz_head[1] = pg.d_sigma2 * std::exp(cache.head_raw[1]);
    }

    const Dense& hd = m.layers.back();
    const std::vector<double>& a_last =
        n_hidden > 0 ? cache.acts.back() : cache.features;
    kernels::ger_acc(g.layers.back().w.data(), dz_head, a_last.data(), hd.rows,
                     hd.cols);
    for (std::size_t r = 0; r < hd.rows; ++r) g.layers.back().b[r] += dz_head[r];

    std::vector<double> da(hd.cols);
    kernels::matvec_t(hd.w.data(), hd.rows, hd.cols, dz_head, da.data());

    std::vector<double> dz;
    for (std::size_t l = n_hidden; l-- > 0;) {
        const Dense& d = m.layers[l];
        const std::vector<double>& a = cache.acts[l];
        dz = da;
        if (!cache.masks[l].empty()) {
            for (std::size_t i = 0; i < dz.size(); ++i)
                dz[i] *= cache.masks[l][i];
        }
        kernels::relu_backward(a.data(), dz.data(), dz.size());

        const std::vector<double>& a_prev =
            l > 0 ? cache.acts[l - 1] : cache.features;
        kernels::ger_acc(g.layers[l].w.data(), dz.data(), a_prev.data(), d.rows,
                         d.cols);
        kernels::axpy(1.0, dz.data(), g.layers[l].b.data(), d.rows);
        da.resize(d.cols);
        kernels::matvec_t(d.w.data(), d.rows, d.cols, dz.data(), da.data());
    }

    // da now carries d(loss)/d(feature_j); push it through the Gaussian bumps
    // for the bandwidth gradient and (optionally) the delay gradients.
    const HistogramLayer& h = m.hist;
    const double inv_two_phi2 = 0.5 / phi2_of(h);
    const double dc = h.bin_width();
    if (input_grad) input_grad->assign(cache.sd.values.size(), 0.0);
    for (std::size_t k = 0; k < cache.sd.values.size(); ++k) {
        const double tau = cache.sd.values[k];
        const kernels::GaussMoments mom = kernels::gauss_backward(
            da.data(), h.n_bins, h.tau_min, dc, inv_two_phi2, tau);
        // d(e)/d(theta) = e * d^2/(2 phi^2); d(e)/d(tau) = -e * d/phi^2
        g.d_log_bandwidth += mom.g_d2 * inv_two_phi2;
        if (input_grad)
            (*input_grad)[cache.sd.perm[k]] = -2.0 * inv_two_phi2 * mom.g_d;
    }
}

} // namespace

GradResult grad(const MlpModel& m, const std::vector<Example>& batch,
                Loss loss, bool training, std::uint64_t dropout_seed_base,
                bool want_input_grads) {
    validate_float_model(m, "grad");
    DETUNE_REQUIRE(!batch.empty(), "grad: empty batch");
    if (m.head == Head::Gaussian)
        DETUNE_REQUIRE(loss == Loss::GaussianNll,
                       "Gaussian head trains with the Gaussian NLL only");
    else
        DETUNE_REQUIRE(loss != Loss::GaussianNll,
                       "GaussianNll requires a Gaussian head");

    const std::size_t n = batch.size();
    std::vector<ExampleCache> caches(n);
    std::vector<Prediction> preds(n);
    std::vector<double> labels(n);

    for (std::size_t i = 0; i < n; ++i) {
        ExampleCache& c = caches[i];
        c.sd = sort_delays(batch[i].delays);
        c.features.assign(m.hist.n_bins, 0.0);
        hist_accumulate(c.sd.values, m.hist, c.features.data());
        const std::uint64_t seed =
            rng::derive(dropout_seed_base, rng::Stream::Dropout, i);
        stack_forward(m, c.features, training, seed, c.head_raw, &c.acts,
                      &c.masks);
        preds[i] = head_prediction(m, c.head_raw);
        labels[i] = batch[i].label;
    }

    GradResult result;
    result.loss = loss_value(loss, preds, labels);
    const std::vector<PredGrad> pgs =
        loss_backward(loss, preds, labels, result.loss);

    if (want_input_grads) result.input_grads.resize(n);

    // Examples are folded in fixed-size chunks and the chunks combined in
    // order, so the floating-point grouping (hence the result bits) does not
    // depend on how many threads run the chunk loop.
    constexpr std::size_t kChunk = 32;
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<Gradients> partial(n_chunks);
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < n_chunks; ++c) {
        Gradients gc = zero_like(m);
        const std::size_t end = std::min(n, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            backward_example(m, caches[i], pgs[i], gc,
                             want_input_grads ? &result.input_grads[i]
                                              : nullptr);
        }
        partial[c] = std::move(gc);
    }
    result.grads = std::move(partial[0]);
    for (std::size_t c = 1; c < n_chunks; ++c) result.grads.add(partial[c]);
    return result;
}

AdamState make_adam(const MlpModel& m, double lr, double beta1, double beta2) {
    DETUNE_REQUIRE(lr > 0.0, "make_adam: lr must be > 0");
    DETUNE_REQUIRE(beta1 >= 0.0 && beta1 < 1.0, "make_adam: beta1 in [0,1)");
    DETUNE_REQUIRE(beta2 >= 0.0 && beta2 < 1.0, "make_adam: beta2 in [0,1)");
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    Gradients z = zero_like(m);
    s.m_layers = z.layers;
    s.v_layers = std::move(z.layers);
    return s;
}

void adam_step(MlpModel& m, const Gradients& g, AdamState& s) {
    DETUNE_REQUIRE(g.layers.size() == m.layers.size(),
                   "adam_step: gradient/model layer mismatch");
    s.step_count += 1;
    const double inv_bc1 = 1.0 / (1.0 - std::pow(s.beta1, double(s.step_count)));
    const double inv_bc2 = 1.0 / (1.0 - std::pow(s.beta2, double(s.step_count)));

    // The scalar bandwidth parameter follows the same update as the tensors.
    const double gt = g.d_log_bandwidth;
    s.m_theta = s.beta1 * s.m_theta + (1.0 - s.beta1) * gt;
    s.v_theta = s.beta2 * s.v_theta + (1.0 - s.beta2) * gt * gt;
    m.hist.log_bandwidth -= s.lr * (s.m_theta * inv_bc1) /
                            (std::sqrt(s.v_theta * inv_bc2) + s.eps);

    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        kernels::adam_update(m.layers[l].w.data(), s.m_layers[l].w.data(),
                             s.v_layers[l].w.data(), g.layers[l].w.data(),
                             m.layers[l].w.size(), s.lr, s.beta1, s.beta2,
                             inv_bc1, inv_bc2, s.eps);
        kernels::adam_update(m.layers[l].b.data(), s.m_layers[l].b.data(),
                             s.v_layers[l].b.data(), g.layers[l].b.data(),
                             m.layers[l].b.size(), s.lr, s.beta1, s.beta2,
                             inv_bc1, inv_bc2, s.eps);
    }
}

MlpModel quantize(const MlpModel& m) {
    if (m.precision == Precision::Int8) return m;
    validate_float_model(m, "quantize");

    const auto quantize_tensor = [](const std::vector<double>& w,
                                    std::vector<std::int8_t>& q,
                                    double& scale) {
        double amax = 0.0;
        for (const double v : w) amax = std::max(amax, std::abs(v));
        // Degenerate all-zero tensors keep a positive scale so dequantization
        // stays well defined.
        scale = std::max(amax, 1e-12) / 127.0;
        q.resize(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double r = std::nearbyint(w[i] / scale);
            q[i] = static_cast<std::int8_t>(
                std::clamp(r, -127.0, 127.0));
        }
    };

    MlpModel out;
    out.hist = m.hist; // bandwidth stays in float
    out.head = m.head;
    out.dropout = m.dropout;
    out.precision = Precision::Int8;
    for (const Dense& d : m.layers) {
        QuantizedDense qd;
        qd.rows = d.rows;
        qd.cols = d.cols;
        quantize_tensor(d.w, qd.wq, qd.w_scale);
        quantize_tensor(d.b, qd.bq, qd.b_scale);
        qd.b_deq.resize(qd.bq.size());
        for (std::size_t i = 0; i < qd.bq.size(); ++i)
            qd.b_deq[i] = qd.b_scale * double(qd.bq[i]);
        out.qlayers.push_back(std::move(qd));
    }
    return out;
}

std::size_t n_params(const MlpModel& m) {
    std::size_t n = 1; // log-bandwidth
    for (const Dense& d : m.layers) n += d.w.size() + d.b.size();
    return n;
}

namespace {

// Maps a flat index to (layer, tensor, offset); idx 0 is the bandwidth.
template <typename Layers>
auto* locate(Layers& layers, std::size_t idx) {
    for (auto& d : layers) {
        if (idx < d.w.size()) return &d.w[idx];
        idx -= d.w.size();
        if (idx < d.b.size()) return &d.b[idx];
        idx -= d.b.size();
    }
    return decltype(&layers.front().w[0])(nullptr);
}

} // namespace

double get_param(const MlpModel& m, std::size_t idx) {
    if (idx == 0) return m.hist.log_bandwidth;
    const double* p = locate(m.layers, idx - 1);
    DETUNE_REQUIRE(p != nullptr, "get_param: index out of range");
    return *p;
}

void set_param(MlpModel& m, std::size_t idx, double value) {
    if (idx == 0) {
        m.hist.log_bandwidth = value;
        return;
    }
    double* p = locate(m.layers, idx - 1);
    DETUNE_REQUIRE(p != nullptr, "set_param: index out of range");
    *p = value;
}

double get_grad(const Gradients& g, const MlpModel& m, std::size_t idx) {
    (void)m;
    if (idx == 0) return g.d_log_bandwidth;
    const double* p = locate(g.layers, idx - 1);
    DETUNE_REQUIRE(p != nullptr, "get_grad: index out of range");
    return *p;
}

} // namespace detune::nn
