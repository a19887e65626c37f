#include "detune/kernels.hpp"

#include <cmath>

// Reference backend: straightforward loops over libm. This is the semantic
// ground truth the AVX2 variants are tested against.

namespace detune::kernels::scalar {

void exp_v(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] < -708.0) {
            y[i] = 0.0;
        } else if (x[i] > 709.0) {
            y[i] = HUGE_VAL;
        } else {
            y[i] = std::exp(x[i]);
        }
    }
}

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void matvec_bias(const double* w, const double* b, std::size_t rows,
                 std::size_t cols, const double* x, double* y) {
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* row = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc + b[i];
    }
}

void matvec_t(const double* w, std::size_t rows, std::size_t cols,
              const double* d, double* out) {
    for (std::size_t j = 0; j < cols; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double di = d[i];
        const double* row = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] += di * row[j];
    }
}

void ger_acc(double* gw, const double* d, const double* x, std::size_t rows,
             std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double di = d[i];
        double* row = gw + i * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] += di * x[j];
    }
}

void relu(double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] < 0.0) x[i] = 0.0;
    }
}

void relu_backward(const double* act, double* grad, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (act[i] <= 0.0) grad[i] = 0.0;
    }
}

void gauss_accum(double* f, std::size_t n_bins, double c0, double dc,
                 double inv_two_phi2, double tau) {
    const auto [lo, hi] = gauss_band(tau, c0, dc, n_bins, inv_two_phi2);
    for (std::ptrdiff_t j = lo; j < hi; ++j) {
        const double d = tau - (c0 + double(j) * dc);
        f[j] += std::exp(-d * d * inv_two_phi2);
    }
}

GaussMoments gauss_backward(const double* g, std::size_t n_bins, double c0,
                            double dc, double inv_two_phi2, double tau) {
    GaussMoments out;
    const auto [lo, hi] = gauss_band(tau, c0, dc, n_bins, inv_two_phi2);
    for (std::ptrdiff_t j = lo; j < hi; ++j) {
        const double d = tau - (c0 + double(j) * dc);
        const double ge = g[j] * std::exp(-d * d * inv_two_phi2);
        out.g_d += ge * d;
        out.g_d2 += ge * d * d;
    }
    return out;
}

void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double inv_bc1, double inv_bc2, double eps) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double m_hat = m[i] * inv_bc1;
        const double v_hat = v[i] * inv_bc2;
        w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

void matvec_q8(const std::int8_t* w, double w_scale, const double* b,
               std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0.0;
        const std::int8_t* row = w + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc += double(row[j]) * x[j];
        y[i] = w_scale * acc + b[i];
    }
}

} // namespace detune::kernels::scalar
