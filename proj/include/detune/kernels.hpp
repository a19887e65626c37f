#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>

namespace detune::kernels {

// Numerical inner loops used by the histogram layer, the dense stack, Adam,
// and int8 inference. Every operation exists twice: a scalar reference
// (plain loops over libm) and an AVX2+FMA variant. The dispatched entry
// points below pick a backend once per process (overridable for tests and
// via the DETUNE_KERNELS environment variable); backends are equivalence-
// tested against each other.
//
// Accumulation order differs between backends (lane-wise vs sequential), so
// cross-backend agreement is to rounding tolerance, not bitwise. Within one
// backend results are bit-reproducible.

enum class Backend { Scalar, Avx2 };

Backend active_backend() noexcept;
const char* backend_name() noexcept;
bool avx2_available() noexcept;
// Throws std::invalid_argument when forcing Avx2 on a host without it.
void force_backend(Backend b);
// Re-applies the default selection (CPU detection + DETUNE_KERNELS override).
void reset_backend();

// Sums of Gaussian bumps are truncated where exp(-d^2/(2 phi^2)) < e^-43
// (~2.1e-19): per-feature absolute error < 1.1e-17 for 48 delays, far below
// every tolerance in the project, and a ~7x saving in exp evaluations at the
// default bin count. Both backends derive the band from the same
// double-precision expressions so they touch identical bins.
inline constexpr double kGaussArgMax = 43.0;

// Half-open index range [lo, hi) of bins with (tau - c_j)^2/(2 phi^2) <= 43,
// where c_j = c0 + j*dc.
inline std::pair<std::ptrdiff_t, std::ptrdiff_t>
gauss_band(double tau, double c0, double dc, std::size_t n_bins,
           double inv_two_phi2) noexcept {
    const double radius = std::sqrt(kGaussArgMax / inv_two_phi2);
    auto lo = static_cast<std::ptrdiff_t>(std::ceil((tau - radius - c0) / dc));
    auto hi = static_cast<std::ptrdiff_t>(std::floor((tau + radius - c0) / dc));
    if (lo < 0) lo = 0;
    const auto last = static_cast<std::ptrdiff_t>(n_bins) - 1;
    if (hi > last) hi = last;
    return {lo, hi + 1};
}

// Weighted first and second moments of the bump around one delay, used by the
// histogram backward pass: g_d = sum_j g[j]*e_j*d_j, g_d2 = sum_j g[j]*e_j*d_j^2
// with d_j = tau - c_j and e_j = exp(-d_j^2 * inv_two_phi2).
struct GaussMoments {
    double g_d = 0.0;
    double g_d2 = 0.0;
};

// ---- dispatched API ----

// y[i] = exp(x[i]); inputs below -708 flush to 0, above 709 to +inf.
void exp_v(const double* x, double* y, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// y = W x + b with W row-major [rows x cols].
void matvec_bias(const double* w, const double* b, std::size_t rows,
                 std::size_t cols, const double* x, double* y);
// out[j] = sum_i w[i*cols + j] * d[i]  (W^T d, the backprop direction).
void matvec_t(const double* w, std::size_t rows, std::size_t cols,
              const double* d, double* out);
// gw[i*cols + j] += d[i] * x[j]  (rank-1 gradient accumulation).
void ger_acc(double* gw, const double* d, const double* x, std::size_t rows,
             std::size_t cols);
void relu(double* x, std::size_t n);
// grad[i] = act[i] > 0 ? grad[i] : 0, with act the post-ReLU activations.
void relu_backward(const double* act, double* grad, std::size_t n);
// f[j] += exp(-(tau - c_j)^2 * inv_two_phi2) over the truncation band.
void gauss_accum(double* f, std::size_t n_bins, double c0, double dc,
                 double inv_two_phi2, double tau);
GaussMoments gauss_backward(const double* g, std::size_t n_bins, double c0,
                            double dc, double inv_two_phi2, double tau);
// One Adam update on a parameter tensor; inv_bc1 = 1/(1 - beta1^t),
// inv_bc2 = 1/(1 - beta2^t) are the bias corrections for step t.
void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double inv_bc1, double inv_bc2, double eps);
// y = w_scale * (Q x) + b with Q row-major int8 [rows x cols] and b already
// dequantized by the caller.
void matvec_q8(const std::int8_t* w, double w_scale, const double* b,
               std::size_t rows, std::size_t cols, const double* x, double* y);

// ---- per-backend entry points (equivalence tests target these) ----

namespace scalar {
void exp_v(const double* x, double* y, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void matvec_bias(const double* w, const double* b, std::size_t rows,
                 std::size_t cols, const double* x, double* y);
void matvec_t(const double* w, std::size_t rows, std::size_t cols,
              const double* d, double* out);
void ger_acc(double* gw, const double* d, const double* x, std::size_t rows,
             std::size_t cols);
void relu(double* x, std::size_t n);
void relu_backward(const double* act, double* grad, std::size_t n);
void gauss_accum(double* f, std::size_t n_bins, double c0, double dc,
                 double inv_two_phi2, double tau);
GaussMoments gauss_backward(const double* g, std::size_t n_bins, double c0,
                            double dc, double inv_two_phi2, double tau);
void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double inv_bc1, double inv_bc2, double eps);
void matvec_q8(const std::int8_t* w, double w_scale, const double* b,
               std::size_t rows, std::size_t cols, const double* x, double* y);
} // namespace scalar

namespace avx2 {
// Present only when the binary was built with AVX2 support; calling them on a
// host without AVX2 is undefined. Guard with avx2_available().
void exp_v(const double* x, double* y, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void matvec_bias(const double* w, const double* b, std::size_t rows,
                 std::size_t cols, const double* x, double* y);
void matvec_t(const double* w, std::size_t rows, std::size_t cols,
              const double* d, double* out);
void ger_acc(double* gw, const double* d, const double* x, std::size_t rows,
             std::size_t cols);
void relu(double* x, std::size_t n);
void relu_backward(const double* act, double* grad, std::size_t n);
void gauss_accum(double* f, std::size_t n_bins, double c0, double dc,
                 double inv_two_phi2, double tau);
GaussMoments gauss_backward(const double* g, std::size_t n_bins, double c0,
                            double dc, double inv_two_phi2, double tau);
void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double inv_bc1, double inv_bc2, double eps);
void matvec_q8(const std::int8_t* w, double w_scale, const double* b,
               std::size_t rows, std::size_t cols, const double* x, double* y);
} // namespace avx2

} // namespace detune::kernels
