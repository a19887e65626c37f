#include "detune/kernels.hpp"

#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>

// Backend selection: AVX2+FMA when the CPU has it, else scalar. The
// DETUNE_KERNELS environment variable ("scalar" or "avx2") overrides
// detection; tests flip backends through force_backend().

namespace detune::kernels {

bool avx2_available() noexcept {
#if DETUNE_HAVE_AVX2 && (defined(__x86_64__) || defined(_M_X64))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Backend detect() {
    if (const char* env = std::getenv("DETUNE_KERNELS")) {
        const std::string v(env);
        if (v == "scalar") return Backend::Scalar;
        if (v == "avx2") {
            if (avx2_available()) return Backend::Avx2;
            std::cerr << "detune: DETUNE_KERNELS=avx2 requested but AVX2 is "
                         "unavailable; using scalar kernels\n";
            return Backend::Scalar;
        }
        std::cerr << "detune: ignoring unknown DETUNE_KERNELS value '" << v
                  << "' (expected 'scalar' or 'avx2')\n";
    }
    return avx2_available() ? Backend::Avx2 : Backend::Scalar;
}

Backend& slot() {
    static Backend b = detect();
    return b;
}

} // namespace

Backend active_backend() noexcept { return slot(); }

const char* backend_name() noexcept {
    return slot() == Backend::Avx2 ? "avx2" : "scalar";
}

void force_backend(Backend b) {
    if (b == Backend::Avx2 && !avx2_available())
        throw std::invalid_argument("force_backend: AVX2 not available");
    slot() = b;
}

void reset_backend() { slot() = detect(); }

// Every dispatched call funnels through this switch; the per-call overhead is
// irrelevant because all kernels operate on whole arrays.
#if DETUNE_HAVE_AVX2
#define DETUNE_DISPATCH(fn, ...)                                              \
    do {                                                                      \
        if (slot() == Backend::Avx2) return avx2::fn(__VA_ARGS__);            \
        return scalar::fn(__VA_ARGS__);                                       \
    } while (0)
#else
#define DETUNE_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void exp_v(const double* x, double* y, std::size_t n) {
    DETUNE_DISPATCH(exp_v, x, y, n);
}

double dot(const double* a, const double* b, std::size_t n) {
    DETUNE_DISPATCH(dot, a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    DETUNE_DISPATCH(axpy, alpha, x, y, n);
}

void matvec_bias(const double* w, const double* b, std::size_t rows,
                 std::size_t cols, const double* x, double* y) {
    DETUNE_DISPATCH(matvec_bias, w, b, rows, cols, x, y);
}

void matvec_t(const double* w, std::size_t rows, std::size_t cols,
              const double* d, double* out) {
    DETUNE_DISPATCH(matvec_t, w, rows, cols, d, out);
}

void ger_acc(double* gw, const double* d, const double* x, std::size_t rows,
             std::size_t cols) {
    DETUNE_DISPATCH(ger_acc, gw, d, x, rows, cols);
}

void relu(double* x, std::size_t n) { DETUNE_DISPATCH(relu, x, n); }

void relu_backward(const double* act, double* grad, std::size_t n) {
    DETUNE_DISPATCH(relu_backward, act, grad, n);
}

void gauss_accum(double* f, std::size_t n_bins, double c0, double dc,
                 double inv_two_phi2, double tau) {
    DETUNE_DISPATCH(gauss_accum, f, n_bins, c0, dc, inv_two_phi2, tau);
}

GaussMoments gauss_backward(const double* g, std::size_t n_bins, double c0,
                            double dc, double inv_two_phi2, double tau) {
    DETUNE_DISPATCH(gauss_backward, g, n_bins, c0, dc, inv_two_phi2, tau);
}

void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double inv_bc1, double inv_bc2, double eps) {
    DETUNE_DISPATCH(adam_update, w, m, v, g, n, lr, beta1, beta2, inv_bc1,
                    inv_bc2, eps);
}

void matvec_q8(const std::int8_t* w, double w_scale, const double* b,
               std::size_t rows, std::size_t cols, const double* x, double* y) {
    DETUNE_DISPATCH(matvec_q8, w, w_scale, b, rows, cols, x, y);
}

#undef DETUNE_DISPATCH

} // namespace detune::kernels
