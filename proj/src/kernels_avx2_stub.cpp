#include "detune/kernels.hpp"

#include <stdexcept>

// Stand-in for builds without AVX2 support so callers of the avx2:: symbols
// always link; avx2_available() returns false in these builds and the
// dispatcher never routes here.

namespace detune::kernels::avx2 {

namespace {
[[noreturn]] void unavailable() {
    throw std::runtime_error("detune built without AVX2 kernels");
}
} // namespace

void exp_v(const double*, double*, std::size_t) { unavailable(); }
double dot(const double*, const double*, std::size_t) { unavailable(); }
void axpy(double, const double*, double*, std::size_t) { unavailable(); }
void matvec_bias(const double*, const double*, std::size_t, std::size_t,
                 const double*, double*) {
    unavailable();
}
void matvec_t(const double*, std::size_t, std::size_t, const double*,
              double*) {
    unavailable();
}
void ger_acc(double*, const double*, const double*, std::size_t, std::size_t) {
    unavailable();
}
void relu(double*, std::size_t) { unavailable(); }
void relu_backward(const double*, double*, std::size_t) { unavailable(); }
void gauss_accum(double*, std::size_t, double, double, double, double) {
    unavailable();
}
GaussMoments gauss_backward(const double*, std::size_t, double, double, double,
                            double) {
    unavailable();
}
void adam_update(double*, double*, double*, const double*, std::size_t, double,
                 double, double, double, double, double) {
    unavailable();
}
void matvec_q8(const std::int8_t*, double, const double*, std::size_t,
               std::size_t, const double*, double*) {
    unavailable();
}

} // namespace detune::kernels::avx2
