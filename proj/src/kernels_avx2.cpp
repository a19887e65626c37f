#include "detune/kernels.hpp"

#include <cmath>
#include <immintrin.h>

// AVX2+FMA backend. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU check (see kernels_dispatch.cpp).
//
// exp_pd follows the classic Cephes expansion: argument reduction
// x = n*ln2 + r with Cody-Waite splitting, a Pade approximant for e^r on
// |r| <= ln2/2, and 2^n reassembled through the exponent bits. Accuracy is
// 1-2 ulp over [-708, 709], verified against libm in the kernel tests.

namespace detune::kernels::avx2 {

namespace {

// Loads 4 - k zeroed lanes when k < 4; used for loop tails without reading or
// writing past the end of an array.
alignas(32) constexpr std::int64_t kMaskTable[8] = {-1, -1, -1, -1, 0, 0, 0, 0};

inline __m256i tail_mask(std::size_t k) {
    return _mm256_loadu_si256(
        reinterpret_cast<const __m256i*>(kMaskTable + 4 - k));
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d s = _mm_add_pd(lo, hi);
    s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
    return _mm_cvtsd_f64(s);
}

inline __m256d exp_pd(__m256d x) {
    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
    const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
    const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
    const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
    const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
    const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
    const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
    const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
    const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);
    const __m256d lo_cut = _mm256_set1_pd(-708.0);
    const __m256d hi_cut = _mm256_set1_pd(709.0);

    const __m256d under = _mm256_cmp_pd(x, lo_cut, _CMP_LT_OQ);
    const __m256d over = _mm256_cmp_pd(x, hi_cut, _CMP_GT_OQ);
    const __m256d xx = _mm256_min_pd(_mm256_max_pd(x, lo_cut), hi_cut);

    const __m256d n = _mm256_round_pd(
        _mm256_mul_pd(xx, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(n, ln2_hi, xx);
    r = _mm256_fnmadd_pd(n, ln2_lo, r);
    const __m256d z = _mm256_mul_pd(r, r);

    __m256d p = _mm256_fmadd_pd(p0, z, p1);
    p = _mm256_fmadd_pd(p, z, p2);
    p = _mm256_mul_pd(p, r);
    __m256d q = _mm256_fmadd_pd(q0, z, q1);
    q = _mm256_fmadd_pd(q, z, q2);
    q = _mm256_fmadd_pd(q, z, q3);
    __m256d e = _mm256_add_pd(
        _mm256_set1_pd(1.0),
        _mm256_div_pd(_mm256_add_pd(p, p), _mm256_sub_pd(q, p)));

    // 2^n: |n| <= 1075 so n survives the 1.5*2^52 round-trip exactly, and the
    // bit-pattern difference recovers it as a 64-bit integer per lane.
    const __m256d magic = _mm256_set1_pd(6755399441055744.0);
    const __m256i ni = _mm256_sub_epi64(
        _mm256_castpd_si256(_mm256_add_pd(n, magic)), _mm256_castpd_si256(magic));
    const __m256d pow2 = _mm256_castsi256_pd(
        _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52));
    e = _mm256_mul_pd(e, pow2);

    e = _mm256_blendv_pd(e, _mm256_setzero_pd(), under);
    e = _mm256_blendv_pd(e, _mm256_set1_pd(HUGE_VAL), over);
    return e;
}

const __m256d kIota = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);

} // namespace

void exp_v(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, exp_pd(_mm256_loadu_pd(x + i)));
    if (i < n) {
        const __m256i m = tail_mask(n - i);
        const __m256d v = exp_pd(_mm256_maskload_pd(x + i, m));
        _mm256_maskstore_pd(y + i, m, v);
    }
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                               acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                               _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                               acc0);
    if (i < n) {
        const __m256i m = tail_mask(n - i);
        acc1 = _mm256_fmadd_pd(_mm256_maskload_pd(a + i, m),
                               _mm256_maskload_pd(b + i, m), acc1);
    }
    return hsum(_mm256_add_pd(acc0, acc1));
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d a = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(
            y + i, _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i),
                                   _mm256_loadu_pd(y + i)));
    }
    if (i < n) {
        const __m256i m = tail_mask(n - i);
        const __m256d v = _mm256_fmadd_pd(a, _mm256_maskload_pd(x + i, m),
                                          _mm256_maskload_pd(y + i, m));
        _mm256_maskstore_pd(y + i, m, v);
    }
}

void matvec_bias(const double* w, const double* b, std::size_t rows,
                 std::size_t cols, const double* x, double* y) {
    for (std::size_t i = 0; i < rows; ++i)
        y[i] = dot(w + i * cols, x, cols) + b[i];
}

void matvec_t(const double* w, std::size_t rows, std::size_t cols,
              const double* d, double* out) {
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) _mm256_storeu_pd(out + j, _mm256_setzero_pd());
    for (; j < cols; ++j) out[j] = 0.0;
    const std::size_t tail = cols % 4;
    const __m256i m = tail_mask(tail);
    for (std::size_t i = 0; i < rows; ++i) {
        const __m256d di = _mm256_set1_pd(d[i]);
        const double* row = w + i * cols;
        for (j = 0; j + 4 <= cols; j += 4) {
            _mm256_storeu_pd(out + j,
                             _mm256_fmadd_pd(di, _mm256_loadu_pd(row + j),
                                             _mm256_loadu_pd(out + j)));
        }
        if (tail) {
            const __m256d v = _mm256_fmadd_pd(di, _mm256_maskload_pd(row + j, m),
                                              _mm256_maskload_pd(out + j, m));
            _mm256_maskstore_pd(out + j, m, v);
        }
    }
}

void ger_acc(double* gw, const double* d, const double* x, std::size_t rows,
             std::size_t cols) {
    const std::size_t tail = cols % 4;
    const __m256i m = tail_mask(tail);
    for (std::size_t i = 0; i < rows; ++i) {
        const __m256d di = _mm256_set1_pd(d[i]);
        double* row = gw + i * cols;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            _mm256_storeu_pd(row + j,
                             _mm256_fmadd_pd(di, _mm256_loadu_pd(x + j),
                                             _mm256_loadu_pd(row + j)));
        }
        if (tail) {
            const __m256d v = _mm256_fmadd_pd(di, _mm256_maskload_pd(x + j, m),
                                              _mm256_maskload_pd(row + j, m));
            _mm256_maskstore_pd(row + j, m, v);
        }
    }
}

void relu(double* x, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    if (i < n) {
        const __m256i m = tail_mask(n - i);
        _mm256_maskstore_pd(x + i, m,
                            _mm256_max_pd(zero, _mm256_maskload_pd(x + i, m)));
    }
}

void relu_backward(const double* act, double* grad, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d keep =
            _mm256_cmp_pd(_mm256_loadu_pd(act + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(grad + i,
                         _mm256_and_pd(keep, _mm256_loadu_pd(grad + i)));
    }
    if (i < n) {
        const __m256i m = tail_mask(n - i);
        const __m256d keep =
            _mm256_cmp_pd(_mm256_maskload_pd(act + i, m), zero, _CMP_GT_OQ);
        _mm256_maskstore_pd(
            grad + i, m, _mm256_and_pd(keep, _mm256_maskload_pd(grad + i, m)));
    }
}

void gauss_accum(double* f, std::size_t n_bins, double c0, double dc,
                 double inv_two_phi2, double tau) {
    const auto [lo, hi] = gauss_band(tau, c0, dc, n_bins, inv_two_phi2);
    const __m256d vtau = _mm256_set1_pd(tau);
    const __m256d vc0 = _mm256_set1_pd(c0);
    const __m256d vdc = _mm256_set1_pd(dc);
    const __m256d neg_inv = _mm256_set1_pd(-inv_two_phi2);
    std::ptrdiff_t j = lo;
    for (; j + 4 <= hi; j += 4) {
        const __m256d jd = _mm256_add_pd(_mm256_set1_pd(double(j)), kIota);
        const __m256d d = _mm256_sub_pd(vtau, _mm256_fmadd_pd(jd, vdc, vc0));
        const __m256d e = exp_pd(_mm256_mul_pd(_mm256_mul_pd(d, d), neg_inv));
        _mm256_storeu_pd(f + j, _mm256_add_pd(_mm256_loadu_pd(f + j), e));
    }
    if (j < hi) {
        const __m256i m = tail_mask(std::size_t(hi - j));
        const __m256d jd = _mm256_add_pd(_mm256_set1_pd(double(j)), kIota);
        const __m256d d = _mm256_sub_pd(vtau, _mm256_fmadd_pd(jd, vdc, vc0));
        const __m256d e = exp_pd(_mm256_mul_pd(_mm256_mul_pd(d, d), neg_inv));
        _mm256_maskstore_pd(f + j, m,
                            _mm256_add_pd(_mm256_maskload_pd(f + j, m), e));
    }
}

GaussMoments gauss_backward(const double* g, std::size_t n_bins, double c0,
                            double dc, double inv_two_phi2, double tau) {
    const auto [lo, hi] = gauss_band(tau, c0, dc, n_bins, inv_two_phi2);
    const __m256d vtau = _mm256_set1_pd(tau);
    const __m256d vc0 = _mm256_set1_pd(c0);
    const __m256d vdc = _mm256_set1_pd(dc);
    const __m256d neg_inv = _mm256_set1_pd(-inv_two_phi2);
    __m256d acc_d = _mm256_setzero_pd();
    __m256d acc_d2 = _mm256_setzero_pd();
    std::ptrdiff_t j = lo;
    for (; j + 4 <= hi; j += 4) {
        const __m256d jd = _mm256_add_pd(_mm256_set1_pd(double(j)), kIota);
        const __m256d d = _mm256_sub_pd(vtau, _mm256_fmadd_pd(jd, vdc, vc0));
        const __m256d e = exp_pd(_mm256_mul_pd(_mm256_mul_pd(d, d), neg_inv));
        const __m256d ge = _mm256_mul_pd(_mm256_loadu_pd(g + j), e);
        const __m256d ged = _mm256_mul_pd(ge, d);
        acc_d = _mm256_add_pd(acc_d, ged);
        acc_d2 = _mm256_fmadd_pd(ged, d, acc_d2);
    }
    if (j < hi) {
        const __m256i m = tail_mask(std::size_t(hi - j));
        const __m256d jd = _mm256_add_pd(_mm256_set1_pd(double(j)), kIota);
        const __m256d d = _mm256_sub_pd(vtau, _mm256_fmadd_pd(jd, vdc, vc0));
        const __m256d e = exp_pd(_mm256_mul_pd(_mm256_mul_pd(d, d), neg_inv));
        // Dead lanes load g = 0 and therefore contribute nothing.
        const __m256d ge = _mm256_mul_pd(_mm256_maskload_pd(g + j, m), e);
        const __m256d ged = _mm256_mul_pd(ge, d);
        acc_d = _mm256_add_pd(acc_d, ged);
        acc_d2 = _mm256_fmadd_pd(ged, d, acc_d2);
    }
    return {hsum(acc_d), hsum(acc_d2)};
}

void adam_update(double* w, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double inv_bc1, double inv_bc2, double eps) {
    const __m256d b1 = _mm256_set1_pd(beta1);
    const __m256d b2 = _mm256_set1_pd(beta2);
    const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d vbc1 = _mm256_set1_pd(inv_bc1);
    const __m256d vbc2 = _mm256_set1_pd(inv_bc2);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d veps = _mm256_set1_pd(eps);
    const auto step = [&](std::size_t i, const __m256i* mask) {
        const __m256d gi = mask ? _mm256_maskload_pd(g + i, *mask)
                                : _mm256_loadu_pd(g + i);
        __m256d mi = mask ? _mm256_maskload_pd(m + i, *mask)
                          : _mm256_loadu_pd(m + i);
        __m256d vi = mask ? _mm256_maskload_pd(v + i, *mask)
                          : _mm256_loadu_pd(v + i);
        __m256d wi = mask ? _mm256_maskload_pd(w + i, *mask)
                          : _mm256_loadu_pd(w + i);
        mi = _mm256_fmadd_pd(omb1, gi, _mm256_mul_pd(b1, mi));
        vi = _mm256_fmadd_pd(omb2, _mm256_mul_pd(gi, gi),
                             _mm256_mul_pd(b2, vi));
        const __m256d m_hat = _mm256_mul_pd(mi, vbc1);
        const __m256d denom = _mm256_add_pd(
            _mm256_sqrt_pd(_mm256_mul_pd(vi, vbc2)), veps);
        wi = _mm256_fnmadd_pd(vlr, _mm256_div_pd(m_hat, denom), wi);
        if (mask) {
            _mm256_maskstore_pd(m + i, *mask, mi);
            _mm256_maskstore_pd(v + i, *mask, vi);
            _mm256_maskstore_pd(w + i, *mask, wi);
        } else {
            _mm256_storeu_pd(m + i, mi);
            _mm256_storeu_pd(v + i, vi);
            _mm256_storeu_pd(w + i, wi);
        }
    };
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) step(i, nullptr);
    if (i < n) {
        const __m256i mask = tail_mask(n - i);
        step(i, &mask);
    }
}

void matvec_q8(const std::int8_t* w, double w_scale, const double* b,
               std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t i = 0; i < rows; ++i) {
        const std::int8_t* row = w + i * cols;
        __m256d acc0 = _mm256_setzero_pd();
        __m256d acc1 = _mm256_setzero_pd();
        std::size_t j = 0;
        for (; j + 8 <= cols; j += 8) {
            const __m128i q8 = _mm_loadl_epi64(
                reinterpret_cast<const __m128i*>(row + j));
            const __m256i q32 = _mm256_cvtepi8_epi32(q8);
            const __m256d lo =
                _mm256_cvtepi32_pd(_mm256_castsi256_si128(q32));
            const __m256d hi =
                _mm256_cvtepi32_pd(_mm256_extracti128_si256(q32, 1));
            acc0 = _mm256_fmadd_pd(lo, _mm256_loadu_pd(x + j), acc0);
            acc1 = _mm256_fmadd_pd(hi, _mm256_loadu_pd(x + j + 4), acc1);
        }
        double acc = hsum(_mm256_add_pd(acc0, acc1));
        for (; j < cols; ++j) acc += double(row[j]) * x[j];
        y[i] = w_scale * acc + b[i];
    }
}

} // namespace detune::kernels::avx2
