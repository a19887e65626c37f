#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "detune/kernels.hpp"
#include "detune/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

using namespace detune;
namespace k = detune::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, rng::Rng& rng, double lo = -3.0,
                               double hi = 3.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool close_rel(double a, double b, double rel, double abs_floor = 1e-300) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b),
                                              abs_floor});
}

// The AVX2 path must exist on this CI host; skipping silently would turn the
// whole equivalence suite into a no-op.
bool require_avx2() {
    if (k::avx2_available()) return true;
    WARN_MESSAGE(false, "host lacks AVX2: cross-backend checks skipped");
    return false;
}

} // namespace

TEST_CASE("exp_v matches libm to 4 ulp across the full range") {
    if (!require_avx2()) return;
    rng::Rng rng(1001);
    // Odd length exercises the masked tail.
    const std::size_t n = 1003;
    std::vector<double> x(n), ys(n), yv(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = rng.uniform(-700.0, 700.0);
    // Pinned hard cases: zero, denormal-result range, clamp edges, tiny args.
    x[0] = 0.0;
    x[1] = -745.0;
    x[2] = 710.0;
    x[3] = -1e-12;
    x[4] = 1e-12;
    x[5] = 43.0;
    x[6] = -43.0;
    k::scalar::exp_v(x.data(), ys.data(), n);
    k::avx2::exp_v(x.data(), yv.data(), n);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isinf(ys[i])) {
            CHECK(std::isinf(yv[i]));
            continue;
        }
        const double ulp = std::abs(ys[i]) * std::numeric_limits<double>::epsilon();
        CHECK_MESSAGE(std::abs(ys[i] - yv[i]) <= 4.0 * ulp,
                      "x=" << x[i] << " scalar=" << ys[i] << " avx2=" << yv[i]);
    }
    CHECK(yv[0] == 1.0);
    CHECK(yv[2] == std::numeric_limits<double>::infinity());
}

TEST_CASE("dot / axpy / relu agree across backends including ragged tails") {
    if (!require_avx2()) return;
    rng::Rng rng(1002);
    for (const std::size_t n : {std::size_t(1), std::size_t(3), std::size_t(4),
                                std::size_t(7), std::size_t(64),
                                std::size_t(257)}) {
        const auto a = random_vec(n, rng);
        const auto b = random_vec(n, rng);
        CHECK(close_rel(k::scalar::dot(a.data(), b.data(), n),
                        k::avx2::dot(a.data(), b.data(), n), 1e-13, 1e-14));

        auto ys = random_vec(n, rng);
        auto yv = ys;
        k::scalar::axpy(0.37, a.data(), ys.data(), n);
        k::avx2::axpy(0.37, a.data(), yv.data(), n);
        // FMA vs mul+add: up to 1 ulp per element.
        for (std::size_t i = 0; i < n; ++i)
            CHECK(close_rel(ys[i], yv[i], 4e-16, 4.0));

        auto rs = random_vec(n, rng);
        auto rv = rs;
        k::scalar::relu(rs.data(), n);
        k::avx2::relu(rv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(rs[i] == rv[i]);

        auto gs = random_vec(n, rng);
        auto gv = gs;
        k::scalar::relu_backward(rs.data(), gs.data(), n);
        k::avx2::relu_backward(rv.data(), gv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(gs[i] == gv[i]);
    }
}

TEST_CASE("matvec_bias / matvec_t / ger_acc agree across backends") {
    if (!require_avx2()) return;
    rng::Rng rng(1003);
    for (const auto& [rows, cols] :
         {std::pair<std::size_t, std::size_t>{1, 1},
          {3, 5},
          {30, 2},
          {100, 50},
          {50, 30},
          {7, 67}}) {
        const auto w = random_vec(rows * cols, rng);
        const auto b = random_vec(rows, rng);
        const auto x = random_vec(cols, rng);
        // Rounding error scales with the magnitude of the summands, not the
        // (possibly cancelled) result, hence the absolute floor.
        std::vector<double> ys(rows), yv(rows);
        k::scalar::matvec_bias(w.data(), b.data(), rows, cols, x.data(),
                               ys.data());
        k::avx2::matvec_bias(w.data(), b.data(), rows, cols, x.data(),
                             yv.data());
        for (std::size_t i = 0; i < rows; ++i)
            CHECK(close_rel(ys[i], yv[i], 1e-13, 10.0));

        const auto d = random_vec(rows, rng);
        std::vector<double> ts(cols), tv(cols);
        k::scalar::matvec_t(w.data(), rows, cols, d.data(), ts.data());
        k::avx2::matvec_t(w.data(), rows, cols, d.data(), tv.data());
        for (std::size_t j = 0; j < cols; ++j)
            CHECK(close_rel(ts[j], tv[j], 1e-13, 10.0));

        auto gws = random_vec(rows * cols, rng);
        auto gwv = gws;
        k::scalar::ger_acc(gws.data(), d.data(), x.data(), rows, cols);
        k::avx2::ger_acc(gwv.data(), d.data(), x.data(), rows, cols);
        for (std::size_t i = 0; i < rows * cols; ++i)
            CHECK(close_rel(gws[i], gwv[i], 1e-13, 10.0));
    }
}

TEST_CASE("gauss_accum equals a naive full-range sum and is backend-stable") {
    rng::Rng rng(1004);
    const std::size_t n_bins = 256;
    const double c0 = 0.0, dc = 100.0 / 255.0;
    const double phi = 2.0 * dc;
    const double inv_two_phi2 = 1.0 / (2.0 * phi * phi);

    std::vector<double> fs(n_bins, 0.0), fn(n_bins, 0.0);
    std::vector<double> taus;
    for (int i = 0; i < 48; ++i) taus.push_back(rng.uniform(0.0, 100.0));
    taus.push_back(0.0);
    taus.push_back(100.0);
    taus.push_back(-2.0);  // jittered delays can leave the grid
    taus.push_back(104.0);

    for (const double tau : taus) {
        k::scalar::gauss_accum(fs.data(), n_bins, c0, dc, inv_two_phi2, tau);
        for (std::size_t j = 0; j < n_bins; ++j) {
            const double d = tau - (c0 + double(j) * dc);
            fn[j] += std::exp(-d * d * inv_two_phi2);
        }
    }
    // Truncation bound: per feature, per delay the dropped terms are < e^-43.
    for (std::size_t j = 0; j < n_bins; ++j)
        CHECK(std::abs(fs[j] - fn[j]) <= 1e-15 * std::max(1.0, fn[j]));

    if (k::avx2_available()) {
        std::vector<double> fv(n_bins, 0.0);
        for (const double tau : taus)
            k::avx2::gauss_accum(fv.data(), n_bins, c0, dc, inv_two_phi2, tau);
        for (std::size_t j = 0; j < n_bins; ++j)
            CHECK(close_rel(fs[j], fv[j], 1e-13, 1e-16));
    }
}

TEST_CASE("gauss_backward moments match a naive evaluation") {
    rng::Rng rng(1005);
    const std::size_t n_bins = 200;
    const double c0 = 0.0, dc = 0.5, inv_two_phi2 = 1.0 / (2.0 * 0.8 * 0.8);
    const auto g = random_vec(n_bins, rng);

    for (const double tau : {17.3, 0.0, 99.9, -1.0, 120.0}) {
        double gd = 0.0, gd2 = 0.0;
        for (std::size_t j = 0; j < n_bins; ++j) {
            const double d = tau - (c0 + double(j) * dc);
            const double e = std::exp(-d * d * inv_two_phi2);
            gd += g[j] * e * d;
            gd2 += g[j] * e * d * d;
        }
        const auto ms =
            k::scalar::gauss_backward(g.data(), n_bins, c0, dc, inv_two_phi2, tau);
        CHECK(close_rel(ms.g_d, gd, 1e-12, 1e-13));
        CHECK(close_rel(ms.g_d2, gd2, 1e-12, 1e-13));
        if (k::avx2_available()) {
            const auto mv = k::avx2::gauss_backward(g.data(), n_bins, c0, dc,
                                                    inv_two_phi2, tau);
            CHECK(close_rel(ms.g_d, mv.g_d, 1e-12, 1e-13));
            CHECK(close_rel(ms.g_d2, mv.g_d2, 1e-12, 1e-13));
        }
    }
}

TEST_CASE("adam_update agrees across backends") {
    if (!require_avx2()) return;
    rng::Rng rng(1006);
    const std::size_t n = 101;
    const auto g = random_vec(n, rng);
    auto ws = random_vec(n, rng), wv = ws;
    auto ms = random_vec(n, rng, 0.0, 0.1), mv = ms;
    auto vs = random_vec(n, rng, 0.0, 0.1), vv = vs;
    const double b1 = 0.9, b2 = 0.999;
    const double inv_bc1 = 1.0 / (1.0 - b1 * b1), inv_bc2 = 1.0 / (1.0 - b2 * b2);
    k::scalar::adam_update(ws.data(), ms.data(), vs.data(), g.data(), n, 1e-3,
                           b1, b2, inv_bc1, inv_bc2, 1e-8);
    k::avx2::adam_update(wv.data(), mv.data(), vv.data(), g.data(), n, 1e-3,
                         b1, b2, inv_bc1, inv_bc2, 1e-8);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(close_rel(ws[i], wv[i], 1e-13, 1e-14));
        // Moment updates fuse to FMA on the vector path.
        CHECK(close_rel(ms[i], mv[i], 4e-16, 4.0));
        CHECK(close_rel(vs[i], vv[i], 4e-16, 4.0));
    }
}

TEST_CASE("matvec_q8 agrees across backends") {
    if (!require_avx2()) return;
    rng::Rng rng(1007);
    const std::size_t rows = 50, cols = 103;
    std::vector<std::int8_t> w(rows * cols);
    for (auto& q : w) q = std::int8_t(int(rng.below(255)) - 127);
    const auto b = random_vec(rows, rng);
    const auto x = random_vec(cols, rng);
    std::vector<double> ys(rows), yv(rows);
    k::scalar::matvec_q8(w.data(), 0.0123, b.data(), rows, cols, x.data(),
                         ys.data());
    k::avx2::matvec_q8(w.data(), 0.0123, b.data(), rows, cols, x.data(),
                       yv.data());
    for (std::size_t i = 0; i < rows; ++i)
        CHECK(close_rel(ys[i], yv[i], 1e-13, 1e-13));
}

TEST_CASE("gauss_band clamps to the grid and covers all relevant bins") {
    const double dc = 0.5, inv_two_phi2 = 1.0 / (2.0 * 0.8 * 0.8);
    // Off-grid delay far left: empty band.
    auto [lo, hi] = k::gauss_band(-50.0, 0.0, dc, 100, inv_two_phi2);
    CHECK(lo >= hi);
    // Centered delay: band contains the center bin and excludes only
    // negligible contributions.
    std::tie(lo, hi) = k::gauss_band(25.0, 0.0, dc, 100, inv_two_phi2);
    CHECK(lo <= 50);
    CHECK(hi > 50);
    const double radius = std::sqrt(k::kGaussArgMax / inv_two_phi2);
    for (std::ptrdiff_t j = 0; j < 100; ++j) {
        const double d = std::abs(25.0 - double(j) * dc);
        if (d < radius - 1e-9) {
            CHECK(j >= lo);
            CHECK(j < hi);
        }
    }
}

TEST_CASE("backend forcing and reset") {
    const k::Backend initial = k::active_backend();
    k::force_backend(k::Backend::Scalar);
    CHECK(k::active_backend() == k::Backend::Scalar);
    CHECK(std::string(k::backend_name()) == "scalar");
    if (k::avx2_available()) {
        k::force_backend(k::Backend::Avx2);
        CHECK(k::active_backend() == k::Backend::Avx2);
        // Dispatched call runs the forced backend.
        const double x = 1.5, want = std::exp(1.5);
        double y = 0.0;
        k::exp_v(&x, &y, 1);
        CHECK(close_rel(y, want, 1e-15));
    } else {
        CHECK_THROWS_AS(k::force_backend(k::Backend::Avx2),
                        std::invalid_argument);
    }
    k::reset_backend();
    CHECK(k::active_backend() == initial);
}
