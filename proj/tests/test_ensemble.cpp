#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "detune/ensemble.hpp"
#include "detune/errors.hpp"
#include "detune/nn.hpp"
#include "detune/physics.hpp"
#include "detune/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace detune;
using ensemble::DeepEnsemble;
using nn::Example;

namespace {

// A member whose every weight is zero emits exactly its head biases:
// mu = b_mu and sigma^2 = exp(b_raw) + 1e-6, independent of the input.
nn::MlpModel constant_member(double mu, double sigma2) {
    nn::MlpModel m =
        nn::make_model(8, {4}, nn::Head::Gaussian, 0.0, 0.0, 100.0, 1);
    for (auto& layer : m.layers) {
        std::fill(layer.w.begin(), layer.w.end(), 0.0);
        std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
    m.layers.back().b[0] = mu;
    m.layers.back().b[1] = std::log(sigma2 - 1e-6);
    return m;
}

std::vector<Example> physics_data(std::size_t n, std::uint64_t seed) {
    std::vector<Example> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        rng::Rng label_rng(seed, rng::Stream::DeltaDraw, i);
        const double delta = label_rng.uniform(0.0, 2.1);
        const physics::TlsParams p{delta, 1.0, 1.0};
        data[i].delays =
            physics::sample_delays_analytic(
                p, 16, rng::derive(seed, rng::Stream::TrajDelays, i))
                .delays;
        data[i].label = delta;
    }
    return data;
}

ensemble::EnsembleTrainConfig small_config(std::size_t members) {
    ensemble::EnsembleTrainConfig cfg;
    cfg.n_members = members;
    cfg.n_bins = 24;
    cfg.hidden = {10, 6};
    cfg.train.lr = 2e-3;
    cfg.train.epochs = 3;
    cfg.train.patience = 3;
    cfg.train.batch_size = 32;
    return cfg;
}

bool models_identical(const nn::MlpModel& a, const nn::MlpModel& b) {
    if (nn::n_params(a) != nn::n_params(b)) return false;
    for (std::size_t i = 0; i < nn::n_params(a); ++i)
        if (nn::get_param(a, i) != nn::get_param(b, i)) return false;
    return true;
}

} // namespace

TEST_CASE("mixture moments: closed two-member case and the decomposition") {
    DeepEnsemble e;
    e.members.push_back(constant_member(0.5, 1.0));
    e.members.push_back(constant_member(0.6, 2.0));

    const auto pred = ensemble::predict(e, {1.0, 2.0});
    REQUIRE(pred.members.size() == 2);
    const double mu0 = pred.members[0].mu, mu1 = pred.members[1].mu;
    const double s0 = *pred.members[0].sigma2, s1 = *pred.members[1].sigma2;
    CHECK(mu0 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s1 == doctest::Approx(2.0).epsilon(1e-9));

    const double mu = 0.5 * (mu0 + mu1);
    CHECK(pred.mu == doctest::Approx(mu).epsilon(1e-15));

    // Mixture variance: mean(sigma_m^2 + mu_m^2) - mu^2 ...
    const double direct =
        0.5 * ((s0 + mu0 * mu0) + (s1 + mu1 * mu1)) - mu * mu;
    CHECK(pred.sigma2 == doctest::Approx(direct).epsilon(1e-14));
    // ... equals mean within-member variance plus between-member spread.
    const double mean_s2 = 0.5 * (s0 + s1);
    const double var_mu =
        0.5 * ((mu0 - mu) * (mu0 - mu) + (mu1 - mu) * (mu1 - mu));
    CHECK(pred.sigma2 == doctest::Approx(mean_s2 + var_mu).epsilon(1e-12));
}

TEST_CASE("printed variance form subtracts the mean, not its square") {
    DeepEnsemble e;
    e.members.push_back(constant_member(0.5, 1.0));
    e.members.push_back(constant_member(0.6, 2.0));

    const auto correct = ensemble::predict(e, {1.0}, false);
    const auto printed = ensemble::predict(e, {1.0}, true);
    CHECK(correct.mu == printed.mu);
    // Same second-moment term; corrections differ by mu - mu^2.
    const double shift = correct.mu - correct.mu * correct.mu;
    CHECK(printed.sigma2 ==
          doctest::Approx(correct.sigma2 - shift).epsilon(1e-12));
    CHECK(printed.sigma2 != correct.sigma2);
}

TEST_CASE("a single-member ensemble reduces to that member") {
    DeepEnsemble e;
    e.members.push_back(constant_member(1.3, 0.7));
    const auto pred = ensemble::predict(e, {3.0, 4.0, 5.0});
    const auto solo = nn::predict(e.members[0], {3.0, 4.0, 5.0});
    CHECK(pred.mu == solo.mu);
    CHECK(pred.sigma2 == doctest::Approx(*solo.sigma2).epsilon(1e-12));
}

TEST_CASE("mixture moments match Monte Carlo sampling of the mixture") {
    DeepEnsemble e;
    e.members.push_back(constant_member(0.3, 0.5));
    e.members.push_back(constant_member(1.1, 1.5));
    e.members.push_back(constant_member(1.9, 0.2));
    const auto pred = ensemble::predict(e, {1.0});

    rng::Rng rng(4711);
    const std::size_t n = 200000;
    double acc = 0.0, acc2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = pred.members[rng.below(3)];
        const double x = p.mu + std::sqrt(*p.sigma2) * rng.normal();
        acc += x;
        acc2 += x * x;
    }
    const double mc_mu = acc / double(n);
    const double mc_var = acc2 / double(n) - mc_mu * mc_mu;
    // 4-sigma bands of the Monte Carlo error.
    CHECK(std::abs(mc_mu - pred.mu) <
          4.0 * std::sqrt(pred.sigma2 / double(n)));
    const double se_var = pred.sigma2 * std::sqrt(2.0 / double(n));
    CHECK(std::abs(mc_var - pred.sigma2) < 6.0 * se_var);
}

TEST_CASE("ensemble training: distinct seeded members, reproducible run") {
    const auto data = physics_data(80, 51);
    const auto cfg = small_config(3);

    std::vector<nn::TrainLog> logs;
    const DeepEnsemble e = ensemble::train_ensemble(data, cfg, 42, &logs);
    REQUIRE(e.members.size() == 3);
    REQUIRE(e.member_seeds.size() == 3);
    REQUIRE(logs.size() == 3);
    CHECK_FALSE(e.adversarial);
    CHECK(e.epsilon == 0.0);

    for (std::size_t m = 0; m < 3; ++m)
        CHECK(e.member_seeds[m] == rng::derive(42, rng::Stream::Member, m));
    CHECK(std::set<std::uint64_t>(e.member_seeds.begin(),
                                  e.member_seeds.end())
              .size() == 3);

    // Members genuinely differ (init, split and shuffles all vary by seed).
    CHECK_FALSE(models_identical(e.members[0], e.members[1]));
    CHECK_FALSE(models_identical(e.members[1], e.members[2]));
    for (const auto& log : logs) {
        CHECK(!log.epochs.empty());
        for (const auto& row : log.epochs) CHECK(std::isfinite(row.val_loss));
    }

    // Gaussian heads are forced regardless of the requested loss.
    const auto pred = ensemble::predict(e, data[0].delays);
    CHECK(pred.sigma2 > 0.0);

    const DeepEnsemble e2 = ensemble::train_ensemble(data, cfg, 42);
    for (std::size_t m = 0; m < 3; ++m)
        CHECK(models_identical(e.members[m], e2.members[m]));

    const DeepEnsemble e3 = ensemble::train_ensemble(data, cfg, 43);
    CHECK_FALSE(models_identical(e.members[0], e3.members[0]));
}

#ifdef _OPENMP
TEST_CASE("ensemble training is invariant to the thread count") {
    const auto data = physics_data(60, 53);
    const auto cfg = small_config(3);

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const DeepEnsemble serial = ensemble::train_ensemble(data, cfg, 7);
    omp_set_num_threads(3);
    const DeepEnsemble parallel = ensemble::train_ensemble(data, cfg, 7);
    omp_set_num_threads(saved);

    for (std::size_t m = 0; m < 3; ++m)
        CHECK(models_identical(serial.members[m], parallel.members[m]));
}
#endif

TEST_CASE("FGSM step: exact signs, zero gradient, zero epsilon") {
    const std::vector<double> x = {1.0, 2.0, 3.0};
    const std::vector<double> g = {0.5, 0.0, -2.0};
    CHECK(ensemble::fgsm_example(x, g, 1.0) ==
          std::vector<double>{2.0, 2.0, 2.0});
    CHECK(ensemble::fgsm_example(x, g, 0.25) ==
          std::vector<double>{1.25, 2.0, 2.75});
    CHECK(ensemble::fgsm_example(x, g, 0.0) == x);
    // Perturbations may leave the physical domain; that is intentional.
    CHECK(ensemble::fgsm_example({0.1}, {-1.0}, 1.0).front() ==
          doctest::Approx(-0.9));
    CHECK(ensemble::fgsm_example({0.1}, {1.0}, 1.0).front() ==
          doctest::Approx(1.1));

    CHECK_THROWS_AS(ensemble::fgsm_example({1.0}, {1.0, 2.0}, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(ensemble::fgsm_example(x, g, -0.5),
                    std::invalid_argument);
}

TEST_CASE("the FGSM direction increases the loss of a trained member") {
    const auto data = physics_data(120, 57);
    auto cfg = small_config(1);
    cfg.train.epochs = 15;
    cfg.train.patience = 15;
    const DeepEnsemble e = ensemble::train_ensemble(data, cfg, 61);
    const nn::MlpModel& model = e.members[0];

    std::vector<Example> batch(data.begin(), data.begin() + 32);
    const auto res = nn::grad(model, batch, nn::Loss::GaussianNll,
                              /*training=*/false, 0, /*want_input_grads=*/true);

    std::vector<Example> shifted = batch;
    for (std::size_t i = 0; i < shifted.size(); ++i)
        shifted[i].delays = ensemble::fgsm_example(shifted[i].delays,
                                                   res.input_grads[i], 1.0);
    const auto adv = nn::grad(model, shifted, nn::Loss::GaussianNll,
                              /*training=*/false, 0);
    CHECK(adv.loss > res.loss);
}

TEST_CASE("adversarially trained ensemble records its recipe") {
    const auto data = physics_data(60, 63);
    auto cfg = small_config(2);
    cfg.adversarial = true;
    cfg.epsilon = 1.0;
    const DeepEnsemble e = ensemble::train_ensemble(data, cfg, 65);
    CHECK(e.adversarial);
    CHECK(e.epsilon == 1.0);
    CHECK(std::isfinite(ensemble::predict(e, data[0].delays).mu));
}

TEST_CASE("ensemble quantization quantizes every member, keeps metadata") {
    const auto data = physics_data(60, 67);
    auto cfg = small_config(2);
    cfg.adversarial = true;
    const DeepEnsemble e = ensemble::train_ensemble(data, cfg, 69);
    const DeepEnsemble q = ensemble::quantize(e);

    REQUIRE(q.members.size() == e.members.size());
    for (const auto& m : q.members) {
        CHECK(m.precision == nn::Precision::Int8);
        CHECK(m.layers.empty());
        CHECK(!m.qlayers.empty());
    }
    CHECK(q.member_seeds == e.member_seeds);
    CHECK(q.adversarial == e.adversarial);
    CHECK(q.epsilon == e.epsilon);

    const auto pf = ensemble::predict(e, data[0].delays);
    const auto pq = ensemble::predict(q, data[0].delays);
    CHECK(std::isfinite(pq.mu));
    CHECK(pq.sigma2 > 0.0);
    CHECK(std::abs(pq.mu - pf.mu) < 0.5); // int8 stays near the float model
}

TEST_CASE("ensemble directory round-trip: float32 rounding then exactness") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "detune_test_ensemble";
    fs::remove_all(dir);

    const auto data = physics_data(60, 71);
    const DeepEnsemble e = ensemble::train_ensemble(data, small_config(3), 73);
    ensemble::save_ensemble(e, dir.string());

    CHECK(fs::exists(dir / "ensemble.json"));
    CHECK(fs::exists(dir / "member_00.model.json"));
    CHECK(fs::exists(dir / "member_02.model.json"));

    const DeepEnsemble back = ensemble::load_ensemble(dir.string());
    REQUIRE(back.members.size() == 3);
    CHECK(back.member_seeds == e.member_seeds);
    CHECK(back.adversarial == e.adversarial);
    CHECK(back.epsilon == e.epsilon);
    // Weights were rounded through binary32 on disk.
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t i = 0; i < nn::n_params(e.members[m]); ++i)
            CHECK(nn::get_param(back.members[m], i) ==
                  double(float(nn::get_param(e.members[m], i))));

    // A second round-trip is exact: binary32 values persist unchanged.
    const auto dir2 = fs::temp_directory_path() / "detune_test_ensemble2";
    fs::remove_all(dir2);
    ensemble::save_ensemble(back, dir2.string());
    const DeepEnsemble back2 = ensemble::load_ensemble(dir2.string());
    for (std::size_t m = 0; m < 3; ++m)
        CHECK(models_identical(back.members[m], back2.members[m]));
    const auto delays = data[0].delays;
    CHECK(ensemble::predict(back2, delays).mu ==
          ensemble::predict(back, delays).mu);

    fs::remove_all(dir);
    fs::remove_all(dir2);

    CHECK_THROWS_AS(ensemble::load_ensemble("/nonexistent/ensemble/dir"),
                    IoError);
}

TEST_CASE("ensemble interface validation") {
    DeepEnsemble empty;
    CHECK_THROWS_AS(ensemble::predict(empty, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(ensemble::save_ensemble(empty, "/tmp/unused"),
                    std::invalid_argument);

    // Scalar-head members cannot form a Gaussian mixture.
    DeepEnsemble scalar;
    scalar.members.push_back(
        nn::make_model(8, {4}, nn::Head::Scalar, 0.0, 0.0, 100.0, 1));
    CHECK_THROWS_AS(ensemble::predict(scalar, {1.0}), std::invalid_argument);

    const auto data = physics_data(60, 75);
    auto cfg = small_config(0);
    CHECK_THROWS_AS(ensemble::train_ensemble(data, cfg, 1),
                    std::invalid_argument);
}
