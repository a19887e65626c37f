#include "detune/config.hpp"

#include "detune/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>

namespace detune::config {

using nlohmann::json;

nn::Loss ExperimentConfig::loss_kind() const {
    if (model.loss == "rmse") return nn::Loss::Rmse;
    if (model.loss == "msle") return nn::Loss::Msle;
    if (model.loss == "nll") return nn::Loss::GaussianNll;
    throw ConfigError("unknown loss '" + model.loss + "'");
}

nn::Head ExperimentConfig::head_kind() const {
    if (model.head == "scalar") return nn::Head::Scalar;
    if (model.head == "gaussian") return nn::Head::Gaussian;
    throw ConfigError("unknown head '" + model.head + "'");
}

void ExperimentConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw ConfigError(msg); };

    if (!(physics.gamma > 0.0) || !std::isfinite(physics.gamma))
        fail("physics.gamma must be positive");
    if (!std::isfinite(physics.omega)) fail("physics.omega must be finite");
    if (!(physics.delta_max > physics.delta_min))
        fail("physics.delta_max must exceed physics.delta_min");

    if (dataset.n_delays < 1) fail("dataset.n_delays must be >= 1");
    if (dataset.n_test_deltas < 2) fail("dataset.n_test_deltas must be >= 2");
    if (dataset.n_test_per_delta < 1)
        fail("dataset.n_test_per_delta must be >= 1");
    if (dataset.generator != "analytic" && dataset.generator != "jump")
        fail("dataset.generator must be 'analytic' or 'jump'");
    if (dataset.jump_dt <= 0.0 || dataset.jump_dt > 0.01 / physics.gamma)
        fail("dataset.jump_dt must lie in (0, 0.01/gamma]");
    if (dataset.sigma_tau < 0.0) fail("dataset.sigma_tau must be >= 0");
    if (dataset.sigma_y < 0.0) fail("dataset.sigma_y must be >= 0");

    if (model.n_bins < 2) fail("model.n_bins must be >= 2");
    if (model.hidden.empty()) fail("model.hidden must not be empty");
    if (model.dropout < 0.0 || model.dropout >= 1.0)
        fail("model.dropout must lie in [0, 1)");
    if (model.lr <= 0.0) fail("model.lr must be > 0");
    if (model.beta1 < 0.0 || model.beta1 >= 1.0)
        fail("model.beta1 must lie in [0, 1)");
    if (model.beta2 < 0.0 || model.beta2 >= 1.0)
        fail("model.beta2 must lie in [0, 1)");
    if (model.epochs < 1) fail("model.epochs must be >= 1");
    if (model.batch_size < 1) fail("model.batch_size must be >= 1");
    if (model.patience < 1) fail("model.patience must be >= 1");

    const nn::Head head = head_kind();
    const nn::Loss loss = loss_kind();
    if ((head == nn::Head::Gaussian) != (loss == nn::Loss::GaussianNll))
        fail("model.head and model.loss are inconsistent: the Gaussian head "
             "pairs with 'nll', the scalar head with 'rmse'/'msle'");

    if (ensemble.m < 1) fail("ensemble.m must be >= 1");
    if (ensemble.epsilon < 0.0) fail("ensemble.epsilon must be >= 0");

    if (bayes.n_grid < 2) fail("bayes.n_grid must be >= 2");
    if (bayes.cdf_points < 2) fail("bayes.cdf_points must be >= 2");
    if (bayes.tau_max <= 0.0) fail("bayes.tau_max must be > 0");

    if (tuner.n_trials < 1) fail("tuner.n_trials must be >= 1");
    if (ood.n_trajectories < 1) fail("ood.n_trajectories must be >= 1");
    for (const double om : ood.omega_list)
        if (!(om > 0.0)) fail("ood.omega_list entries must be positive");
    for (const double st : ood.sigma_tau_list)
        if (st < 0.0) fail("ood.sigma_tau_list entries must be >= 0");
    if (timing.counts.empty()) fail("timing.counts must not be empty");
    if (timing.repetitions < 10)
        fail("timing.repetitions must be >= 10 for stable medians");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

namespace {

// Rejects keys that are not consumed, so config typos cannot silently fall
// back to defaults.
void check_keys(const json& j, const std::set<std::string>& known,
                const std::string& scope) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key))
            throw ConfigError("unknown config key '" + scope + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

ExperimentConfig parse(const json& j) {
    ExperimentConfig cfg;
    check_keys(j,
               {"seed", "physics", "dataset", "model", "ensemble", "bayes",
                "tuner", "ood", "timing"},
               "");
    read(j, "seed", cfg.seed);

    if (j.contains("physics")) {
        const json& p = j.at("physics");
        check_keys(p, {"omega", "gamma", "delta_min", "delta_max"}, "physics.");
        read(p, "omega", cfg.physics.omega);
        read(p, "gamma", cfg.physics.gamma);
        read(p, "delta_min", cfg.physics.delta_min);
        read(p, "delta_max", cfg.physics.delta_max);
    }
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d,
                   {"n_train", "n_delays", "n_test_deltas", "n_test_per_delta",
                    "generator", "jump_dt", "sigma_tau", "sigma_y"},
                   "dataset.");
        read(d, "n_train", cfg.dataset.n_train);
        read(d, "n_delays", cfg.dataset.n_delays);
        read(d, "n_test_deltas", cfg.dataset.n_test_deltas);
        read(d, "n_test_per_delta", cfg.dataset.n_test_per_delta);
        read(d, "generator", cfg.dataset.generator);
        read(d, "jump_dt", cfg.dataset.jump_dt);
        read(d, "sigma_tau", cfg.dataset.sigma_tau);
        read(d, "sigma_y", cfg.dataset.sigma_y);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"n_bins", "hidden", "head", "loss", "dropout", "lr",
                    "beta1", "beta2", "epochs", "batch_size", "patience"},
                   "model.");
        read(m, "n_bins", cfg.model.n_bins);
        read(m, "hidden", cfg.model.hidden);
        read(m, "head", cfg.model.head);
        read(m, "loss", cfg.model.loss);
        read(m, "dropout", cfg.model.dropout);
        read(m, "lr", cfg.model.lr);
        read(m, "beta1", cfg.model.beta1);
        read(m, "beta2", cfg.model.beta2);
        read(m, "epochs", cfg.model.epochs);
        read(m, "batch_size", cfg.model.batch_size);
        read(m, "patience", cfg.model.patience);
    }
    if (j.contains("ensemble")) {
        const json& e = j.at("ensemble");
        check_keys(e, {"m", "adversarial", "epsilon", "printed_variance_form"},
                   "ensemble.");
        read(e, "m", cfg.ensemble.m);
        read(e, "adversarial", cfg.ensemble.adversarial);
        read(e, "epsilon", cfg.ensemble.epsilon);
        read(e, "printed_variance_form", cfg.ensemble.printed_variance_form);
    }
    if (j.contains("bayes")) {
        const json& b = j.at("bayes");
        check_keys(b, {"n_grid", "cdf_points", "tau_max"}, "bayes.");
        read(b, "n_grid", cfg.bayes.n_grid);
        read(b, "cdf_points", cfg.bayes.cdf_points);
        read(b, "tau_max", cfg.bayes.tau_max);
    }
    if (j.contains("tuner")) {
        const json& t = j.at("tuner");
        check_keys(t, {"n_trials"}, "tuner.");
        read(t, "n_trials", cfg.tuner.n_trials);
    }
    if (j.contains("ood")) {
        const json& o = j.at("ood");
        check_keys(o, {"omega_list", "sigma_tau_list", "n_trajectories"},
                   "ood.");
        read(o, "omega_list", cfg.ood.omega_list);
        read(o, "sigma_tau_list", cfg.ood.sigma_tau_list);
        read(o, "n_trajectories", cfg.ood.n_trajectories);
    }
    if (j.contains("timing")) {
        const json& t = j.at("timing");
        check_keys(t, {"counts", "repetitions"}, "timing.");
        read(t, "counts", cfg.timing.counts);
        read(t, "repetitions", cfg.timing.repetitions);
    }
    cfg.validate();
    return cfg;
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["physics"] = {{"omega", c.physics.omega},
                    {"gamma", c.physics.gamma},
                    {"delta_min", c.physics.delta_min},
                    {"delta_max", c.physics.delta_max}};
    j["dataset"] = {{"n_train", c.dataset.n_train},
                    {"n_delays", c.dataset.n_delays},
                    {"n_test_deltas", c.dataset.n_test_deltas},
                    {"n_test_per_delta", c.dataset.n_test_per_delta},
                    {"generator", c.dataset.generator},
                    {"jump_dt", c.dataset.jump_dt},
                    {"sigma_tau", c.dataset.sigma_tau},
                    {"sigma_y", c.dataset.sigma_y}};
    j["model"] = {{"n_bins", c.model.n_bins},
                  {"hidden", c.model.hidden},
                  {"head", c.model.head},
                  {"loss", c.model.loss},
                  {"dropout", c.model.dropout},
                  {"lr", c.model.lr},
                  {"beta1", c.model.beta1},
                  {"beta2", c.model.beta2},
                  {"epochs", c.model.epochs},
                  {"batch_size", c.model.batch_size},
                  {"patience", c.model.patience}};
    j["ensemble"] = {{"m", c.ensemble.m},
                     {"adversarial", c.ensemble.adversarial},
                     {"epsilon", c.ensemble.epsilon},
                     {"printed_variance_form", c.ensemble.printed_variance_form}};
    j["bayes"] = {{"n_grid", c.bayes.n_grid},
                  {"cdf_points", c.bayes.cdf_points},
                  {"tau_max", c.bayes.tau_max}};
    j["tuner"] = {{"n_trials", c.tuner.n_trials}};
    j["ood"] = {{"omega_list", c.ood.omega_list},
                {"sigma_tau_list", c.ood.sigma_tau_list},
                {"n_trajectories", c.ood.n_trajectories}};
    j["timing"] = {{"counts", c.timing.counts},
                   {"repetitions", c.timing.repetitions}};
    return j;
}

} // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        return parse(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config value: ") + e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string to_json_text(const ExperimentConfig& cfg) {
    return to_json(cfg).dump(2);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string canon = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detune::config
