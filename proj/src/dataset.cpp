#include "detune/dataset.hpp"

#include "detune/errors.hpp"
#include "detune/fsio.hpp"
#include "detune/physics.hpp"
#include "detune/rng.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <utility>

namespace detune::dataset {

using nlohmann::json;

namespace {

// derive() j-argument separating the delay/jitter/label streams of the two
// splits. Values are part of the reproducibility contract.
constexpr std::uint64_t kTrainTag = 0;
constexpr std::uint64_t kTestTag = 1;

physics::Trajectory draw_delays(const config::ExperimentConfig& cfg,
                                const physics::DelayCdf* table, double delta,
                                std::uint64_t seed) {
    if (cfg.dataset.generator == "jump") {
        const physics::TlsParams p{delta, cfg.physics.omega, cfg.physics.gamma};
        return physics::sample_delays_jump(p, cfg.dataset.n_delays,
                                           cfg.dataset.jump_dt, seed);
    }
    return physics::sample_delays_analytic(*table, cfg.dataset.n_delays, seed);
}

physics::DelayCdf make_table(const config::ExperimentConfig& cfg, double delta) {
    const physics::TlsParams p{delta, cfg.physics.omega, cfg.physics.gamma};
    return physics::delay_cdf_table(
        p, physics::kDefaultTauMaxOverGamma / cfg.physics.gamma,
        physics::kDefaultCdfPoints);
}

void push_example(LabeledSet& set, const config::ExperimentConfig& cfg,
                  physics::Trajectory traj, double delta, std::uint64_t index,
                  std::uint64_t split_tag, bool noisy_labels) {
    if (cfg.dataset.sigma_tau > 0.0)
        traj = physics::add_time_jitter(
            traj, cfg.dataset.sigma_tau,
            rng::derive(cfg.seed, rng::Stream::TimeJitter, index, split_tag));

    double label = delta;
    if (noisy_labels && cfg.dataset.sigma_y > 0.0)
        label = physics::add_label_noise(
            delta, cfg.dataset.sigma_y,
            rng::derive(cfg.seed, rng::Stream::LabelNoise, index, split_tag));

    set.examples.push_back({std::move(traj.delays), label});
    set.meta.push_back({delta, label, traj.seed, traj.generator});
}

} // namespace

std::vector<double> test_delta_grid(const config::ExperimentConfig& cfg) {
    const std::size_t n = cfg.dataset.n_test_deltas;
    std::vector<double> grid(n);
    const double lo = cfg.physics.delta_min, hi = cfg.physics.delta_max;
    for (std::size_t i = 0; i < n; ++i)
        grid[i] = lo + (hi - lo) * double(i) / double(n - 1);
    return grid;
}

LabeledSet generate_train_set(const config::ExperimentConfig& cfg) {
    cfg.validate();
    LabeledSet set;
    set.examples.reserve(cfg.dataset.n_train);
    set.meta.reserve(cfg.dataset.n_train);
    const bool analytic = cfg.dataset.generator == "analytic";

    for (std::size_t i = 0; i < cfg.dataset.n_train; ++i) {
        rng::Rng delta_rng(cfg.seed, rng::Stream::DeltaDraw, i, kTrainTag);
        const double delta =
            delta_rng.uniform(cfg.physics.delta_min, cfg.physics.delta_max);

        physics::DelayCdf table;
        if (analytic) table = make_table(cfg, delta);
        const std::uint64_t traj_seed =
            rng::derive(cfg.seed, rng::Stream::TrajDelays, i, kTrainTag);
        push_example(set, cfg,
                     draw_delays(cfg, analytic ? &table : nullptr, delta,
                                 traj_seed),
                     delta, i, kTrainTag, /*noisy_labels=*/true);
    }
    return set;
}

LabeledSet generate_test_set(const config::ExperimentConfig& cfg) {
    cfg.validate();
    LabeledSet set;
    const std::vector<double> grid = test_delta_grid(cfg);
    const std::size_t per = cfg.dataset.n_test_per_delta;
    set.examples.reserve(grid.size() * per);
    set.meta.reserve(grid.size() * per);
    const bool analytic = cfg.dataset.generator == "analytic";

    for (std::size_t d = 0; d < grid.size(); ++d) {
        physics::DelayCdf table;
        if (analytic) table = make_table(cfg, grid[d]); // shared per detuning
        for (std::size_t k = 0; k < per; ++k) {
            const std::uint64_t i = d * per + k;
            const std::uint64_t traj_seed =
                rng::derive(cfg.seed, rng::Stream::TrajDelays, i, kTestTag);
            push_example(set, cfg,
                         draw_delays(cfg, analytic ? &table : nullptr, grid[d],
                                     traj_seed),
                         grid[d], i, kTestTag, /*noisy_labels=*/false);
        }
    }
    return set;
}

void write_jsonl(const LabeledSet& set, const config::ExperimentConfig& cfg,
                 const std::string& split, const std::string& path) {
    DETUNE_REQUIRE(set.examples.size() == set.meta.size(),
                   "LabeledSet examples/meta size mismatch");
    fsio::write_file_atomic(path, [&](std::ostream& out) {
        for (std::size_t i = 0; i < set.examples.size(); ++i) {
            json line;
            line["delays"] = set.examples[i].delays;
            line["delta"] = set.examples[i].label;
            line["delta_true"] = set.meta[i].delta_true;
            line["omega"] = cfg.physics.omega;
            line["gamma"] = cfg.physics.gamma;
            line["gen"] = set.meta[i].generator;
            line["seed"] = set.meta[i].seed;
            out << line.dump() << '\n';
        }
    });

    json manifest;
    manifest["split"] = split;
    manifest["count"] = set.examples.size();
    manifest["n_delays"] = cfg.dataset.n_delays;
    manifest["master_seed"] = cfg.seed;
    manifest["config_hash"] = config::config_hash(cfg);
    manifest["sigma_tau"] = cfg.dataset.sigma_tau;
    manifest["sigma_y"] = cfg.dataset.sigma_y;
    manifest["delta_grid"] = test_delta_grid(cfg);
    fsio::write_file_atomic(path + ".manifest.json", [&](std::ostream& out) {
        out << manifest.dump(2) << '\n';
    });
}

LabeledSet read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path);
    LabeledSet set;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": bad JSONL record: " + e.what());
        }
        try {
            nn::Example ex;
            ex.delays = j.at("delays").get<std::vector<double>>();
            ex.label = j.at("delta").get<double>();
            ExampleMeta meta;
            meta.delta_true = j.at("delta_true").get<double>();
            meta.delta_label = ex.label;
            meta.seed = j.at("seed").get<std::uint64_t>();
            meta.generator = j.at("gen").get<std::string>();
            set.examples.push_back(std::move(ex));
            set.meta.push_back(std::move(meta));
        } catch (const json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) +
                          ": missing or mistyped field: " + e.what());
        }
    }
    return set;
}

} // namespace detune::dataset
