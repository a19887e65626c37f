#pragma once

#include "detune/config.hpp"
#include "detune/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace detune::dataset {

// Per-example provenance kept alongside the training tensors. delta_true is
// the detuning the delays were generated from; delta_label is what the network
// trains on (equal to delta_true unless label noise is enabled).
struct ExampleMeta {
    double delta_true = 0.0;
    double delta_label = 0.0;
    std::uint64_t seed = 0; // delay-draw stream seed
    std::string generator;  // "analytic" or "jump"
};

struct LabeledSet {
    std::vector<nn::Example> examples;
    std::vector<ExampleMeta> meta;
};

// The evaluation grid: cfg.dataset.n_test_deltas detunings equally spaced on
// [delta_min, delta_max], endpoints included.
std::vector<double> test_delta_grid(const config::ExperimentConfig& cfg);

// Training split: per example, delta ~ U(delta_min, delta_max), then
// n_delays waiting times, optional Gaussian time jitter (sigma_tau) and label
// noise (sigma_y). Every random draw comes from a stream derived from
// (cfg.seed, role, example index), so the set is byte-reproducible and
// independent of generation order.
LabeledSet generate_train_set(const config::ExperimentConfig& cfg);

// Evaluation split: n_test_per_delta trajectories at each grid detuning,
// jittered like the training data but always labeled with the true detuning.
// Example index i = grid_index * n_test_per_delta + repeat; the delay streams
// are disambiguated from the training split by the derive() j-argument.
LabeledSet generate_test_set(const config::ExperimentConfig& cfg);

// One example per line: {"delays": [...], "delta": label, "delta_true": ...,
// "omega": ..., "gamma": ..., "gen": "...", "seed": ...}. A sidecar
// <path>.manifest.json records the split name, counts, master seed, config
// hash and noise levels.
void write_jsonl(const LabeledSet& set, const config::ExperimentConfig& cfg,
                 const std::string& split, const std::string& path);

LabeledSet read_jsonl(const std::string& path);

} // namespace detune::dataset
