#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace detune::rng {

// Deterministic, platform-independent RNG. The standard <random> engines are
// portable but the distributions are implementation-defined, which would break
// the byte-identical-artifacts contract across toolchains, so both the
// generator and the transforms live here.
//
// Every consumer draws from a named stream derived from (master seed, role,
// indices). Streams are independent of thread count and evaluation order,
// which is what makes dataset generation and training reproducible under
// OpenMP.

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Roles for derived streams. Values are part of the reproducibility contract:
// renumbering them changes every generated artifact.
enum class Stream : std::uint64_t {
    TrajDelays = 1,  // analytic / jump delay draws, per example
    TimeJitter = 2,  // Gaussian jitter on delays, per example
    LabelNoise = 3,  // Gaussian noise on labels, per example
    DeltaDraw = 4,   // training-split detuning draw, per example
    Init = 5,        // weight init, per member / per tensor
    Shuffle = 6,     // epoch shuffles and the train/val split
    Dropout = 7,     // dropout masks, per example per epoch
    Member = 8,      // ensemble member seeds
    Tuner = 9,       // random-search hyperparameter draws
    McOracle = 10,   // Monte-Carlo test oracles
    Repeat = 11,     // seeded experiment repeats
};

inline constexpr std::uint64_t derive(std::uint64_t master, Stream role,
                                      std::uint64_t i = 0,
                                      std::uint64_t j = 0) noexcept {
    std::uint64_t h = mix64(master + 0x9E3779B97F4A7C15ULL);
    h = mix64(h ^ (static_cast<std::uint64_t>(role) + 0xBF58476D1CE4E5B9ULL));
    h = mix64(h ^ (i + 0x94D049BB133111EBULL));
    h = mix64(h ^ (j + 0xD6E8FEB86659FD93ULL));
    return h;
}

// xoshiro256++ seeded through splitmix64; passes BigCrush, 2^256-1 period.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            sm += 0x9E3779B97F4A7C15ULL;
            word = mix64(sm);
        }
    }

    Rng(std::uint64_t master, Stream role, std::uint64_t i = 0,
        std::uint64_t j = 0) noexcept
        : Rng(derive(master, role, i, j)) {}

    std::uint64_t next() noexcept {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform01() noexcept { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept {
        return lo + (hi - lo) * uniform01();
    }

    // Unbiased integer in [0, n) by rejection on the top of the range.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; the spare is cached.
    double normal() noexcept {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01(); // (0, 1]: keeps log() finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) noexcept {
        return mean + stddev * normal();
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace detune::rng
