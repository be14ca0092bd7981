#pragma once

// Deterministic random-number machinery. The generator (mt19937_64) and all
// samplers are fully specified here rather than delegated to the standard
// distributions, whose algorithms differ between standard libraries; results
// are therefore bit-identical across platforms for a given seed.
//
// Substream rule: stream k of master seed s is seeded with
// splitmix64(s + 0x9e3779b97f4a7c15 * (k+1)). Consumers that parallelize
// across substreams reproduce the sequential result by construction.

#include <cmath>
#include <cstdint>
#include <random>

#include "lexis/core.hpp"

namespace lexis {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(master + 0x9e3779b97f4a7c15ULL * (stream + 1));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return 1.0 - uniform(); }

    // Standard normal via Box-Muller. The pair is consumed even though only
    // one value is returned, keeping the draw count per call fixed.
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    double exponential(double rate) {
        if (rate <= 0.0) throw numeric_error("exponential rate must be > 0");
        return -std::log(uniform_pos()) / rate;
    }

    // Index into a weight vector by inverse CDF. Weights need not sum to 1.
    int categorical(const double* weights, int n) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += weights[i];
        if (total <= 0.0) throw numeric_error("categorical weights sum to zero");
        double u = uniform() * total;
        for (int i = 0; i < n; ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return n - 1;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace lexis
