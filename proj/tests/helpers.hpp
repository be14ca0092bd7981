#pragma once

// Shared fixture builders for the test suites: synthetic Gompertz surfaces,
// exact Poisson/Binomial samplers for self-generation tests, and temp-file
// scaffolding.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lexis/models.hpp"
#include "lexis/rng.hpp"
#include "lexis/surface.hpp"

namespace testutil {

// Gompertz surface with constant improvement: log m = a + b(x-x0) - d(t-t0),
// deaths set to E*m exactly (no sampling noise).
inline lexis::MortalitySurface gompertz_surface(int age_lo, int age_hi, int yr_lo,
                                                int yr_hi, double a = std::log(0.01),
                                                double b = 0.09, double d = 0.01,
                                                double exposure = 1e5) {
    lexis::MortalitySurface s;
    s.gender = lexis::Gender::total;
    s.source = lexis::SourceTag::simulated;
    s.deaths = lexis::Grid(age_lo, age_hi, yr_lo, yr_hi);
    s.exposure = lexis::Grid(age_lo, age_hi, yr_lo, yr_hi);
    s.rate = lexis::Grid(age_lo, age_hi, yr_lo, yr_hi);
    s.missing.assign(s.rate.size(), 0);
    for (int x = age_lo; x <= age_hi; ++x)
        for (int t = yr_lo; t <= yr_hi; ++t) {
            double m = std::exp(a + b * (x - age_lo) - d * (t - yr_lo));
            s.exposure.at(x, t) = exposure;
            s.deaths.at(x, t) = exposure * m;
            s.rate.at(x, t) = m;
        }
    return s;
}

// Exact Poisson draw by counting Exp(1) arrivals; O(mean).
inline double poisson_draw(lexis::Rng& rng, double mean) {
    double acc = 0.0;
    long count = -1;
    while (acc <= mean) {
        acc += -std::log(rng.uniform_pos());
        ++count;
    }
    return double(count);
}

// Exact Binomial draw by geometric skips; O(successes).
inline double binomial_draw(lexis::Rng& rng, double n, double p) {
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return n;
    double log_q = std::log1p(-p);
    double successes = 0.0, skipped = 0.0;
    while (true) {
        skipped += std::floor(std::log(rng.uniform_pos()) / log_q) + 1.0;
        if (skipped > n) break;
        successes += 1.0;
    }
    return successes;
}

inline void poissonize(lexis::MortalitySurface& s, std::uint64_t seed) {
    lexis::Rng rng(seed);
    for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x)
        for (int t = s.rate.year_min(); t <= s.rate.year_max(); ++t) {
            double d = poisson_draw(rng, s.exposure.at(x, t) * s.rate.at(x, t));
            s.deaths.at(x, t) = d;
            s.rate.at(x, t) = d / s.exposure.at(x, t);
        }
}

// Surface generated exactly from M1 parameters.
inline lexis::MortalitySurface m1_surface(const std::vector<double>& beta1,
                                          const std::vector<double>& beta2,
                                          const std::vector<double>& kappa,
                                          int age_lo, int yr_lo, double exposure) {
    int A = int(beta1.size()), T = int(kappa.size());
    lexis::MortalitySurface s;
    s.source = lexis::SourceTag::simulated;
    s.deaths = lexis::Grid(age_lo, age_lo + A - 1, yr_lo, yr_lo + T - 1);
    s.exposure = s.deaths;
    s.rate = s.deaths;
    s.missing.assign(s.rate.size(), 0);
    for (int xi = 0; xi < A; ++xi)
        for (int ti = 0; ti < T; ++ti) {
            double m = std::exp(beta1[xi] + beta2[xi] * kappa[ti]);
            s.exposure.at(age_lo + xi, yr_lo + ti) = exposure;
            s.deaths.at(age_lo + xi, yr_lo + ti) = exposure * m;
            s.rate.at(age_lo + xi, yr_lo + ti) = m;
        }
    return s;
}

class TempDir {
public:
    explicit TempDir(const std::string& name) {
        path_ = std::filesystem::temp_directory_path() / ("lexis_test_" + name);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string path() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

}  // namespace testutil
