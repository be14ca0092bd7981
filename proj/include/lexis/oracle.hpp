#pragma once

// Individual-level demographic micro-simulator. Lifelines are drawn from a
// known piecewise-constant hazard, birth instants from a configurable
// monthly pattern, and every life is tabulated exactly into Lexis triangle
// deaths, January-1 populations and continuous-time person-year integrals.
// The outputs feed the estimation pipeline through its normal input types,
// so the simulator serves as an independent ground-truth oracle.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "lexis/core.hpp"
#include "lexis/ingest.hpp"
#include "lexis/rng.hpp"
#include "lexis/surface.hpp"

namespace lexis {

struct CohortSpec {
    int year = 0;
    long long births = 0;
    std::array<double, 12> month_weights{};  // need not be normalized

    static CohortSpec uniform(int year, long long births) {
        CohortSpec c;
        c.year = year;
        c.births = births;
        c.month_weights.fill(1.0);
        return c;
    }
};

struct OracleSpec {
    std::vector<CohortSpec> cohorts;
    std::vector<double> hazard_by_age;  // m*(x); last value extends upward
    std::optional<Grid> hazard_grid;    // optional m*(x,t) override
    int horizon_year = 0;               // last tabulated calendar year
    std::uint64_t seed = 1;

    double hazard(int age, int year) const {
        if (hazard_grid && hazard_grid->contains(age, year))
            return hazard_grid->at(age, year);
        if (hazard_by_age.empty()) throw validation_error("oracle hazard unset");
        std::size_t i = std::min<std::size_t>(age, hazard_by_age.size() - 1);
        return hazard_by_age[i];
    }

    void validate() const {
        if (cohorts.empty()) throw validation_error("oracle needs cohorts");
        for (const auto& c : cohorts) {
            double w = 0.0;
            for (double v : c.month_weights) {
                if (v < 0.0) throw validation_error("negative month weight");
                w += v;
            }
            if (w <= 0.0) throw validation_error("month weights sum to zero");
            if (c.births < 0) throw validation_error("negative birth count");
            if (c.year > horizon_year)
                throw validation_error("cohort beyond the horizon");
        }
        for (double h : hazard_by_age)
            if (h < 0.0) throw validation_error("negative hazard");
    }
};

struct OracleOutput {
    RawDeathsLexis deaths;
    RawPopulation population;
    Grid true_rate;        // the generating m*(x,t) on the output grid
    Grid exact_exposure;   // person-year integrals per cell
    Grid death_count;      // deaths per (age, year), both triangles
    // Per-cohort accounting: births, cumulative deaths and alive counts at
    // each January 1 within the horizon.
    std::map<int, long long> births_by_cohort;
    // Realized birth month draws, (year, month 1..12) -> count; this is what
    // the HFD-format emission carries, so indicators computed from it match
    // the simulated population exactly.
    std::map<std::pair<int, int>, double> births_by_month;

    MonthlyBirthSeries birth_series(const std::string& country = "ORACLE") const {
        MonthlyBirthSeries s;
        s.country = country;
        s.births = births_by_month;
        return s;
    }
};

namespace detail {

// Death age from the piecewise-constant hazard by inverting the cumulative
// hazard at an Exp(1) draw. `max_age` caps the walk; returns the cap when
// the lifetime exceeds it.
inline double sample_death_age(const OracleSpec& spec, int birth_year, Rng& rng,
                               double max_age) {
    double target = rng.exponential(1.0);
    double acc = 0.0;
    for (int k = 0; k < static_cast<int>(max_age) + 1; ++k) {
        double h = spec.hazard(k, birth_year + k);
        double band = std::min(1.0, max_age - k);
        if (h > 0.0 && acc + h * band >= target)
            return std::min(k + (target - acc) / h, max_age);
        acc += h * band;
        if (k + 1.0 >= max_age) break;
    }
    return max_age;
}

}  // namespace detail

inline OracleOutput simulate_population(const OracleSpec& spec) {
    spec.validate();
    int year_lo = spec.cohorts.front().year;
    for (const auto& c : spec.cohorts) year_lo = std::min(year_lo, c.year);
    const int year_hi = spec.horizon_year;
    const int age_hi = year_hi - year_lo;  // oldest attainable age in window

    OracleOutput out;
    out.true_rate = Grid(0, age_hi, year_lo, year_hi);
    out.exact_exposure = Grid(0, age_hi, year_lo, year_hi);
    out.death_count = Grid(0, age_hi, year_lo, year_hi);
    for (int x = 0; x <= age_hi; ++x)
        for (int t = year_lo; t <= year_hi; ++t)
            out.true_rate.at(x, t) = spec.hazard(x, t);

    // (year, age) -> population, (year, age, cohort) -> triangle deaths.
    std::map<std::pair<int, int>, double> pop;
    std::map<std::tuple<int, int, int>, double> tri;

    for (std::size_t ci = 0; ci < spec.cohorts.size(); ++ci) {
        const auto& cohort = spec.cohorts[ci];
        Rng rng(substream_seed(spec.seed, ci));
        out.births_by_cohort[cohort.year] += cohort.births;
        for (int m = 1; m <= 12; ++m)
            out.births_by_month.emplace(std::make_pair(cohort.year, m), 0.0);
        // Absolute time cap: end of the horizon year.
        const double time_cap = year_hi + 1.0;
        for (long long i = 0; i < cohort.births; ++i) {
            int month = rng.categorical(cohort.month_weights.data(), 12);
            out.births_by_month[{cohort.year, month + 1}] += 1.0;
            double birth_time = cohort.year + (month + rng.uniform()) / 12.0;
            double max_age = time_cap - birth_time;
            double death_age = detail::sample_death_age(spec, cohort.year, rng, max_age);
            bool dies_in_window = death_age < max_age;
            double death_time = birth_time + death_age;

            if (dies_in_window) {
                int age = static_cast<int>(death_age);
                int year = static_cast<int>(death_time);
                tri[{year, age, cohort.year}] += 1.0;
                out.death_count.at(age, year) += 1.0;
            }
            // January-1 populations: alive at time y, completed age y-b-1.
            int first_jan = cohort.year + 1;
            int last_jan = static_cast<int>(dies_in_window ? death_time : time_cap);
            for (int y = first_jan; y <= last_jan && y <= year_hi + 1; ++y) {
                if (dies_in_window && death_time < y) break;
                pop[{y, y - cohort.year - 1}] += 1.0;
            }
            // Exact exposure: within age band x the life spans
            // [birth+x, min(death, birth+x+1)), split at the calendar-year
            // boundary it crosses.
            int last_band = static_cast<int>(dies_in_window ? death_age : max_age);
            for (int x = 0; x <= last_band && x <= age_hi; ++x) {
                double s0 = birth_time + x;
                double s1 = std::min(dies_in_window ? death_time : time_cap,
                                     birth_time + x + 1.0);
                if (s1 <= s0) break;
                int y0 = static_cast<int>(s0);
                double split = std::min(s1, double(y0 + 1));
                if (y0 <= year_hi) out.exact_exposure.at(x, y0) += split - s0;
                if (s1 > y0 + 1 && y0 + 1 <= year_hi)
                    out.exact_exposure.at(x, y0 + 1) += s1 - (y0 + 1);
            }
        }
    }

    for (const auto& [key, v] : tri) {
        DeathsRecord r;
        r.year = std::get<0>(key);
        r.age = std::get<1>(key);
        r.cohort = std::get<2>(key);
        r.female = r.male = v / 2.0;
        r.total = v;
        out.deaths.records.push_back(r);
    }
    for (const auto& [key, v] : pop) {
        if (key.first > year_hi + 1) continue;
        PopulationRecord r;
        r.year = key.first;
        r.age = key.second;
        r.female = r.male = v / 2.0;
        r.total = v;
        out.population.records.push_back(r);
    }
    return out;
}

// Multiply rates by a factor along each listed cohort diagonal, keeping
// deaths fixed and rescaling exposure, i.e. the algebraic inverse of
// correct_surface with I = factor.
inline MortalitySurface inject_anomaly(const MortalitySurface& s,
                                       const std::vector<int>& cohorts,
                                       const std::vector<double>& factors) {
    if (cohorts.size() != factors.size())
        throw validation_error("inject_anomaly: one factor per cohort");
    MortalitySurface out = s;
    for (std::size_t i = 0; i < cohorts.size(); ++i) {
        int b = cohorts[i];
        double f = factors[i];
        if (f <= 0.0) throw validation_error("anomaly factor must be > 0");
        if (b < s.rate.year_min() - s.rate.age_max() ||
            b > s.rate.year_max() - s.rate.age_min())
            throw validation_error("cohort " + std::to_string(b) +
                                   " has no cells in the surface");
        for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x) {
            int t = b + x;
            if (!s.rate.contains(x, t) || s.is_missing(x, t)) continue;
            out.rate.at(x, t) = s.rate.at(x, t) * f;
            out.exposure.at(x, t) = s.exposure.at(x, t) / f;
        }
    }
    return out;
}

}  // namespace lexis
