#pragma once

// Period mortality surfaces and the shared demographic calculus: central
// rates from raw counts, death probabilities, improvement rates, life
// expectancies, death curves and old-age table closure.

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "lexis/core.hpp"
#include "lexis/ingest.hpp"

namespace lexis {

// Deaths, exposure and central rates on a shared age x year grid.
// m = D/E holds on every non-missing cell.
struct MortalitySurface {
    Gender gender = Gender::total;
    SourceTag source = SourceTag::crude;
    Grid deaths, exposure, rate;
    std::vector<std::uint8_t> missing;    // parallel to the grids
    std::optional<int> open_age;          // lowest age aggregated as "x+"

    bool is_missing(int age, int year) const {
        return missing[rate.index(age, year)] != 0;
    }
    void set_missing(int age, int year) { missing[rate.index(age, year)] = 1; }

    void validate() const {
        if (!deaths.same_shape(exposure) || !deaths.same_shape(rate))
            throw validation_error("surface grids must share one shape");
        if (missing.size() != rate.size())
            throw validation_error("missing mask size mismatch");
        for (std::size_t i = 0; i < rate.size(); ++i) {
            if (missing[i]) continue;
            if (exposure.values()[i] <= 0.0)
                throw validation_error("non-missing cell with exposure <= 0");
            if (rate.values()[i] < 0.0)
                throw validation_error("negative mortality rate");
        }
    }
};

// Death probabilities q = 1 - exp(-m) on the same indexing.
struct QSurface {
    Gender gender = Gender::total;
    SourceTag source = SourceTag::crude;
    Grid q;
    std::vector<std::uint8_t> missing;

    bool is_missing(int age, int year) const {
        return missing[q.index(age, year)] != 0;
    }
};

// r(x,t) = m(x,t+1)/m(x,t) - 1 for t in [year_min, year_max-1].
// Cells with a zero denominator are flagged undefined, never imputed.
struct ImprovementMatrix {
    Grid r;
    std::vector<std::uint8_t> defined;

    bool is_defined(int age, int year) const {
        return defined[r.index(age, year)] != 0;
    }
};

struct SurfaceOptions {
    // Which row to use when a population year carries territorial-change
    // duplicates: '+' (after the change) or '-' (before it).
    char territorial_suffix = '+';
};

// E(x,t) = (P(x,t) + P(x,t+1))/2, D(x,t) = lower + upper triangle deaths.
// Requires population for year_max+1 and errors on any E <= 0 cell.
inline MortalitySurface build_surface(const RawDeathsLexis& deaths,
                                      const RawPopulation& population,
                                      Gender gender, int age_min, int age_max,
                                      int year_min, int year_max,
                                      const SurfaceOptions& opt = {}) {
    MortalitySurface s;
    s.gender = gender;
    s.source = SourceTag::crude;
    s.deaths = Grid(age_min, age_max, year_min, year_max);
    s.exposure = Grid(age_min, age_max, year_min, year_max);
    s.rate = Grid(age_min, age_max, year_min, year_max);
    s.missing.assign(s.rate.size(), 0);

    // Population lookup. Plain years win; suffixed duplicates resolve by the
    // configured preference.
    std::map<std::pair<int, int>, const PopulationRecord*> pop;
    for (const auto& r : population.records) {
        auto key = std::make_pair(r.year, r.age);
        auto it = pop.find(key);
        if (it == pop.end() || r.year_suffix == ' ' ||
            (it->second->year_suffix != ' ' && r.year_suffix == opt.territorial_suffix))
            pop[key] = &r;
        if (r.open_age && (!s.open_age || r.age < *s.open_age)) s.open_age = r.age;
    }

    std::map<std::pair<int, int>, double> death_sum;  // (age, year) -> D
    std::map<std::pair<int, int>, bool> death_missing;
    for (const auto& r : deaths.records) {
        if (r.age < age_min || r.age > age_max || r.year < year_min ||
            r.year > year_max)
            continue;
        if (r.open_age && (!s.open_age || r.age < *s.open_age)) s.open_age = r.age;
        auto key = std::make_pair(r.age, r.year);
        auto v = r.count(gender);
        if (!v)
            death_missing[key] = true;
        else
            death_sum[key] += *v;
    }

    for (int x = age_min; x <= age_max; ++x) {
        for (int t = year_min; t <= year_max; ++t) {
            auto p0 = pop.find({t, x});
            auto p1 = pop.find({t + 1, x});
            if (p0 == pop.end() || p1 == pop.end())
                throw validation_error("population missing for year " +
                                       std::to_string(p0 == pop.end() ? t : t + 1) +
                                       " age " + std::to_string(x));
            auto c0 = p0->second->count(gender);
            auto c1 = p1->second->count(gender);
            auto dkey = std::make_pair(x, t);
            bool dmiss = death_missing.count(dkey) > 0;
            auto dit = death_sum.find(dkey);
            if (!c0 || !c1 || dmiss || dit == death_sum.end()) {
                s.set_missing(x, t);
                continue;
            }
            double e = 0.5 * (*c0 + *c1);
            if (e <= 0.0)
                throw validation_error("exposure <= 0 at age " + std::to_string(x) +
                                       ", year " + std::to_string(t));
            s.deaths.at(x, t) = dit->second;
            s.exposure.at(x, t) = e;
            s.rate.at(x, t) = dit->second / e;
        }
    }
    s.validate();
    return s;
}

inline QSurface to_q(const MortalitySurface& s) {
    QSurface out;
    out.gender = s.gender;
    out.source = s.source;
    out.q = s.rate;
    out.missing = s.missing;
    for (std::size_t i = 0; i < out.q.size(); ++i) {
        double m = s.rate.values()[i];
        if (m < 0.0) throw validation_error("negative rate in to_q");
        out.q.values()[i] = -std::expm1(-m);
    }
    return out;
}

inline ImprovementMatrix improvements(const MortalitySurface& s) {
    if (s.rate.n_years() < 2)
        throw validation_error("improvements need at least 2 years");
    ImprovementMatrix im;
    im.r = Grid(s.rate.age_min(), s.rate.age_max(), s.rate.year_min(),
                s.rate.year_max() - 1);
    im.defined.assign(im.r.size(), 0);
    for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x) {
        for (int t = s.rate.year_min(); t < s.rate.year_max(); ++t) {
            if (s.is_missing(x, t) || s.is_missing(x, t + 1)) continue;
            double m0 = s.rate.at(x, t);
            if (m0 == 0.0) continue;  // flagged undefined
            im.r.at(x, t) = s.rate.at(x, t + 1) / m0 - 1.0;
            im.defined[im.r.index(x, t)] = 1;
        }
    }
    return im;
}

// Curtate expectancy within [from_age, truncation_age), all q from the single
// period t: sum over k of the k-year survival product.
inline double period_life_expectancy(const QSurface& qs, int from_age,
                                     int truncation_age, int year) {
    if (year < qs.q.year_min() || year > qs.q.year_max())
        throw validation_error("year " + std::to_string(year) + " outside surface");
    if (from_age >= truncation_age || truncation_age > qs.q.age_max() + 1 ||
        from_age < qs.q.age_min())
        throw validation_error("bad age band for life expectancy");
    double e = 0.0, surv = 1.0;
    for (int x = from_age; x < truncation_age; ++x) {
        if (qs.is_missing(x, year))
            throw validation_error("life expectancy band has a missing cell at age " +
                                   std::to_string(x));
        surv *= 1.0 - qs.q.at(x, year);
        e += surv;
    }
    return e;
}

inline std::vector<double> force_of_mortality_curve(const MortalitySurface& s,
                                                    int year) {
    if (year < s.rate.year_min() || year > s.rate.year_max())
        throw validation_error("year " + std::to_string(year) + " outside surface");
    std::vector<double> out;
    out.reserve(s.rate.n_ages());
    for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x) {
        if (s.is_missing(x, year))
            throw validation_error("force-of-mortality slice has a missing cell "
                                   "at age " + std::to_string(x));
        out.push_back(s.rate.at(x, year));
    }
    return out;
}

// d(x) from l(x_min) = radix, l(x+1) = l(x)(1 - q(x,t)).
inline std::vector<double> death_curve(const QSurface& qs, int year, double radix) {
    if (radix <= 0.0) throw validation_error("radix must be > 0");
    if (year < qs.q.year_min() || year > qs.q.year_max())
        throw validation_error("year " + std::to_string(year) + " outside surface");
    std::vector<double> d;
    d.reserve(qs.q.n_ages());
    double l = radix;
    for (int x = qs.q.age_min(); x <= qs.q.age_max(); ++x) {
        if (qs.is_missing(x, year))
            throw validation_error("death curve has a missing cell at age " +
                                   std::to_string(x));
        double next = l * (1.0 - qs.q.at(x, year));
        d.push_back(l - next);
        l = next;
    }
    return d;
}

// Kannisto-type closure: per year, fit logit m(x) = ln a + b x on the top
// `fit_band` ages up to closure_start, replace ages above closure_start with
// the fitted curve through omega-1, and pin q(omega) = 1.
inline QSurface close_table(const QSurface& qs, int closure_start, int omega,
                            int fit_band = 15) {
    if (closure_start > qs.q.age_max() || closure_start < qs.q.age_min())
        throw validation_error("closure start outside surface ages");
    if (omega <= qs.q.age_max())
        throw validation_error("omega must exceed the surface's top age");
    int lo = std::max(qs.q.age_min(), closure_start - fit_band + 1);
    int n_fit = closure_start - lo + 1;
    if (n_fit < 5)
        throw validation_error("closure fitting band has fewer than 5 ages");

    QSurface out;
    out.gender = qs.gender;
    out.source = qs.source;
    out.q = Grid(qs.q.age_min(), omega, qs.q.year_min(), qs.q.year_max());
    out.missing.assign(out.q.size(), 0);

    for (int t = qs.q.year_min(); t <= qs.q.year_max(); ++t) {
        for (int x = qs.q.age_min(); x <= closure_start; ++x) {
            out.q.at(x, t) = qs.q.at(x, t);
            if (qs.is_missing(x, t)) out.missing[out.q.index(x, t)] = 1;
        }
        // OLS of logit(m) on age over the fitting band.
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (int x = lo; x <= closure_start; ++x) {
            double q = qs.q.at(x, t);
            if (qs.is_missing(x, t) || q <= 0.0 || q >= 1.0)
                throw validation_error("closure band needs q in (0,1) at age " +
                                       std::to_string(x) + ", year " +
                                       std::to_string(t));
            double m = -std::log1p(-q);
            if (m >= 1.0)
                throw validation_error("closure band rate >= 1 at age " +
                                       std::to_string(x));
            double y = std::log(m / (1.0 - m));
            sx += x; sy += y; sxx += double(x) * x; sxy += double(x) * y;
        }
        double n = n_fit;
        double denom = n * sxx - sx * sx;
        double b = (n * sxy - sx * sy) / denom;
        double a = (sy - b * sx) / n;
        for (int x = closure_start + 1; x < omega; ++x) {
            double logit_m = a + b * x;
            double m = 1.0 / (1.0 + std::exp(-logit_m));
            out.q.at(x, t) = -std::expm1(-m);
        }
        out.q.at(omega, t) = 1.0;
    }
    return out;
}

}  // namespace lexis
