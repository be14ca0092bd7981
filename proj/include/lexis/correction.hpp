#pragma once

// Per-cohort exposure correction from monthly births. The indicator I(b) is
// the ratio of the monthly-refined exposure to the uniform-births exposure
// along the period-table diagonal t - x = b, whose lower triangles belong to
// cohort b and upper triangles to cohort b-1:
//
//   I(b) = 2 * [ lambda * (1 - u(b)) + (1 - lambda) * u(b-1) ],
//   lambda = B(b) / (B(b) + B(b-1)),
//
// with u(b) the mean within-year birth time of cohort b. I(b) > 1 means the
// period rates on diagonal b are over-estimated, I(b) < 1 under-estimated;
// corrected rates divide by I along the diagonal.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lexis/core.hpp"
#include "lexis/ingest.hpp"
#include "lexis/surface.hpp"

namespace lexis {

enum class Provenance { computed, predicted, unavailable };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::computed: return "computed";
        case Provenance::predicted: return "predicted";
        default: return "unavailable";
    }
}

struct IndicatorEntry {
    double value = 1.0;
    Provenance provenance = Provenance::unavailable;
};

struct CorrectionIndicator {
    std::string country;
    std::map<int, IndicatorEntry> by_cohort;

    const IndicatorEntry* find(int cohort) const {
        auto it = by_cohort.find(cohort);
        return it == by_cohort.end() ? nullptr : &it->second;
    }
};

// Within-year position of each month's midpoint: equal twelfths by default,
// or exact calendar month lengths (365-day year).
enum class MonthWeighting { equal_months, calendar };

namespace detail {
inline double month_midpoint(int month, MonthWeighting weighting) {
    if (weighting == MonthWeighting::equal_months)
        return (2.0 * month - 1.0) / 24.0;
    static constexpr double days[12] = {31, 28, 31, 30, 31, 30,
                                        31, 31, 30, 31, 30, 31};
    double before = 0.0;
    for (int j = 0; j + 1 < month; ++j) before += days[j];
    return (before + 0.5 * days[month - 1]) / 365.0;
}
}  // namespace detail

// Mean within-year birth time of year b as a fraction of the year. Equal
// monthly births give exactly 1/2 under equal-month midpoints.
inline double mean_birth_fraction(const MonthlyBirthSeries& series, int year,
                                  MonthWeighting weighting = MonthWeighting::equal_months) {
    if (!series.complete(year))
        throw validation_error("monthly births incomplete for year " +
                               std::to_string(year));
    double total = 0.0, weighted = 0.0;
    for (int j = 1; j <= 12; ++j) {
        double b = series.births.at({year, j});
        total += b;
        weighted += b * detail::month_midpoint(j, weighting);
    }
    if (total <= 0.0)
        throw validation_error("zero total births in year " + std::to_string(year));
    return weighted / total;
}

inline double correction_indicator(const MonthlyBirthSeries& series, int cohort,
                                   MonthWeighting weighting = MonthWeighting::equal_months) {
    if (!series.complete(cohort) || !series.complete(cohort - 1))
        throw validation_error("correction indicator for cohort " +
                               std::to_string(cohort) +
                               " needs complete births for it and the prior year");
    double b1 = series.total(cohort);
    double b0 = series.total(cohort - 1);
    if (b0 + b1 <= 0.0)
        throw validation_error("no births around cohort " + std::to_string(cohort));
    double lambda = b1 / (b0 + b1);
    double u1 = mean_birth_fraction(series, cohort, weighting);
    double u0 = mean_birth_fraction(series, cohort - 1, weighting);
    return 2.0 * (lambda * (1.0 - u1) + (1.0 - lambda) * u0);
}

// Indicator over every cohort the series supports.
inline CorrectionIndicator build_indicator(const MonthlyBirthSeries& series,
                                           MonthWeighting weighting = MonthWeighting::equal_months) {
    CorrectionIndicator out;
    out.country = series.country;
    for (int year : series.years()) {
        if (!series.complete(year) || !series.complete(year - 1)) continue;
        if (series.total(year) + series.total(year - 1) <= 0.0) continue;
        out.by_cohort[year] = {correction_indicator(series, year, weighting),
                               Provenance::computed};
    }
    return out;
}

struct CorrectOptions {
    // Treat cohorts outside indicator support as I = 1 instead of failing.
    bool allow_passthrough = false;
    // Cohorts that passed through, for the caller's log.
    std::vector<int>* passthrough_cohorts = nullptr;
};

// m~(x,t) = m(x,t)/I(t-x). Deaths stay fixed; exposure is rescaled by I so
// m = D/E keeps holding on the corrected surface.
inline MortalitySurface correct_surface(const MortalitySurface& s,
                                        const CorrectionIndicator& indicator,
                                        const CorrectOptions& opt = {}) {
    MortalitySurface out = s;
    out.source = SourceTag::corrected;
    for (int b = s.rate.year_min() - s.rate.age_max();
         b <= s.rate.year_max() - s.rate.age_min(); ++b) {
        const IndicatorEntry* e = indicator.find(b);
        double factor;
        if (e == nullptr || e->provenance == Provenance::unavailable) {
            if (!opt.allow_passthrough)
                throw validation_error("no correction indicator for cohort " +
                                       std::to_string(b) +
                                       " (pass-through not enabled)");
            if (opt.passthrough_cohorts) opt.passthrough_cohorts->push_back(b);
            continue;
        } else {
            if (e->value <= 0.0)
                throw validation_error("indicator must be positive for cohort " +
                                       std::to_string(b));
            factor = e->value;
        }
        if (factor == 1.0) continue;
        for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x) {
            int t = b + x;
            if (!s.rate.contains(x, t) || s.is_missing(x, t)) continue;
            out.rate.at(x, t) = s.rate.at(x, t) / factor;
            out.exposure.at(x, t) = s.exposure.at(x, t) * factor;
        }
    }
    out.validate();
    return out;
}

struct AnomalyReportRow {
    int cohort = 0;
    int cells = 0;
    double deviation_before = 0.0;  // mean |r - per-year median| on the cohort's cells
    double deviation_after = 0.0;
    double ratio = 1.0;             // after/before
};

namespace detail {

inline std::vector<double> column_medians(const ImprovementMatrix& im) {
    std::vector<double> med(im.r.n_years(), 0.0);
    for (int t = im.r.year_min(); t <= im.r.year_max(); ++t) {
        std::vector<double> col;
        for (int x = im.r.age_min(); x <= im.r.age_max(); ++x)
            if (im.is_defined(x, t)) col.push_back(im.r.at(x, t));
        if (col.empty()) continue;
        std::sort(col.begin(), col.end());
        std::size_t n = col.size();
        med[t - im.r.year_min()] =
            n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    return med;
}

// Mean absolute deviation of improvement rates from the per-year median,
// over the cells where cohort b's mortality enters r (diagonals b-1 and b).
inline std::pair<double, int> cohort_deviation(const ImprovementMatrix& im,
                                               const std::vector<double>& med,
                                               int cohort) {
    double sum = 0.0;
    int n = 0;
    for (int d : {cohort - 1, cohort}) {
        for (int x = im.r.age_min(); x <= im.r.age_max(); ++x) {
            int t = d + x;
            if (!im.r.contains(x, t) || !im.is_defined(x, t)) continue;
            sum += std::fabs(im.r.at(x, t) - med[t - im.r.year_min()]);
            ++n;
        }
    }
    return {n ? sum / n : 0.0, n};
}

}  // namespace detail

// Per-cohort improvement-rate deviation before and after correction, and the
// after/before ratio. Identical inputs give ratio 1 on every cohort.
inline std::vector<AnomalyReportRow> anomaly_report(const MortalitySurface& crude,
                                                    const MortalitySurface& corrected) {
    if (!crude.rate.same_shape(corrected.rate))
        throw validation_error("anomaly report needs surfaces of one shape");
    ImprovementMatrix rb = improvements(crude);
    ImprovementMatrix ra = improvements(corrected);
    auto med_b = detail::column_medians(rb);
    auto med_a = detail::column_medians(ra);

    std::vector<AnomalyReportRow> rows;
    int b_lo = rb.r.year_min() - rb.r.age_max();
    int b_hi = rb.r.year_max() - rb.r.age_min() + 1;
    for (int b = b_lo; b <= b_hi; ++b) {
        auto [before, n0] = detail::cohort_deviation(rb, med_b, b);
        auto [after, n1] = detail::cohort_deviation(ra, med_a, b);
        if (n0 == 0 && n1 == 0) continue;
        AnomalyReportRow row;
        row.cohort = b;
        row.cells = n0;
        row.deviation_before = before;
        row.deviation_after = after;
        row.ratio = before > 0.0 ? after / before : 1.0;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace lexis
