#pragma once

// Best-Estimate / shocked mortality tables, cohort life expectancies, the
// IE impact indicator, model-point annuity valuation and the capital and
// stability reports built on them.

#include <cmath>
#include <string>
#include <vector>

#include "lexis/core.hpp"
#include "lexis/surface.hpp"

namespace lexis {

enum class PathRole { be, scr };

inline std::string to_string(PathRole r) { return r == PathRole::be ? "BE" : "SCR"; }

// Relative change of q from the valuation year: IR(x, t0->t), zero at t0.
struct ImprovementPath {
    PathRole role = PathRole::be;
    int t0 = 0;
    Grid ir;  // years t0..t0+T

    void validate() const {
        if (ir.year_min() != t0) throw validation_error("path must start at t0");
        for (double v : ir.values())
            if (v <= -1.0) throw validation_error("improvement ratio <= -1");
        for (int x = ir.age_min(); x <= ir.age_max(); ++x)
            if (ir.at(x, t0) != 0.0)
                throw validation_error("improvement at t0 must be zero");
    }
};

// q^A(x,t) = q(x,t0) * (1 + IR^A(x,t0->t)) for A in {BE, SCR}; both tables
// share the t0 column with the base.
struct ShockedTables {
    int t0 = 0;
    QSurface be, scr;
    long clamp_count = 0;

    const QSurface& table(PathRole r) const { return r == PathRole::be ? be : scr; }
};

inline ImprovementPath improvement_path(const QSurface& base,
                                        const QSurface& target,
                                        PathRole role = PathRole::be) {
    const Grid& b = base.q;
    const Grid& g = target.q;
    if (b.n_years() != 1) throw validation_error("base must be a single year t0");
    int t0 = b.year_min();
    if (g.year_min() != t0 && g.year_min() != t0 + 1)
        throw validation_error("target years must start at t0 or t0+1");
    if (g.age_min() != b.age_min() || g.age_max() != b.age_max())
        throw validation_error("target ages do not match the base");

    ImprovementPath path;
    path.role = role;
    path.t0 = t0;
    path.ir = Grid(b.age_min(), b.age_max(), t0, g.year_max());
    for (int x = b.age_min(); x <= b.age_max(); ++x) {
        double q0 = b.at(x, t0);
        if (q0 <= 0.0)
            throw numeric_error("base q is zero at age " + std::to_string(x));
        for (int t = g.year_min(); t <= g.year_max(); ++t)
            path.ir.at(x, t) = (g.at(x, t) - q0) / q0;
        path.ir.at(x, t0) = (g.year_min() == t0) ? (g.at(x, t0) - q0) / q0 : 0.0;
    }
    path.validate();
    return path;
}

inline ShockedTables build_shocked_tables(const ImprovementPath& be,
                                          const ImprovementPath& scr,
                                          const QSurface& base) {
    if (!be.ir.same_shape(scr.ir) || be.t0 != scr.t0)
        throw validation_error("BE and SCR paths must share t0 and shape");
    if (base.q.n_years() != 1 || base.q.year_min() != be.t0 ||
        base.q.age_min() != be.ir.age_min() || base.q.age_max() != be.ir.age_max())
        throw validation_error("base grid does not match the paths");

    ShockedTables out;
    out.t0 = be.t0;
    for (PathRole role : {PathRole::be, PathRole::scr}) {
        const ImprovementPath& path = role == PathRole::be ? be : scr;
        QSurface q;
        q.gender = base.gender;
        q.source = SourceTag::simulated;
        q.q = Grid(base.q.age_min(), base.q.age_max(), be.t0, be.ir.year_max());
        q.missing.assign(q.q.size(), 0);
        for (int x = q.q.age_min(); x <= q.q.age_max(); ++x) {
            double q0 = base.q.at(x, be.t0);
            for (int t = be.t0; t <= be.ir.year_max(); ++t) {
                double v = q0 * (1.0 + path.ir.at(x, t));
                if (v < 0.0) { v = 0.0; ++out.clamp_count; }
                if (v > 1.0) { v = 1.0; ++out.clamp_count; }
                q.q.at(x, t) = v;
            }
        }
        (role == PathRole::be ? out.be : out.scr) = std::move(q);
    }
    return out;
}

// e(x,t) = sum_k prod_{i<k} (1 - q(x+i, t+i)), following the diagonal until
// the top age of the table or until survival falls below 1e-12. Errors if
// the diagonal runs out of years first.
inline double cohort_life_expectancy(const QSurface& q, int x, int t) {
    const Grid& g = q.q;
    if (!g.contains(x, t)) throw validation_error("cohort start outside table");
    double e = 0.0, surv = 1.0;
    int i = 0;
    while (surv >= 1e-12) {
        if (x + i > g.age_max()) break;  // omega reached; q there is 1 for closed tables
        if (t + i > g.year_max())
            throw validation_error(
                "projection horizon ends before the cohort reaches the top age; "
                "project at least " + std::to_string(g.age_max() - x) + " years");
        if (q.is_missing(x + i, t + i))
            throw validation_error("cohort diagonal has a missing cell at age " +
                                   std::to_string(x + i));
        surv *= 1.0 - g.at(x + i, t + i);
        e += surv;
        ++i;
    }
    return e;
}

inline double cohort_life_expectancy(const ShockedTables& tables, PathRole role,
                                     int x, int t) {
    return cohort_life_expectancy(tables.table(role), x, t);
}

// IE(x,t) = (e(SCR) - e(BE)) / e(BE).
inline double ie_indicator(const ShockedTables& tables, int x, int t) {
    double be = cohort_life_expectancy(tables, PathRole::be, x, t);
    if (be <= 0.0) throw numeric_error("BE cohort expectancy is zero");
    double scr = cohort_life_expectancy(tables, PathRole::scr, x, t);
    return (scr - be) / be;
}

struct ModelPoint {
    Gender gender = Gender::total;
    int age = 0;          // age at the valuation year
    double amount = 0.0;  // annual annuity amount
    double count = 1.0;
};

struct AnnuityPortfolio {
    std::vector<ModelPoint> points;
    double discount_rate = 0.0;  // flat annual, end-of-year payments
};

// Present value of life annuities along the valuation-year diagonal:
// sum over k >= 1 of v^k * k-year survival, per unit amount.
inline double portfolio_value(const AnnuityPortfolio& portfolio,
                              const ShockedTables& tables, PathRole role) {
    const QSurface& q = tables.table(role);
    double v = 1.0 / (1.0 + portfolio.discount_rate);
    double total = 0.0;
    for (const auto& mp : portfolio.points) {
        if (mp.amount < 0.0 || mp.count < 0.0)
            throw validation_error("model point amounts must be non-negative");
        if (mp.age < q.q.age_min() || mp.age > q.q.age_max())
            throw validation_error("model point age " + std::to_string(mp.age) +
                                   " outside table support");
        double annuity = 0.0, surv = 1.0, disc = 1.0;
        int i = 0;
        while (surv >= 1e-12 && mp.age + i <= q.q.age_max()) {
            if (tables.t0 + i > q.q.year_max())
                throw validation_error("table horizon too short for age " +
                                       std::to_string(mp.age));
            surv *= 1.0 - q.q.at(mp.age + i, tables.t0 + i);
            disc *= v;
            annuity += disc * surv;
            ++i;
        }
        total += mp.count * mp.amount * annuity;
    }
    return total;
}

struct ScrImpactReport {
    double value_be = 0.0;
    double scr_crude = 0.0;      // value(SCR) - value(BE), crude calibration
    double scr_corrected = 0.0;  //                        corrected calibration
    double abs_diff = 0.0;       // corrected - crude
    double rel_diff = 0.0;       // abs_diff / |crude|
};

// Capital deltas under both calibrations. Callers hold the Best-Estimate
// path fixed across calibrations; only the SCR tables differ.
inline ScrImpactReport scr_impact(const AnnuityPortfolio& portfolio,
                                  const ShockedTables& crude_cal,
                                  const ShockedTables& corrected_cal) {
    ScrImpactReport r;
    r.value_be = portfolio_value(portfolio, crude_cal, PathRole::be);
    r.scr_crude = portfolio_value(portfolio, crude_cal, PathRole::scr) - r.value_be;
    double be2 = portfolio_value(portfolio, corrected_cal, PathRole::be);
    r.scr_corrected =
        portfolio_value(portfolio, corrected_cal, PathRole::scr) - be2;
    r.abs_diff = r.scr_corrected - r.scr_crude;
    r.rel_diff = r.scr_crude != 0.0 ? r.abs_diff / std::fabs(r.scr_crude) : 0.0;
    return r;
}

struct StabilityOptions {
    bool weight_by_count = false;  // default weights by annuity amount
};

// Portfolio-weighted gap e(SCR) - e(BE) at one valuation year.
inline double portfolio_le_gap(const ShockedTables& tables,
                               const AnnuityPortfolio& portfolio,
                               const StabilityOptions& opt = {}) {
    double num = 0.0, den = 0.0;
    for (const auto& mp : portfolio.points) {
        double w = opt.weight_by_count ? mp.count : mp.count * mp.amount;
        num += w * (cohort_life_expectancy(tables, PathRole::scr, mp.age, tables.t0) -
                    cohort_life_expectancy(tables, PathRole::be, mp.age, tables.t0));
        den += w;
    }
    if (den <= 0.0) throw validation_error("portfolio has no weight");
    return num / den;
}

// Relative evolution of the LE gap between two valuation years, as a
// fraction (0.01 = 1%). The same model-point ages are priced at both
// valuations: the book is treated as stationary, so identical vintages give
// exactly zero.
inline double stability_indicator(const ShockedTables& at_t,
                                  const ShockedTables& at_t1,
                                  const AnnuityPortfolio& portfolio,
                                  const StabilityOptions& opt = {}) {
    if (at_t1.t0 != at_t.t0 + 1)
        throw validation_error("stability indicator expects consecutive valuation years");
    double gap_t = portfolio_le_gap(at_t, portfolio, opt);
    double gap_t1 = portfolio_le_gap(at_t1, portfolio, opt);
    if (gap_t == 0.0) throw numeric_error("LE gap at t is zero");
    return (gap_t1 - gap_t) / gap_t;
}

}  // namespace lexis
