#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lexis/forecast.hpp"
#include "lexis/models.hpp"
#include "lexis/oracle.hpp"
#include "lexis/rng.hpp"
#include "lexis/scr.hpp"

using namespace lexis;

namespace {

QSurface flat_base(int age_lo, int age_hi, int t0, double q) {
    QSurface s;
    s.q = Grid(age_lo, age_hi, t0, t0, q);
    s.missing.assign(s.q.size(), 0);
    return s;
}

// q(x,t) = q0 * exp(-rate*(t-t0)) over the horizon: steadily improving.
QSurface improving_series(int age_lo, int age_hi, int t0, int horizon, double q0,
                          double rate) {
    QSurface s;
    s.q = Grid(age_lo, age_hi, t0, t0 + horizon);
    s.missing.assign(s.q.size(), 0);
    for (int x = age_lo; x <= age_hi; ++x)
        for (int t = t0; t <= t0 + horizon; ++t)
            s.q.at(x, t) = q0 * std::exp(-rate * (t - t0));
    return s;
}

}  // namespace

TEST_CASE("improvement_path: identity target, halving, validation") {
    auto base = flat_base(60, 70, 2000, 0.1);
    auto same = improving_series(60, 70, 2000, 10, 0.1, 0.0);
    auto path = improvement_path(base, same);
    for (double v : path.ir.values()) CHECK(v == doctest::Approx(0.0));

    QSurface halving;
    halving.q = Grid(60, 70, 2001, 2001, 0.05);
    halving.missing.assign(halving.q.size(), 0);
    auto path2 = improvement_path(base, halving);
    CHECK(path2.ir.at(65, 2001) == doctest::Approx(-0.5));
    CHECK(path2.ir.at(65, 2000) == 0.0);
}

TEST_CASE("improvement_path then build_shocked_tables round-trips the q series") {
    auto base = flat_base(60, 80, 2000, 0.12);
    Rng rng(3);
    QSurface target;
    target.q = Grid(60, 80, 2001, 2030);
    target.missing.assign(target.q.size(), 0);
    for (int x = 60; x <= 80; ++x)
        for (int t = 2001; t <= 2030; ++t)
            target.q.at(x, t) = 0.12 * std::exp(-0.01 * (t - 2000)) *
                                (1.0 + 0.05 * rng.normal());
    auto path = improvement_path(base, target);
    auto tables = build_shocked_tables(path, path, base);
    for (int x = 60; x <= 80; ++x)
        for (int t = 2001; t <= 2030; ++t) {
            CHECK(tables.be.q.at(x, t) ==
                  doctest::Approx(target.q.at(x, t)).epsilon(1e-12));
            CHECK(tables.scr.q.at(x, t) ==
                  doctest::Approx(target.q.at(x, t)).epsilon(1e-12));
        }
    CHECK(tables.clamp_count == 0);
}

TEST_CASE("build_shocked_tables: uniform shock algebra and t0 anchoring") {
    auto base = flat_base(60, 75, 2000, 0.10);
    auto be_series = improving_series(60, 75, 2000, 20, 0.10, 0.012);
    auto be = improvement_path(base, be_series, PathRole::be);
    ImprovementPath scr = be;
    scr.role = PathRole::scr;
    for (int x = 60; x <= 75; ++x)
        for (int t = 2001; t <= 2020; ++t) scr.ir.at(x, t) -= 0.05;
    auto tables = build_shocked_tables(be, scr, base);
    for (int x = 60; x <= 75; ++x) {
        CHECK(tables.be.q.at(x, 2000) == doctest::Approx(0.10));
        CHECK(tables.scr.q.at(x, 2000) == doctest::Approx(0.10));
        for (int t = 2001; t <= 2020; ++t)
            CHECK(tables.scr.q.at(x, t) ==
                  doctest::Approx(tables.be.q.at(x, t) - 0.05 * 0.10).epsilon(1e-12));
    }
}

TEST_CASE("cohort life expectancy: closed forms") {
    // Constant q = 0.5 along every diagonal, deep table: geometric series 1.0.
    QSurface deep;
    deep.q = Grid(50, 110, 2000, 2060, 0.5);
    deep.missing.assign(deep.q.size(), 0);
    CHECK(cohort_life_expectancy(deep, 50, 2000) ==
          doctest::Approx(1.0).epsilon(1e-12));

    // q = 0 for 30 diagonal steps, then certain death.
    QSurface survive30;
    survive30.q = Grid(50, 90, 2000, 2040, 0.0);
    survive30.missing.assign(survive30.q.size(), 0);
    for (int x = 80; x <= 90; ++x)
        for (int t = 2000; t <= 2040; ++t) survive30.q.at(x, t) = 1.0;
    CHECK(cohort_life_expectancy(survive30, 50, 2000) == doctest::Approx(30.0));

    // Hand-expanded 3-step diagonal: q = (0.1, 0.2, 1.0).
    QSurface steps;
    steps.q = Grid(70, 72, 2010, 2012, 0.0);
    steps.missing.assign(steps.q.size(), 0);
    steps.q.at(70, 2010) = 0.1;
    steps.q.at(71, 2011) = 0.2;
    steps.q.at(72, 2012) = 1.0;
    CHECK(cohort_life_expectancy(steps, 70, 2010) ==
          doctest::Approx(1.62).epsilon(1e-12));
}

TEST_CASE("cohort life expectancy: horizon exhaustion errors, strict "
          "monotonicity in diagonal cells") {
    QSurface shallow;
    shallow.q = Grid(50, 110, 2000, 2010, 0.01);
    shallow.missing.assign(shallow.q.size(), 0);
    CHECK_THROWS_AS(cohort_life_expectancy(shallow, 50, 2000), validation_error);

    QSurface deep;
    deep.q = Grid(50, 110, 2000, 2060, 0.2);
    deep.missing.assign(deep.q.size(), 0);
    double base = cohort_life_expectancy(deep, 50, 2000);
    for (int step : {0, 5, 20}) {
        auto bumped = deep;
        bumped.q.at(50 + step, 2000 + step) = 0.35;
        CHECK(cohort_life_expectancy(bumped, 50, 2000) < base);
    }
}

TEST_CASE("ie indicator: zero when SCR equals BE, positive for lighter "
          "mortality") {
    auto base = flat_base(60, 110, 2000, 0.05);
    auto series = improving_series(60, 110, 2000, 60, 0.05, 0.01);
    auto be = improvement_path(base, series, PathRole::be);
    auto tables_same = build_shocked_tables(be, be, base);
    CHECK(ie_indicator(tables_same, 60, 2000) == doctest::Approx(0.0));

    ImprovementPath scr = be;
    scr.role = PathRole::scr;
    for (auto& v : scr.ir.values()) v = std::max(-0.99, v - 0.10);
    for (int x = 60; x <= 110; ++x) scr.ir.at(x, 2000) = 0.0;
    auto tables = build_shocked_tables(be, scr, base);
    CHECK(ie_indicator(tables, 60, 2000) > 0.0);
    // Cell-wise q(SCR) <= q(BE) implies IE >= 0 at every age.
    for (int x = 60; x <= 80; ++x) CHECK(ie_indicator(tables, x, 2000) >= 0.0);
}

TEST_CASE("portfolio value: geometric annuity, discount limit, weld to LE") {
    auto base = flat_base(60, 110, 2000, 0.5);
    auto series = improving_series(60, 110, 2000, 60, 0.5, 0.0);
    auto be = improvement_path(base, series, PathRole::be);
    auto tables = build_shocked_tables(be, be, base);

    AnnuityPortfolio unit;
    unit.discount_rate = 0.0;
    unit.points.push_back({Gender::total, 60, 1.0, 1.0});
    double value = portfolio_value(unit, tables, PathRole::be);
    CHECK(value == doctest::Approx(1.0).epsilon(1e-12));
    // Weld: zero-discount unit value equals the cohort life expectancy.
    CHECK(value == doctest::Approx(cohort_life_expectancy(tables, PathRole::be,
                                                          60, 2000))
                       .epsilon(1e-12));

    AnnuityPortfolio steep = unit;
    steep.discount_rate = 1e9;
    CHECK(portfolio_value(steep, tables, PathRole::be) ==
          doctest::Approx(0.0).scale(1).epsilon(1e-9));

    AnnuityPortfolio outside = unit;
    outside.points[0].age = 140;
    CHECK_THROWS_AS(portfolio_value(outside, tables, PathRole::be),
                    validation_error);
}

TEST_CASE("portfolio value: lighter SCR mortality is worth at least the BE value") {
    auto base = flat_base(60, 110, 2000, 0.08);
    auto series = improving_series(60, 110, 2000, 60, 0.08, 0.008);
    auto be = improvement_path(base, series, PathRole::be);
    ImprovementPath scr = be;
    scr.role = PathRole::scr;
    for (int x = 60; x <= 110; ++x)
        for (int t = 2001; t <= 2060; ++t) scr.ir.at(x, t) -= 0.05;
    auto tables = build_shocked_tables(be, scr, base);
    AnnuityPortfolio p;
    p.discount_rate = 0.02;
    for (int age : {60, 65, 70, 75, 80}) p.points.push_back({Gender::total, age, 100.0, 10.0});
    CHECK(portfolio_value(p, tables, PathRole::scr) >=
          portfolio_value(p, tables, PathRole::be));
}

TEST_CASE("scr impact: identical calibrations cancel; concentrated books feel "
          "a concentrated correction more") {
    auto base = flat_base(60, 110, 2015, 0.05);
    auto series = improving_series(60, 110, 2015, 60, 0.05, 0.01);
    auto be = improvement_path(base, series, PathRole::be);

    // Crude calibration: deeper shock everywhere, deepest for the cohorts
    // crossing ages 70-75 at valuation (an anomaly-inflated percentile).
    ImprovementPath scr_crude = be;
    scr_crude.role = PathRole::scr;
    ImprovementPath scr_corr = be;
    scr_corr.role = PathRole::scr;
    for (int x = 60; x <= 110; ++x)
        for (int t = 2016; t <= 2075; ++t) {
            double extra = (x >= 70 && x <= 75) ? 0.08 : 0.0;
            scr_crude.ir.at(x, t) -= 0.05 + extra;
            scr_corr.ir.at(x, t) -= 0.05;
        }
    auto crude_cal = build_shocked_tables(be, scr_crude, base);
    auto corr_cal = build_shocked_tables(be, scr_corr, base);

    AnnuityPortfolio flat;
    flat.discount_rate = 0.02;
    for (int age = 60; age <= 90; ++age) flat.points.push_back({Gender::total, age, 1.0, 1.0});
    AnnuityPortfolio concentrated;
    concentrated.discount_rate = 0.02;
    for (int age = 70; age <= 75; ++age)
        concentrated.points.push_back({Gender::total, age, 1.0, 1.0});

    auto same = scr_impact(flat, crude_cal, crude_cal);
    CHECK(same.abs_diff == doctest::Approx(0.0));
    CHECK(same.rel_diff == doctest::Approx(0.0));

    auto impact_flat = scr_impact(flat, crude_cal, corr_cal);
    auto impact_conc = scr_impact(concentrated, crude_cal, corr_cal);
    // Correction reduces the capital need in both cases...
    CHECK(impact_flat.rel_diff < 0.0);
    CHECK(impact_conc.rel_diff < 0.0);
    // ...and relatively more for the concentrated book.
    CHECK(impact_conc.rel_diff < impact_flat.rel_diff);
}

TEST_CASE("stability indicator: identical vintages evolve by exactly zero") {
    auto base_t = flat_base(60, 110, 2015, 0.05);
    auto series_t = improving_series(60, 110, 2015, 60, 0.05, 0.01);
    auto be_t = improvement_path(base_t, series_t, PathRole::be);
    ImprovementPath scr_t = be_t;
    scr_t.role = PathRole::scr;
    for (int x = 60; x <= 110; ++x)
        for (int t = 2016; t <= 2075; ++t) scr_t.ir.at(x, t) -= 0.04;
    auto tables_t = build_shocked_tables(be_t, scr_t, base_t);

    auto base_t1 = flat_base(60, 110, 2016, 0.05);
    auto series_t1 = improving_series(60, 110, 2016, 60, 0.05, 0.01);
    auto be_t1 = improvement_path(base_t1, series_t1, PathRole::be);
    ImprovementPath scr_t1 = be_t1;
    scr_t1.role = PathRole::scr;
    for (int x = 60; x <= 110; ++x)
        for (int t = 2017; t <= 2076; ++t) scr_t1.ir.at(x, t) -= 0.04;
    auto tables_t1 = build_shocked_tables(be_t1, scr_t1, base_t1);

    AnnuityPortfolio p;
    p.discount_rate = 0.02;
    for (int age = 65; age <= 80; ++age) p.points.push_back({Gender::total, age, 2.0, 5.0});
    CHECK(stability_indicator(tables_t, tables_t1, p) ==
          doctest::Approx(0.0).scale(1).epsilon(1e-12));

    // A deeper shock in the new vintage moves the gap and the indicator.
    ImprovementPath scr_deeper = scr_t1;
    for (int x = 60; x <= 110; ++x)
        for (int t = 2017; t <= 2076; ++t) scr_deeper.ir.at(x, t) -= 0.01;
    auto tables_deeper = build_shocked_tables(be_t1, scr_deeper, base_t1);
    CHECK(stability_indicator(tables_t, tables_deeper, p) > 0.0);

    CHECK_THROWS_AS(stability_indicator(tables_t, tables_t, p), validation_error);
}

TEST_CASE("stability: correction keeps the year-on-year assessment steadier "
          "on anomaly fixtures") {
    // Two data vintages (one extra year), each fitted on crude and corrected
    // tables; the corrected calibration's SCR gap should move less.
    auto build_tables = [](const MortalitySurface& surface, int horizon) {
        auto [params, diag] = fit_m1(surface);
        auto dyn = estimate_dynamics(params);
        SimOptions opt;
        auto set = simulate(params, dyn, 400, horizon, 77, opt);
        auto baseline = model_baseline(params, opt);
        auto central = set.paths[0];
        auto scr_q = percentile_table(set, baseline, 0.5);
        auto be = improvement_path(baseline, central, PathRole::be);
        auto scr = improvement_path(baseline, scr_q, PathRole::scr);
        return build_shocked_tables(be, scr, baseline);
    };
    auto clean_full = testutil::gompertz_surface(60, 94, 1980, 2010,
                                                 std::log(0.008), 0.09, 0.012, 2e5);
    testutil::poissonize(clean_full, 31415);
    std::vector<int> cohorts = {1919, 1920, 1925, 1931, 1938};
    std::vector<double> factors = {1.0 / 1.10, 1.10, 1.08, 1.0 / 1.08, 1.09};
    auto crude_full = inject_anomaly(clean_full, cohorts, factors);

    auto crop = [](const MortalitySurface& s, int year_hi) {
        MortalitySurface out;
        out.gender = s.gender;
        out.source = s.source;
        out.deaths = Grid(s.rate.age_min(), s.rate.age_max(), s.rate.year_min(),
                          year_hi);
        out.exposure = out.deaths;
        out.rate = out.deaths;
        out.missing.assign(out.rate.size(), 0);
        for (int x = s.rate.age_min(); x <= s.rate.age_max(); ++x)
            for (int t = s.rate.year_min(); t <= year_hi; ++t) {
                out.deaths.at(x, t) = s.deaths.at(x, t);
                out.exposure.at(x, t) = s.exposure.at(x, t);
                out.rate.at(x, t) = s.rate.at(x, t);
            }
        return out;
    };

    AnnuityPortfolio p;
    p.discount_rate = 0.02;
    for (int age = 65; age <= 85; ++age) p.points.push_back({Gender::total, age, 1.0, 1.0});

    double evo_crude =
        stability_indicator(build_tables(crop(crude_full, 2009), 61),
                            build_tables(crude_full, 60), p);
    double evo_clean =
        stability_indicator(build_tables(crop(clean_full, 2009), 61),
                            build_tables(clean_full, 60), p);
    CHECK(std::fabs(evo_clean) < std::fabs(evo_crude));
}
