#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lexis/ingest.hpp"
#include "lexis/oracle.hpp"
#include "lexis/rng.hpp"
#include "lexis/surface.hpp"

using namespace lexis;

namespace {

RawPopulation two_year_population(double p0, double p1) {
    RawPopulation pop;
    for (int age : {4, 5, 6}) {
        PopulationRecord a;
        a.year = 1950;
        a.age = age;
        a.female = a.male = p0 / 2;
        a.total = p0;
        pop.records.push_back(a);
        PopulationRecord b;
        b.year = 1951;
        b.age = age;
        b.female = b.male = p1 / 2;
        b.total = p1;
        pop.records.push_back(b);
    }
    return pop;
}

RawDeathsLexis deaths_at(int year, int age, double lower, double upper) {
    RawDeathsLexis d;
    DeathsRecord lo;
    lo.year = year;
    lo.age = age;
    lo.cohort = year - age;
    lo.total = lower;
    lo.female = lo.male = lower / 2;
    d.records.push_back(lo);
    DeathsRecord up = lo;
    up.cohort = year - age - 1;
    up.total = upper;
    up.female = up.male = upper / 2;
    d.records.push_back(up);
    return d;
}

}  // namespace

TEST_CASE("build_surface: flat population midpoint exposure") {
    auto pop = two_year_population(1000, 1000);
    auto deaths = deaths_at(1950, 5, 6, 4);
    auto s = build_surface(deaths, pop, Gender::total, 5, 5, 1950, 1950);
    CHECK(s.exposure.at(5, 1950) == doctest::Approx(1000.0));
    CHECK(s.rate.at(5, 1950) == doctest::Approx(0.01));
}

TEST_CASE("build_surface: midpoint average of changing population") {
    auto pop = two_year_population(800, 1200);
    auto deaths = deaths_at(1950, 5, 5, 5);
    auto s = build_surface(deaths, pop, Gender::total, 5, 5, 1950, 1950);
    CHECK(s.exposure.at(5, 1950) == doctest::Approx(1000.0));
    CHECK(s.rate.at(5, 1950) == doctest::Approx(0.01));
}

TEST_CASE("build_surface: missing population year is named") {
    auto pop = two_year_population(1000, 1000);
    auto deaths = deaths_at(1950, 5, 6, 4);
    try {
        build_surface(deaths, pop, Gender::total, 5, 5, 1950, 1951);
        FAIL("expected error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("1952") != std::string::npos);
    }
}

TEST_CASE("to_q: exact analytic values and inverse consistency") {
    auto s = testutil::gompertz_surface(60, 80, 2000, 2010);
    s.rate.at(60, 2000) = 0.0;
    s.rate.at(61, 2000) = std::log(2.0);
    auto q = to_q(s);
    CHECK(q.q.at(60, 2000) == doctest::Approx(0.0));
    CHECK(q.q.at(61, 2000) == doctest::Approx(0.5).epsilon(1e-12));
    for (int x = 60; x <= 80; ++x)
        for (int t = 2000; t <= 2010; ++t) {
            double m = -std::log(1.0 - q.q.at(x, t));
            CHECK(m == doctest::Approx(s.rate.at(x, t)).epsilon(1e-12));
        }
}

TEST_CASE("improvements: constants, halving, and zero flagging") {
    auto s = testutil::gompertz_surface(60, 70, 2000, 2005, std::log(0.01), 0.09, 0.0);
    auto r0 = improvements(s);
    for (int x = 60; x <= 70; ++x)
        for (int t = 2000; t < 2005; ++t)
            CHECK(r0.r.at(x, t) == doctest::Approx(0.0).epsilon(1e-12));

    for (int x = 60; x <= 70; ++x)
        for (int t = 2000; t <= 2005; ++t)
            s.rate.at(x, t) = 0.1 * std::pow(0.5, t - 2000);
    auto r1 = improvements(s);
    for (int x = 60; x <= 70; ++x)
        for (int t = 2000; t < 2005; ++t)
            CHECK(r1.r.at(x, t) == doctest::Approx(-0.5).epsilon(1e-12));

    s.rate.at(60, 2002) = 0.0;
    auto r2 = improvements(s);
    CHECK_FALSE(r2.is_defined(60, 2002));
    CHECK(r2.is_defined(61, 2002));
}

TEST_CASE("improvements: invariant under constant rate scaling") {
    auto s = testutil::gompertz_surface(60, 75, 2000, 2010);
    auto r_base = improvements(s);
    auto scaled = s;
    for (auto& v : scaled.rate.values()) v *= 3.7;
    auto r_scaled = improvements(scaled);
    for (int x = 60; x <= 75; ++x)
        for (int t = 2000; t < 2010; ++t)
            CHECK(r_scaled.r.at(x, t) ==
                  doctest::Approx(r_base.r.at(x, t)).epsilon(1e-13));
}

TEST_CASE("period life expectancy: closed forms") {
    QSurface q;
    q.q = Grid(30, 94, 2000, 2000, 0.0);
    q.missing.assign(q.q.size(), 0);
    CHECK(period_life_expectancy(q, 30, 95, 2000) == doctest::Approx(65.0));

    for (auto& v : q.q.values()) v = 1.0;
    CHECK(period_life_expectancy(q, 30, 95, 2000) == doctest::Approx(0.0));

    QSurface q3;
    q3.q = Grid(30, 32, 2000, 2000, 0.5);
    q3.missing.assign(q3.q.size(), 0);
    CHECK(period_life_expectancy(q3, 30, 33, 2000) ==
          doctest::Approx(0.875).epsilon(1e-12));

    CHECK_THROWS_AS(period_life_expectancy(q3, 30, 33, 1999), validation_error);
}

TEST_CASE("period life expectancy: monotone non-increasing in any q cell") {
    Rng rng(7);
    QSurface q;
    q.q = Grid(30, 49, 2000, 2000);
    q.missing.assign(q.q.size(), 0);
    for (auto& v : q.q.values()) v = 0.01 + 0.3 * rng.uniform();
    double base = period_life_expectancy(q, 30, 50, 2000);
    for (int trial = 0; trial < 50; ++trial) {
        int x = 30 + int(rng.uniform() * 20);
        auto bumped = q;
        bumped.q.at(x, 2000) = std::min(0.999, q.q.at(x, 2000) + 0.05);
        CHECK(period_life_expectancy(bumped, 30, 50, 2000) <= base + 1e-12);
    }
}

TEST_CASE("force of mortality curve is the grid column") {
    auto s = testutil::gompertz_surface(60, 70, 2000, 2005);
    auto curve = force_of_mortality_curve(s, 2003);
    REQUIRE(curve.size() == 11);
    for (int x = 60; x <= 70; ++x)
        CHECK(curve[x - 60] == doctest::Approx(s.rate.at(x, 2003)));
    // Gompertz log-slice is affine in age.
    for (int x = 62; x <= 70; ++x) {
        double second_diff = std::log(curve[x - 60]) - 2 * std::log(curve[x - 61]) +
                             std::log(curve[x - 62]);
        CHECK(second_diff == doctest::Approx(0.0).epsilon(1e-9));
    }
    CHECK_THROWS_AS(force_of_mortality_curve(s, 1990), validation_error);
}

TEST_CASE("death curve: certain death and telescoping mass") {
    QSurface q;
    q.q = Grid(50, 59, 2000, 2000, 1.0);
    q.missing.assign(q.q.size(), 0);
    auto d = death_curve(q, 2000, 1000.0);
    CHECK(d[0] == doctest::Approx(1000.0));
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] == doctest::Approx(0.0));

    Rng rng(11);
    for (auto& v : q.q.values()) v = rng.uniform() * 0.4;
    auto d2 = death_curve(q, 2000, 1000.0);
    double total = 0.0, surv = 1.0;
    for (int x = 50; x <= 59; ++x) surv *= 1.0 - q.q.at(x, 2000);
    for (double v : d2) total += v;
    CHECK(total == doctest::Approx(1000.0 * (1.0 - surv)).epsilon(1e-12));

    CHECK_THROWS_AS(death_curve(q, 2000, 0.0), validation_error);
}

TEST_CASE("close_table reproduces a logistic generator") {
    // q built from a Kannisto hazard: logit m = ln(a) + b x.
    const double ln_a = -11.0, b = 0.11;
    QSurface q;
    q.q = Grid(60, 95, 2000, 2001);
    q.missing.assign(q.q.size(), 0);
    for (int x = 60; x <= 95; ++x)
        for (int t = 2000; t <= 2001; ++t) {
            double m = 1.0 / (1.0 + std::exp(-(ln_a + b * x)));
            q.q.at(x, t) = 1.0 - std::exp(-m);
        }
    auto closed = close_table(q, 95, 120);
    CHECK(closed.q.age_max() == 120);
    for (int x = 96; x < 120; ++x) {
        double m_true = 1.0 / (1.0 + std::exp(-(ln_a + b * x)));
        double q_true = 1.0 - std::exp(-m_true);
        CHECK(closed.q.at(x, 2000) == doctest::Approx(q_true).epsilon(1e-3));
    }
    CHECK(closed.q.at(120, 2000) == 1.0);
    CHECK(closed.q.at(120, 2001) == 1.0);
    // Below the closure start the table is untouched.
    for (int x = 60; x <= 95; ++x)
        CHECK(closed.q.at(x, 2000) == doctest::Approx(q.q.at(x, 2000)));
}

TEST_CASE("close_table: monotone extension on Gompertz input") {
    auto s = testutil::gompertz_surface(60, 95, 2000, 2000);
    auto q = to_q(s);
    auto closed = close_table(q, 95, 120);
    for (int x = 96; x <= 120; ++x)
        CHECK(closed.q.at(x, 2000) >= closed.q.at(x - 1, 2000) - 1e-12);
}

TEST_CASE("missing cells never act as zero in downstream analytics") {
    auto s = testutil::gompertz_surface(60, 80, 2000, 2005);
    s.set_missing(70, 2003);
    auto q = to_q(s);
    CHECK_THROWS_AS(period_life_expectancy(q, 60, 81, 2003), validation_error);
    CHECK_THROWS_AS(death_curve(q, 2003, 1000.0), validation_error);
    CHECK_THROWS_AS(force_of_mortality_curve(s, 2003), validation_error);
    // Other years remain usable.
    CHECK(period_life_expectancy(q, 60, 81, 2004) > 0.0);
}

TEST_CASE("close_table guards") {
    auto s = testutil::gompertz_surface(60, 95, 2000, 2000);
    auto q = to_q(s);
    CHECK_THROWS_AS(close_table(q, 95, 94), validation_error);   // omega too low
    CHECK_THROWS_AS(close_table(q, 63, 120), validation_error);  // band < 5 ages
}

TEST_CASE("build_surface recovers a constant hazard from the micro-simulated "
          "population within Monte-Carlo error") {
    // Kept small here; the acceptance suite runs the N=1e6 version.
    OracleSpec spec;
    spec.seed = 99;
    spec.horizon_year = 1958;
    spec.hazard_by_age = {0.02};
    for (int y = 1950; y <= 1955; ++y)
        spec.cohorts.push_back(CohortSpec::uniform(y, 200000));
    auto oracle = simulate_population(spec);
    auto s = build_surface(oracle.deaths, oracle.population, Gender::total, 1, 3,
                           1955, 1956);
    for (int x = 1; x <= 3; ++x)
        for (int t = 1955; t <= 1956; ++t)
            CHECK(s.rate.at(x, t) == doctest::Approx(0.02).epsilon(0.05));
}
