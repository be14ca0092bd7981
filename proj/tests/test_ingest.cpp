#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "lexis/ingest.hpp"
#include "lexis/surface.hpp"
#include "lexis/table_io.hpp"

using namespace lexis;

namespace {

const char* kDeathsFixture =
    "France, Deaths (Lexis triangle)\n"
    "\n"
    "  Year     Age   Cohort      Female        Male       Total\n"
    "  1920       5     1914       12.3        14.0        26.3\n"
    "  1920       5     1915        7.0         9.0        16.0\n"
    "  1920       6     1914        5.0         6.0        11.0\n"
    "  1920       6     1913        4.0         4.5         8.5\n"
    "  1921       5     1915       11.0        12.0        23.0\n"
    "  1921       5     1916        6.0         7.0        13.0\n"
    "  1921     110+    1810        1.0         0.0         1.0\n"
    "  1922       5     1916          .         5.0         5.0\n";

const char* kPopulationFixture =
    "France, Population size (1-Jan)\n"
    "\n"
    "  Year     Age      Female        Male       Total\n"
    "  1950       0     400000      420000      820000\n"
    "  1950       1     390000      400000      790000\n"
    "  1951       0     410000      415000      825000\n"
    "  1951       1     395000      405000      800000\n"
    "  1990+      0     100.5       101.5       202.0\n"
    "  1990-      0      99.5       100.5       200.0\n";

const char* kBirthsFixture =
    "France, Births by month\n"
    "\n"
    "Code  Year  Month  Births\n"
    "FRATNP  1946  1  1000\n"
    "FRATNP  1946  2  1000\n"
    "FRATNP  1946  3  1000\n"
    "FRATNP  1946  4  1000\n"
    "FRATNP  1946  5  1000\n"
    "FRATNP  1946  6  1000\n"
    "FRATNP  1946  7  1000\n"
    "FRATNP  1946  8  1000\n"
    "FRATNP  1946  9  1000\n"
    "FRATNP  1946  10  1000\n"
    "FRATNP  1946  11  1000\n"
    "FRATNP  1947  1  900\n"
    "FRATNP  1947  2  900\n"
    "FRATNP  1947  3  900\n"
    "FRATNP  1947  4  900\n"
    "FRATNP  1947  5  900\n"
    "FRATNP  1947  6  900\n"
    "FRATNP  1947  7  900\n"
    "FRATNP  1947  8  900\n"
    "FRATNP  1947  9  900\n"
    "FRATNP  1947  10  900\n"
    "FRATNP  1947  11  900\n"
    "FRATNP  1947  12  900\n"
    "FRATNP  1947  UNK  50\n"
    "FRATNP  1947  TOT  10850\n";

}  // namespace

TEST_CASE("deaths lexis parsing maps fields and flags") {
    testutil::TempDir dir("ingest_deaths");
    testutil::write_file(dir.file("deaths.txt"), kDeathsFixture);
    auto raw = parse_deaths_lexis(dir.file("deaths.txt"));
    REQUIRE(raw.records.size() == 8);

    const auto& first = raw.records.front();
    CHECK(first.year == 1920);
    CHECK(first.age == 5);
    CHECK(first.cohort == 1914);
    CHECK(*first.female == doctest::Approx(12.3));
    CHECK(*first.total == doctest::Approx(26.3));

    const auto& open = raw.records[6];
    CHECK(open.age == 110);
    CHECK(open.open_age);

    const auto& missing = raw.records.back();
    CHECK_FALSE(missing.female.has_value());
    CHECK(*missing.male == doctest::Approx(5.0));
}

TEST_CASE("deaths lexis rejects bad cohorts with location") {
    testutil::TempDir dir("ingest_badcohort");
    testutil::write_file(dir.file("deaths.txt"),
                         "t\n\nYear Age Cohort Female Male Total\n"
                         "1920 5 1916 1 1 2\n");
    CHECK_THROWS_AS(parse_deaths_lexis(dir.file("deaths.txt")), validation_error);
    try {
        parse_deaths_lexis(dir.file("deaths.txt"));
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find(":4") != std::string::npos);
    }
}

TEST_CASE("deaths lexis reports malformed lines with line numbers") {
    testutil::TempDir dir("ingest_malformed");
    testutil::write_file(dir.file("deaths.txt"),
                         "t\n\nYear Age Cohort Female Male Total\n"
                         "1920 5 1914 1 1\n");
    try {
        parse_deaths_lexis(dir.file("deaths.txt"));
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.line() == 4);
    }
}

TEST_CASE("population parsing keeps territorial-change duplicates") {
    testutil::TempDir dir("ingest_pop");
    testutil::write_file(dir.file("pop.txt"), kPopulationFixture);
    auto raw = parse_population(dir.file("pop.txt"));
    REQUIRE(raw.records.size() == 6);
    CHECK(raw.records[0].year == 1950);
    CHECK(*raw.records[0].total == doctest::Approx(820000));
    CHECK(raw.records[4].year == 1990);
    CHECK(raw.records[4].year_suffix == '+');
    CHECK(raw.records[5].year_suffix == '-');
}

TEST_CASE("population rejects duplicate (year, age)") {
    testutil::TempDir dir("ingest_popdup");
    testutil::write_file(dir.file("pop.txt"),
                         "t\n\nYear Age Female Male Total\n"
                         "1950 0 1 1 2\n"
                         "1950 0 2 2 4\n");
    CHECK_THROWS_AS(parse_population(dir.file("pop.txt")), validation_error);
}

TEST_CASE("monthly births: completeness, totals, UNK exclusion") {
    testutil::TempDir dir("ingest_births");
    testutil::write_file(dir.file("births.txt"), kBirthsFixture);
    auto series = parse_monthly_births(dir.file("births.txt"));
    CHECK(series.country == "FRATNP");
    CHECK_FALSE(series.complete(1946));  // 11 months only
    CHECK(series.complete(1947));
    // UNK and TOT rows stay out of the month-1..12 total.
    CHECK(series.total(1947) == doctest::Approx(12 * 900));
}

TEST_CASE("monthly births rejects bad month tokens") {
    testutil::TempDir dir("ingest_badmonth");
    testutil::write_file(dir.file("births.txt"),
                         "t\n\nCode Year Month Births\n"
                         "X 1946 13 100\n");
    CHECK_THROWS_AS(parse_monthly_births(dir.file("births.txt")), parse_error);
}

TEST_CASE("parse -> serialize -> parse is the identity on fixtures") {
    testutil::TempDir dir("ingest_roundtrip");
    testutil::write_file(dir.file("deaths.txt"), kDeathsFixture);
    testutil::write_file(dir.file("pop.txt"), kPopulationFixture);
    testutil::write_file(dir.file("births.txt"), kBirthsFixture);

    auto deaths = parse_deaths_lexis(dir.file("deaths.txt"));
    write_deaths_lexis(deaths, dir.file("deaths2.txt"));
    auto deaths2 = parse_deaths_lexis(dir.file("deaths2.txt"));
    REQUIRE(deaths2.records.size() == deaths.records.size());
    for (std::size_t i = 0; i < deaths.records.size(); ++i) {
        CHECK(deaths2.records[i].year == deaths.records[i].year);
        CHECK(deaths2.records[i].age == deaths.records[i].age);
        CHECK(deaths2.records[i].cohort == deaths.records[i].cohort);
        CHECK(deaths2.records[i].open_age == deaths.records[i].open_age);
        CHECK(deaths2.records[i].female == deaths.records[i].female);
        CHECK(deaths2.records[i].male == deaths.records[i].male);
        CHECK(deaths2.records[i].total == deaths.records[i].total);
    }

    auto pop = parse_population(dir.file("pop.txt"));
    write_population(pop, dir.file("pop2.txt"));
    auto pop2 = parse_population(dir.file("pop2.txt"));
    REQUIRE(pop2.records.size() == pop.records.size());
    for (std::size_t i = 0; i < pop.records.size(); ++i) {
        CHECK(pop2.records[i].year == pop.records[i].year);
        CHECK(pop2.records[i].year_suffix == pop.records[i].year_suffix);
        CHECK(pop2.records[i].total == pop.records[i].total);
    }

    auto births = parse_monthly_births(dir.file("births.txt"));
    write_monthly_births(births, dir.file("births2.txt"));
    auto births2 = parse_monthly_births(dir.file("births2.txt"));
    CHECK(births2.births == births.births);
    CHECK(births2.country == births.country);
}

TEST_CASE("surface csv writes 6 significant digits and round-trips") {
    auto s = testutil::gompertz_surface(60, 65, 2000, 2004);
    testutil::TempDir dir("ingest_csv");
    write_surface_csv(s, dir.file("rates.csv"));
    auto grid = read_grid_csv(dir.file("rates.csv"));
    REQUIRE(grid.same_shape(s.rate));
    for (int x = 60; x <= 65; ++x)
        for (int t = 2000; t <= 2004; ++t)
            CHECK(grid.at(x, t) ==
                  doctest::Approx(s.rate.at(x, t)).epsilon(1e-6));
    // JSON mirror exists alongside.
    CHECK(std::filesystem::exists(dir.file("rates.json")));
}

TEST_CASE("empty surface refuses to serialize") {
    MortalitySurface s;
    testutil::TempDir dir("ingest_empty");
    CHECK_THROWS_AS(write_surface_csv(s, dir.file("x.csv")), validation_error);
}

TEST_CASE("missing markers survive surface write/read without becoming zero") {
    auto s = testutil::gompertz_surface(60, 62, 2000, 2001);
    s.set_missing(61, 2000);
    testutil::TempDir dir("ingest_missing");
    write_surface_json(s, dir.file("s.json"));
    auto back = read_surface_json(dir.file("s.json"));
    CHECK(back.is_missing(61, 2000));
    CHECK_FALSE(back.is_missing(60, 2000));
    CHECK(back.rate.at(60, 2001) == doctest::Approx(s.rate.at(60, 2001)));
}
